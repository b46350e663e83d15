#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "transfg/errors.hpp"
#include "transfg/trainer.hpp"

using namespace transfg;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.dim = 16;
  cfg.mlp_ratio = 2;
  cfg.batch_size = 8;
  cfg.steps = 6;
  cfg.data.image_size = 16;
  cfg.data.glyph_size = 4;
  cfg.data.samples_per_class = 4;
  cfg.data.test_samples_per_class = 2;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "transfg_trainer_tests" / name;
  fs::remove_all(dir);
  return dir;
}

std::vector<std::vector<float>> snapshot(const ModelParams<float>& p) {
  std::vector<std::vector<float>> out;
  for (const auto& [name, t] : p.named()) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

}  // namespace

TEST_CASE("config key/value round trip and validation") {
  auto cfg = tiny_config();
  cfg.learning_rate = 0.123456789012345;
  cfg.overlap = false;
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : cfg.to_key_values()) kv[k] = v;
  const auto back = TrainConfig::from_key_values(kv);
  CHECK(back.learning_rate == cfg.learning_rate);
  CHECK(back.hash() == cfg.hash());
  CHECK_FALSE(back.overlap);
  CHECK(back.patch_config().stride == back.patch);

  CHECK_THROWS_AS(TrainConfig::from_key_values({{"bogus", "1"}}), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_key_values({{"steps", "-3"}}), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_key_values({{"psm", "maybe"}}), ConfigError);

  auto bad = tiny_config();
  bad.stride = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.contrastive = false;
  CHECK_NOTHROW(bad.validate());
  bad = tiny_config();
  bad.alpha = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  const auto path = scratch("cfg") / "config.txt";
  fs::create_directories(path.parent_path());
  save_config(cfg, path);
  CHECK(load_config(path).hash() == cfg.hash());
}

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(0.1, 0, 300) == 0.1);
  CHECK(cosine_lr(0.1, 299, 300) <= 1e-3 * 0.1);
  CHECK(cosine_lr(0.1, 150, 301) == doctest::Approx(0.05).epsilon(1e-12));
  double prev = 1.0;
  for (std::size_t s = 0; s < 50; ++s) {
    const double lr = cosine_lr(1.0, s, 50);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("first SGD step is w - lr*g") {
  Tensor<double> w({2}, {1.0, -2.0}, true);
  std::vector<std::pair<std::string, Tensor<double>>> named{{"w", w}};
  w.grad()[0] = 0.5;
  w.grad()[1] = -4.0;
  SgdMomentum opt(0.9);
  opt.step(named, 1e-3);
  CHECK(w[0] == 1.0 - 1e-3 * 0.5);
  CHECK(w[1] == -2.0 + 1e-3 * 4.0);
  // second step with the same gradient uses v = 0.9 g + g
  opt.step(named, 1e-3);
  CHECK(w[0] == doctest::Approx(1.0 - 1e-3 * 0.5 - 1e-3 * 1.9 * 0.5).epsilon(1e-14));
}

TEST_CASE("gradient clipping") {
  Tensor<double> w({2}, {0, 0}, true);
  std::vector<std::pair<std::string, Tensor<double>>> named{{"w", w}};
  w.grad()[0] = 3;
  w.grad()[1] = 4;
  CHECK(clip_grad_norm(named, 10.0) == 5.0);
  CHECK(w.grad()[0] == 3.0);
  CHECK(clip_grad_norm(named, 1.0) == 5.0);
  CHECK(w.grad()[0] == doctest::Approx(0.6));
  CHECK(w.grad()[1] == doctest::Approx(0.8));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  auto cfg = tiny_config();
  cfg.learning_rate = 0.0;
  const auto data = generate(cfg.data);
  const auto init = ModelParams<float>::init(cfg.model_config(), cfg.seed);
  const auto result = train(cfg, data.train);
  CHECK(snapshot(result.params) == snapshot(init));
  CHECK(result.trace.size() == cfg.steps);
}

TEST_CASE("training is bitwise deterministic") {
  auto cfg = tiny_config();
  cfg.output_dir = scratch("det_a").string();
  run_training(cfg);
  auto cfg_b = cfg;
  cfg_b.output_dir = scratch("det_b").string();
  run_training(cfg_b);
  for (const char* f : {"metrics.csv", "model.tfgt", "model.manifest", "config.txt"}) {
    CHECK(slurp(fs::path(cfg.output_dir) / f) == slurp(fs::path(cfg_b.output_dir) / f));
  }
  const auto csv = slurp(fs::path(cfg.output_dir) / "metrics.csv");
  CHECK(csv.rfind("step,lr,loss_cross,loss_con,train_acc\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(cfg.steps + 1));
}

TEST_CASE("checkpoint reload and evaluation") {
  auto cfg = tiny_config();
  cfg.output_dir = scratch("ckpt").string();
  const auto result = run_training(cfg);
  const auto ck = load_run(cfg.output_dir);
  CHECK(ck.config.hash() == cfg.hash());
  CHECK(snapshot(ck.params) == snapshot(result.params));

  const auto data = generate(cfg.data);
  const auto a = evaluate(ck.params, cfg.model_config(), data.test, 1);
  const auto b = evaluate(ck.params, cfg.model_config(), data.test, 1);
  const auto c = evaluate(ck.params, cfg.model_config(), data.test, 3);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.per_class_accuracy == c.per_class_accuracy);
  CHECK(a.localization_hit_rate == c.localization_hit_rate);
  CHECK(a.samples == data.test.size());

  auto other = cfg;
  other.dim = 8;
  auto tensors = load_checkpoint(fs::path(cfg.output_dir) / "model");
  CHECK_THROWS_AS(ModelParams<float>::from_checkpoint(tensors, other.model_config()), DimensionError);
  CHECK_THROWS_AS(load_run(scratch("empty")), IoError);
}

TEST_CASE("random-init accuracy is near chance") {
  TrainConfig cfg;
  cfg.data.samples_per_class = 64;  // 1024 samples over 16 classes
  const auto data = generate(cfg.data);
  const auto params = ModelParams<float>::init(cfg.model_config(), 77);
  const auto r = evaluate(params, cfg.model_config(), data.train, thread_budget());
  CHECK(r.samples == 1024);
  CHECK(std::abs(r.accuracy - 1.0 / 16.0) < 0.05);
}

TEST_CASE("without PSM the model is plain ViT classification") {
  ModelConfig cfg;
  cfg.patch = {8, 8, 1, 4, 4};
  cfg.encoder = {3, 2, 8, 2};
  cfg.num_classes = 4;
  cfg.part_selection = false;
  const auto params = ModelParams<double>::init(cfg, 5);
  Rng rng(5);
  Tensor<double> images({2, 8, 8, 1});
  for (auto& v : images.data()) v = rng.uniform();
  auto tape = Tape<double>::inference();
  const auto fwd = forward(tape, params, cfg, images);

  auto z = embed(tape, extract_patches_batch(images, cfg.patch), params.embed, 2);
  for (const auto& layer : params.layers) z = encoder_layer(tape, z, layer, 2).tokens;
  std::vector<std::size_t> cls_rows{0, z.length};
  auto cls = gather_rows(tape, z.tokens, cls_rows);
  auto logits = linear(tape, cls, params.head.weight, params.head.bias);
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    CHECK(fwd.logits[i] == doctest::Approx(logits[i]).epsilon(1e-12));
  }
}

TEST_CASE("ablation grid structure") {
  const auto grid = ablation_grid();
  REQUIRE(grid.size() == 12);
  std::size_t grid_cells = 0;
  for (const auto& c : grid) grid_cells += c.group == "grid";
  CHECK(grid_cells == 8);
  const std::vector<double> alphas{grid[8].alpha, grid[9].alpha, grid[10].alpha, grid[11].alpha};
  CHECK(alphas == std::vector<double>{0.0, 0.2, 0.4, 0.6});
  std::set<std::tuple<bool, bool, bool>> combos;
  for (std::size_t i = 0; i < 8; ++i) combos.insert({grid[i].overlap, grid[i].psm, grid[i].contrastive});
  CHECK(combos.size() == 8);

  auto base = tiny_config();
  const auto cell = apply_cell(base, grid[0]);
  CHECK(cell.hash() != apply_cell(base, grid[1]).hash());
}

TEST_CASE("ablation runs and reproduces") {
  auto base = tiny_config();
  base.steps = 2;
  const auto dir_a = scratch("abl_a");
  const auto dir_b = scratch("abl_b");
  const auto rows = run_ablation(base, dir_a, 2);
  run_ablation(base, dir_b, 1);
  CHECK(rows.size() == 12);
  const auto csv = slurp(dir_a / "results.csv");
  CHECK(csv == slurp(dir_b / "results.csv"));
  std::istringstream lines(csv);
  std::string header, line;
  std::getline(lines, header);
  CHECK(header ==
        "cell,group,patch_split,psm,contrastive,alpha,config_hash,final_loss,train_acc,test_acc,"
        "localization_hit_rate");
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == 10);
    ++n;
  }
  CHECK(n == 12);
}
