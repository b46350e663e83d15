// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. TRANSFG_THREADS caps evaluation and ablation
// workers; training itself is single-threaded.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "transfg/image_io.hpp"
#include "transfg/losses.hpp"
#include "transfg/psm.hpp"
#include "transfg/trainer.hpp"
#include "transfg/viz.hpp"

using namespace transfg;
using transfg::testing::gradcheck;
using transfg::testing::random_tensor;
using transfg::testing::weighted_sum;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path work_dir() {
  auto dir = fs::temp_directory_path() / "transfg_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// 1 -------------------------------------------------------------------------
Outcome patch_count() {
  const auto t0 = Clock::now();
  Outcome o;
  o.pass = count_patches({448, 448, 3, 16, 12}).count == 1369 &&
           count_patches({304, 304, 3, 16, 12}).count == 625;
  std::size_t configs = 0, mismatches = 0;
  for (std::size_t p = 1; p <= 8; ++p) {
    for (std::size_t s = 1; s <= p; ++s) {
      for (std::size_t h = p; h <= 64; ++h) {
        for (std::size_t w = p; w <= 64; ++w) {
          std::size_t windows = 0;
          for (std::size_t r = 0; r + p <= h; r += s) {
            for (std::size_t c = 0; c + p <= w; c += s) ++windows;
          }
          ++configs;
          mismatches += count_patches({h, w, 1, p, s}).count != windows;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  o.pass = o.pass && mismatches == 0 && secs < 1.0;
  o.detail = "N(448,16,12)=1369, N(304,16,12)=625; " + std::to_string(configs) +
             " configs vs enumeration, " + std::to_string(mismatches) + " mismatches; " +
             fmt("%.2fs", secs);
  return o;
}

// 2 -------------------------------------------------------------------------
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double op_worst = 0.0, model_worst = 0.0;
  auto track = [&](double& worst, double err) { worst = std::max(worst, err); };
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t m = 1 + rng.below(4), k = 1 + rng.below(4), n = 3 + rng.below(3);
    auto a = random_tensor({m, k}, rng);
    auto b = random_tensor({k, n}, rng);
    auto bt = random_tensor({n, k}, rng);
    auto bias = random_tensor({n}, rng);
    auto x = random_tensor({m, n}, rng, -2, 2);
    auto y = random_tensor({m, n}, rng, -2, 2);
    auto gain = random_tensor({n}, rng, 0.5, 1.5);
    auto w = random_tensor({m, n}, rng, -1, 1, false);
    std::vector<std::size_t> labels(m), rows(2 + rng.below(4));
    for (auto& l : labels) l = rng.below(n);
    for (auto& r : rows) r = rng.below(m);
    auto wr = random_tensor({rows.size(), n}, rng, -1, 1, false);
    const std::size_t batch = 1 + rng.below(2), t = 1 + rng.below(4), heads = 1 + rng.below(2);
    const std::size_t d = heads * (1 + rng.below(2));
    auto qkv = random_tensor({batch * t, 3 * d}, rng, -1.5, 1.5);
    auto wq = random_tensor({batch * t, d}, rng, -1, 1, false);
    auto patches = random_tensor({batch * t, d}, rng);
    auto cls = random_tensor({1, d}, rng);
    auto pos = random_tensor({t + 1, d}, rng);
    auto wp = random_tensor({batch * (t + 1), d}, rng, -1, 1, false);
    auto z = random_tensor({m + 1, k + 1}, rng);
    std::vector<std::size_t> zl(m + 1);
    for (auto& l : zl) l = rng.below(2);

    using T = Tape<double>;
    track(op_worst, gradcheck([&](T& tp) { return weighted_sum(tp, matmul(tp, a, b), w); }, {a, b}));
    track(op_worst, gradcheck([&](T& tp) { return weighted_sum(tp, matmul_transposed(tp, a, bt), w); }, {a, bt}));
    track(op_worst, gradcheck([&](T& tp) { return weighted_sum(tp, linear(tp, a, b, bias), w); }, {a, b, bias}));
    track(op_worst, gradcheck([&](T& tp) { return weighted_sum(tp, add(tp, x, y), w); }, {x, y}));
    track(op_worst, gradcheck([&](T& tp) { return weighted_sum(tp, mul(tp, x, y), w); }, {x, y}));
    track(op_worst, gradcheck([&](T& tp) { return sum(tp, x); }, {x}));
    track(op_worst, gradcheck([&](T& tp) { return weighted_sum(tp, softmax_rows(tp, x), w); }, {x}));
    track(op_worst, gradcheck([&](T& tp) { return weighted_sum(tp, layer_norm(tp, x, gain, bias), w); }, {x, gain, bias}));
    track(op_worst, gradcheck([&](T& tp) { return weighted_sum(tp, gelu(tp, x), w); }, {x}));
    track(op_worst, gradcheck([&](T& tp) { return weighted_sum(tp, l2_normalize(tp, x), w); }, {x}));
    track(op_worst, gradcheck([&](T& tp) { return cross_entropy(tp, x, labels); }, {x}));
    track(op_worst, gradcheck([&](T& tp) { return weighted_sum(tp, gather_rows(tp, x, rows), wr); }, {x}));
    track(op_worst, gradcheck([&](T& tp) { return weighted_sum(tp, prepend_cls_add_pos(tp, patches, cls, pos, batch), wp); }, {patches, cls, pos}));
    track(op_worst, gradcheck([&](T& tp) { return weighted_sum(tp, multi_head_attention(tp, qkv, batch, t, heads).values, wq); }, {qkv}));
    track(op_worst, gradcheck([&](T& tp) { return contrastive_loss(tp, z, zl, 0.4); }, {z}));
  }

  ModelConfig cfg;
  cfg.patch = {5, 5, 1, 2, 1};
  cfg.encoder = {2, 2, 8, 4};
  cfg.num_classes = 3;
  for (int seed = 0; seed < 100; ++seed) {
    auto params = ModelParams<double>::init(cfg, seed);
    Rng rng(1000 + seed);
    for (auto [name, p] : params.named()) {
      for (auto& v : p.data()) v += rng.uniform(-0.1, 0.1);
    }
    auto images = random_tensor({3, 5, 5, 1}, rng, 0, 1, false);
    std::vector<std::size_t> labels{0, 1, 0};
    std::vector<Tensor<double>> handles;
    for (const auto& [name, p] : params.named()) handles.push_back(p);
    track(model_worst, gradcheck(
                           [&](Tape<double>& tp) {
                             auto fwd = forward(tp, params, cfg, images);
                             return total_loss(tp, fwd.logits, labels, fwd.cls_tokens, kDefaultMargin).total;
                           },
                           handles));
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = op_worst < 1e-5 && model_worst < 1e-4 && secs < 120.0;
  o.detail = "100 seeds; worst op rel err " + fmt("%.2e", op_worst) + " (< 1e-5), end-to-end " +
             fmt("%.2e", model_worst) + " (< 1e-4); " + fmt("%.1fs", secs);
  return o;
}

// 3 -------------------------------------------------------------------------
Outcome rollout_properties() {
  const auto t0 = Clock::now();
  double worst_sum = 0.0, worst_order = 0.0;
  std::size_t stacks = 0;
  auto product = [](const Tensor<double>& a, const Tensor<double>& b) {
    const std::size_t n = a.dim(0);
    Tensor<double> c({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t j = 0; j < n; ++j) c(i, j) += a(i, k) * b(k, j);
      }
    }
    return c;
  };
  for (int seed = 0; seed < 500; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 + rng.below(16), layers = 1 + rng.below(8), heads = 1 + rng.below(4);
    std::vector<std::vector<Tensor<double>>> m(layers);
    for (auto& layer : m) {
      for (std::size_t h = 0; h < heads; ++h) {
        Tensor<double> a({n, n});
        for (std::size_t r = 0; r < n; ++r) {
          double s = 0;
          for (std::size_t c = 0; c < n; ++c) s += (a(r, c) = std::pow(rng.uniform(), 4.0));
          for (std::size_t c = 0; c < n; ++c) a(r, c) /= s;
        }
        layer.push_back(a);
      }
    }
    const auto r = rollout(AttentionStack<double>::from_matrices(m));
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) s += r[h](i, j);
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
      auto right = m[0][h];
      for (std::size_t l = 1; l < layers; ++l) right = product(m[l][h], right);
      auto left = m[layers - 1][h];
      for (std::size_t l = layers - 1; l-- > 0;) left = product(left, m[l][h]);
      for (std::size_t i = 0; i < n * n; ++i) {
        worst_order = std::max(worst_order, std::abs(left[i] - right[i]));
        worst_order = std::max(worst_order, std::abs(r[h][i] - right[i]));
      }
    }
    ++stacks;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_sum < 1e-5 && worst_order < 1e-6 && secs < 10.0;
  o.detail = std::to_string(stacks) + " stacks up to 17x17 x 8 layers; max |row sum - 1| " +
             fmt("%.1e", worst_sum) + ", max order disagreement " + fmt("%.1e", worst_order) +
             "; " + fmt("%.2fs", secs);
  return o;
}

// 4 -------------------------------------------------------------------------
Outcome contrastive_oracle() {
  auto loss = [](const Tensor<double>& z, std::vector<std::size_t> labels, double alpha) {
    auto tape = Tape<double>::inference();
    return contrastive_loss(tape, z, labels, alpha).item();
  };
  const double s = std::sqrt(1 - 0.81);
  const double h1 = loss(Tensor<double>({2, 2}, {0.6, 0.8, 0.6, 0.8}), {1, 1}, 0.4);
  const double h2 = loss(Tensor<double>({2, 2}, {1, 0, 0, 1}), {0, 1}, 0.4);
  const double h3 = loss(Tensor<double>({2, 2}, {1, 0, 0.9, s}), {0, 1}, 0.4);
  const double hand_err = std::max({std::abs(h1), std::abs(h2), std::abs(h3 - 0.25)});

  double worst = 0.0;
  for (int seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    const std::size_t b = 1 + rng.below(10), d = 1 + rng.below(8), classes = 1 + rng.below(4);
    auto z = random_tensor({b, d}, rng, -3, 3, false);
    std::vector<std::size_t> labels(b);
    for (auto& l : labels) l = rng.below(classes);
    const double alpha = std::array{0.0, 0.2, 0.4, 0.6}[rng.below(4)];
    double ref = 0;
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < b; ++j) {
        double dot = 0, ni = 0, nj = 0;
        for (std::size_t c = 0; c < d; ++c) {
          dot += z(i, c) * z(j, c);
          ni += z(i, c) * z(i, c);
          nj += z(j, c) * z(j, c);
        }
        const double sim = dot / std::sqrt(ni * nj);
        ref += labels[i] == labels[j] ? 1.0 - sim : std::max(sim - alpha, 0.0);
      }
    }
    ref /= static_cast<double>(b * b);
    worst = std::max(worst, std::abs(loss(z, labels, alpha) - ref));
  }
  Outcome o;
  o.pass = hand_err < 1e-12 && worst < 1e-10;
  o.detail = "hand cases (0, 0, 0.25) max err " + fmt("%.1e", hand_err) +
             "; 1000 random batches vs O(B^2) reference max err " + fmt("%.1e", worst);
  return o;
}

struct ToyRun {
  TrainConfig cfg;
  TrainResult result;
  double seconds = 0;
  EvalResult train_eval, test_eval;
};

ToyRun toy_run(std::uint64_t seed, const fs::path& dir) {
  ToyRun r;
  r.cfg.seed = seed;
  r.cfg.data.seed = seed;
  r.cfg.output_dir = dir.string();
  const auto t0 = Clock::now();
  r.result = run_training(r.cfg);
  r.seconds = seconds_since(t0);
  const auto data = generate(r.cfg.data);
  r.train_eval = evaluate(r.result.params, r.cfg.model_config(), data.train, thread_budget());
  r.test_eval = evaluate(r.result.params, r.cfg.model_config(), data.test, thread_budget());
  return r;
}

// 5 -------------------------------------------------------------------------
Outcome toy_overfit(const ToyRun& run) {
  Outcome o;
  const double acc = run.train_eval.accuracy;
  o.pass = acc >= 0.95 && run.cfg.steps <= 300 && run.seconds < 300.0;
  o.detail = "train accuracy " + fmt("%.4f", acc) + " after " + std::to_string(run.cfg.steps) +
             " steps (>= 0.95), training " + fmt("%.1fs", run.seconds) + " on one thread (< 300s)";
  return o;
}

// 6 -------------------------------------------------------------------------
Outcome localization(const std::vector<const ToyRun*>& runs) {
  double mean = 0.0;
  std::string each;
  for (const auto* r : runs) {
    mean += r->test_eval.localization_hit_rate;
    each += (each.empty() ? "" : ", ") + fmt("%.3f", r->test_eval.localization_hit_rate);
  }
  mean /= static_cast<double>(runs.size());
  const auto& cfg = runs.front()->cfg;
  const double baseline = random_hit_probability(cfg.data, cfg.patch_config(), cfg.heads);
  Outcome o;
  o.pass = mean > 2.0 * baseline;
  o.detail = "held-out hit rate over 3 seeds [" + each + "] mean " + fmt("%.3f", mean) +
             " vs 2 x random baseline " + fmt("%.3f", 2.0 * baseline);
  return o;
}

// 7 -------------------------------------------------------------------------
Outcome ablation(const fs::path& dir) {
  // The harness is exercised at a reduced step count; the grid, files and
  // determinism contract do not depend on it.
  TrainConfig base;
  base.steps = 20;
  const auto t0 = Clock::now();
  const auto rows_a = run_ablation(base, dir / "ablate_a", thread_budget());
  run_ablation(base, dir / "ablate_b", thread_budget());
  const auto csv_a = slurp(dir / "ablate_a" / "results.csv");
  const auto csv_b = slurp(dir / "ablate_b" / "results.csv");
  std::istringstream lines(csv_a);
  std::string line;
  std::getline(lines, line);
  const bool header_ok = line.rfind("cell,group,patch_split,psm,contrastive,alpha,", 0) == 0;
  std::size_t parsed = 0;
  std::vector<double> alphas;
  while (std::getline(lines, line)) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() != 11) continue;
    try {
      for (std::size_t k : {7u, 8u, 9u, 10u}) (void)std::stod(fields[k]);
      if (fields[1] == "margin") alphas.push_back(std::stod(fields[5]));
      ++parsed;
    } catch (const std::exception&) {
    }
  }
  Outcome o;
  o.pass = rows_a.size() == 12 && parsed == 12 && header_ok && csv_a == csv_b &&
           alphas == std::vector<double>{0.0, 0.2, 0.4, 0.6};
  o.detail = std::to_string(parsed) + "/12 rows parsed, margin sweep {0,0.2,0.4,0.6}, rerun " +
             (csv_a == csv_b ? "bitwise identical" : "DIFFERS") + " (" +
             std::to_string(base.steps) + " steps per cell, " + fmt("%.1fs", seconds_since(t0)) + ")";
  return o;
}

// 8 -------------------------------------------------------------------------
Outcome determinism(const ToyRun& a, const fs::path& other_dir) {
  auto cfg = a.cfg;
  cfg.output_dir = other_dir.string();
  run_training(cfg);
  bool same = true;
  std::string files;
  for (const char* f : {"metrics.csv", "model.tfgt", "model.manifest"}) {
    const bool eq = slurp(fs::path(a.cfg.output_dir) / f) == slurp(other_dir / f) &&
                    !slurp(other_dir / f).empty();
    same = same && eq;
    files += std::string(files.empty() ? "" : ", ") + f + (eq ? " identical" : " DIFFER");
  }
  Outcome o;
  o.pass = same;
  o.detail = "two default runs: " + files;
  return o;
}

// 9 -------------------------------------------------------------------------
Outcome visualization(const fs::path& dir) {
  bool ok = true;
  std::string notes;
  Rng rng(9);
  Tensor<double> img({6, 5, 3});
  for (auto& v : img.data()) v = static_cast<double>(rng.below(256)) / 255.0;
  const auto path = dir / "viz.ppm";
  write_ppm(img, path);
  const auto bytes = slurp(path);
  const std::string header = "P6\n5 6\n255\n";
  ok = ok && bytes.rfind(header, 0) == 0 && bytes.size() == header.size() + 6 * 5 * 3;
  const auto back = read_ppm(path);
  for (std::size_t i = 0; i < img.numel(); ++i) ok = ok && back[i] == img[i];
  notes += "header+payload length ok, round trip exact";

  const auto map = splat_patch_values(std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9}, {4, 4, 1, 2, 1});
  const double expect[16] = {1.0, 1.5, 2.5, 3.0, 2.5, 3.0, 4.0, 4.5,
                             5.5, 6.0, 7.0, 7.5, 7.0, 7.5, 8.5, 9.0};
  bool splat_ok = true;
  for (std::size_t i = 0; i < 16; ++i) splat_ok = splat_ok && map.values[i] == expect[i];
  ok = ok && splat_ok;
  notes += std::string(", 4x4/P=2/S=1 splat ") + (splat_ok ? "exact" : "WRONG");

  // rendered overlays are valid PPMs too
  SelectionResult<double> sel;
  for (std::size_t h = 0; h < 2; ++h) {
    Tensor<double> m({10, 10});
    for (std::size_t i = 0; i < 10; ++i) {
      for (std::size_t j = 0; j < 10; ++j) m(i, j) = rng.uniform() + (i == j);
    }
    sel.rollout.push_back(m);
  }
  sel = select(sel.rollout);
  OverlayRequest req{Tensor<double>::filled({4, 4, 1}, 0.6), sel, {4, 4, 1, 2, 1}, OverlayMode::kAttentionMap, 2};
  for (auto mode : {OverlayMode::kAttentionMap, OverlayMode::kSelectedPatches}) {
    req.mode = mode;
    const auto out = render(req);
    write_ppm(out, dir / "overlay.ppm");
    const auto rb = read_ppm(dir / "overlay.ppm");
    ok = ok && rb.shape()[0] == 4 && rb.shape()[1] == 4;
  }
  Outcome o;
  o.pass = ok;
  o.detail = notes;
  return o;
}

}  // namespace

int main() {
  const auto dir = work_dir();
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "patch count", patch_count);
  report(2, "gradient suite", gradient_suite);
  report(3, "rollout properties", rollout_properties);
  report(4, "contrastive oracle", contrastive_oracle);

  std::vector<ToyRun> runs;
  std::string train_error;
  try {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      runs.push_back(toy_run(seed, dir / ("toy_seed" + std::to_string(seed))));
    }
  } catch (const std::exception& e) {
    train_error = e.what();
  }
  auto need_runs = [&](std::size_t n) {
    if (runs.size() < n) throw std::runtime_error("toy training failed: " + train_error);
  };
  report(5, "toy overfit", [&] { need_runs(1); return toy_overfit(runs[0]); });
  report(6, "psm localization", [&] {
    need_runs(3);
    return localization({&runs[0], &runs[1], &runs[2]});
  });
  report(7, "ablation harness", [&] { return ablation(dir); });
  report(8, "determinism", [&] { need_runs(1); return determinism(runs[0], dir / "toy_seed0_again"); });
  report(9, "visualization", [&] { return visualization(dir); });

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
