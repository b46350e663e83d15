#include "transfg/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include "transfg/losses.hpp"

namespace transfg {

namespace {

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_bool(bool v) { return v ? "true" : "false"; }

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config key " + key + ": expected a boolean, got '" + v + "'");
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    const auto out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected a non-negative integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected a number, got '" + v + "'");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (layers == 0 || heads == 0 || dim == 0 || mlp_ratio == 0 || patch == 0 || stride == 0 ||
      batch_size == 0 || steps == 0) {
    throw ConfigError("train config: sizes and counts must be positive");
  }
  if (stride > patch) throw ConfigError("train config: stride must not exceed patch");
  if (!(learning_rate >= 0.0)) throw ConfigError("train config: learning-rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train config: momentum must be in [0, 1)");
  if (!(max_grad_norm >= 0.0)) throw ConfigError("train config: max-grad-norm must be >= 0");
  if (contrastive && batch_size < 2) {
    throw ConfigError("train config: the contrastive loss needs batch-size >= 2");
  }
  ContrastiveConfig{alpha}.validate();
  data.validate();
  model_config().validate();
}

PatchConfig TrainConfig::patch_config() const {
  PatchConfig p;
  p.height = data.image_size;
  p.width = data.image_size;
  p.channels = data.channels;
  p.patch = patch;
  p.stride = overlap ? stride : patch;
  return p;
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.encoder = {layers, heads, dim, mlp_ratio};
  m.patch = patch_config();
  m.num_classes = data.num_classes();
  m.part_selection = psm;
  m.rollout.add_identity = rollout_identity;
  return m;
}

std::vector<std::pair<std::string, std::string>> TrainConfig::to_key_values() const {
  return {
      {"layers", std::to_string(layers)},
      {"heads", std::to_string(heads)},
      {"dim", std::to_string(dim)},
      {"mlp-ratio", std::to_string(mlp_ratio)},
      {"patch", std::to_string(patch)},
      {"stride", std::to_string(stride)},
      {"overlap", format_bool(overlap)},
      {"psm", format_bool(psm)},
      {"rollout-identity", format_bool(rollout_identity)},
      {"learning-rate", format_double(learning_rate)},
      {"momentum", format_double(momentum)},
      {"batch-size", std::to_string(batch_size)},
      {"steps", std::to_string(steps)},
      {"max-grad-norm", format_double(max_grad_norm)},
      {"alpha", format_double(alpha)},
      {"contrastive", format_bool(contrastive)},
      {"seed", std::to_string(seed)},
      {"image-size", std::to_string(data.image_size)},
      {"channels", std::to_string(data.channels)},
      {"superclasses", std::to_string(data.num_superclasses)},
      {"subclasses", std::to_string(data.subclasses_per_superclass)},
      {"glyph-size", std::to_string(data.glyph_size)},
      {"samples-per-class", std::to_string(data.samples_per_class)},
      {"test-samples-per-class", std::to_string(data.test_samples_per_class)},
      {"noise-std", format_double(data.noise_std)},
      {"data-seed", std::to_string(data.seed)},
  };
}

TrainConfig TrainConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  for (const auto& [key, v] : kv) {
    if (key == "layers") c.layers = parse_size(key, v);
    else if (key == "heads") c.heads = parse_size(key, v);
    else if (key == "dim") c.dim = parse_size(key, v);
    else if (key == "mlp-ratio") c.mlp_ratio = parse_size(key, v);
    else if (key == "patch") c.patch = parse_size(key, v);
    else if (key == "stride") c.stride = parse_size(key, v);
    else if (key == "overlap") c.overlap = parse_bool(key, v);
    else if (key == "psm") c.psm = parse_bool(key, v);
    else if (key == "rollout-identity") c.rollout_identity = parse_bool(key, v);
    else if (key == "learning-rate") c.learning_rate = parse_real(key, v);
    else if (key == "momentum") c.momentum = parse_real(key, v);
    else if (key == "batch-size") c.batch_size = parse_size(key, v);
    else if (key == "steps") c.steps = parse_size(key, v);
    else if (key == "max-grad-norm") c.max_grad_norm = parse_real(key, v);
    else if (key == "alpha") c.alpha = parse_real(key, v);
    else if (key == "contrastive") c.contrastive = parse_bool(key, v);
    else if (key == "seed") c.seed = parse_size(key, v);
    else if (key == "image-size") c.data.image_size = parse_size(key, v);
    else if (key == "channels") c.data.channels = parse_size(key, v);
    else if (key == "superclasses") c.data.num_superclasses = parse_size(key, v);
    else if (key == "subclasses") c.data.subclasses_per_superclass = parse_size(key, v);
    else if (key == "glyph-size") c.data.glyph_size = parse_size(key, v);
    else if (key == "samples-per-class") c.data.samples_per_class = parse_size(key, v);
    else if (key == "test-samples-per-class") c.data.test_samples_per_class = parse_size(key, v);
    else if (key == "noise-std") c.data.noise_std = parse_real(key, v);
    else if (key == "data-seed") c.data.seed = parse_size(key, v);
    else if (key == "output-dir") c.output_dir = v;
    else throw ConfigError("unknown config key '" + key + "'");
  }
  return c;
}

std::uint64_t TrainConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [k, v] : to_key_values()) {
    for (char ch : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ull;
    }
  }
  return h;
}

void save_config(const TrainConfig& cfg, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& [k, v] : cfg.to_key_values()) os << k << '=' << v << '\n';
  if (!os) throw IoError("write failed for " + path.string());
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string() + " for reading");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed config line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return TrainConfig::from_key_values(kv);
}

double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps) {
  if (total_steps <= 1) return base_lr;
  const double t = static_cast<double>(std::min(step, total_steps - 1)) /
                   static_cast<double>(total_steps - 1);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
void SgdMomentum::step(std::vector<std::pair<std::string, Tensor<T>>>& params, double lr) {
  if (velocity_.empty()) {
    for (const auto& [name, p] : params) velocity_.emplace_back(p.numel(), 0.0);
  }
  if (velocity_.size() != params.size()) throw ContractError("optimizer parameter set changed");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].second;
    auto g = p.grad();
    auto& v = velocity_[k];
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = momentum_ * v[i] + static_cast<double>(g[i]);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * v[i]);
    }
  }
}

template <typename T>
double clip_grad_norm(std::vector<std::pair<std::string, Tensor<T>>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    for (auto g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& [name, p] : params) {
      for (auto& g : p.grad()) g *= scale;
    }
  }
  return norm;
}

template void SgdMomentum::step(std::vector<std::pair<std::string, Tensor<float>>>&, double);
template void SgdMomentum::step(std::vector<std::pair<std::string, Tensor<double>>>&, double);
template double clip_grad_norm(std::vector<std::pair<std::string, Tensor<float>>>&, double);
template double clip_grad_norm(std::vector<std::pair<std::string, Tensor<double>>>&, double);

namespace {

Tensor<float> gather_images(const Tensor<float>& images, std::span<const std::size_t> rows) {
  const std::size_t pixels = images.numel() / images.dim(0);
  Tensor<float> out({rows.size(), images.dim(1), images.dim(2), images.dim(3)});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(images.raw() + rows[i] * pixels, pixels, out.raw() + i * pixels);
  }
  return out;
}

std::size_t argmax_row(const Tensor<float>& logits, std::size_t row) {
  const std::size_t c = logits.dim(1);
  const float* x = logits.raw() + row * c;
  return static_cast<std::size_t>(std::max_element(x, x + c) - x);
}

// Reshuffled-epoch sampler.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : rng_(seed), order_(n) {
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    shuffle();
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (cursor_ == order_.size()) shuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void shuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) {
      std::swap(order_[i - 1], order_[rng_.below(i)]);
    }
    cursor_ = 0;
  }

  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace

TrainResult train(const TrainConfig& cfg, const LabeledSplit& split,
                  const std::function<void(const StepMetrics&)>& on_step) {
  cfg.validate();
  const auto model_cfg = cfg.model_config();
  if (split.size() == 0) throw ContractError("train: empty training split");
  if (split.images.rank() != 4 || split.images.dim(1) != model_cfg.patch.height ||
      split.images.dim(2) != model_cfg.patch.width || split.images.dim(3) != model_cfg.patch.channels) {
    throw DimensionError("train: images " + shape_string(split.images.shape()) +
                         " do not match the configured image size");
  }
  TrainResult result;
  result.params = ModelParams<float>::init(model_cfg, cfg.seed);
  auto named = result.params.named();
  const auto images = split.images.cast<float>();
  BatchSampler sampler(split.size(), cfg.seed ^ 0x5851f42d4c957f2dull);
  SgdMomentum optimizer(cfg.momentum);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto rows = sampler.next(cfg.batch_size);
    std::vector<std::size_t> labels(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = split.labels[rows[i]];
    const auto batch = gather_images(images, rows);

    Tape<float> tape;
    auto fwd = forward(tape, result.params, model_cfg, batch);
    auto loss = total_loss(tape, fwd.logits, std::span<const std::size_t>(labels), fwd.cls_tokens,
                           cfg.alpha, cfg.contrastive);
    tape.backward(loss.total);

    StepMetrics m;
    m.step = step;
    m.lr = cosine_lr(cfg.learning_rate, step, cfg.steps);
    m.loss_cross = loss.cross.item();
    m.loss_con = loss.contrastive.defined() ? loss.contrastive.item() : 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) correct += argmax_row(fwd.logits, i) == labels[i];
    m.train_acc = static_cast<double>(correct) / static_cast<double>(rows.size());

    clip_grad_norm(named, cfg.max_grad_norm);
    optimizer.step(named, m.lr);
    for (auto& [name, p] : named) p.zero_grad();

    result.trace.push_back(m);
    if (on_step) on_step(m);
  }
  return result;
}

void write_metrics_csv(const std::vector<StepMetrics>& trace, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "step,lr,loss_cross,loss_con,train_acc\n";
  for (const auto& m : trace) {
    os << m.step << ',' << format_double(m.lr) << ',' << format_double(m.loss_cross) << ','
       << format_double(m.loss_con) << ',' << format_double(m.train_acc) << '\n';
  }
  if (!os) throw IoError("write failed for " + path.string());
}

namespace {

struct SampleOutcome {
  std::size_t predicted = 0;
  bool hit = false;
};

void evaluate_range(const ModelParams<float>& params, const ModelConfig& cfg,
                    const LabeledSplit& split, std::size_t begin, std::size_t end,
                    std::vector<SampleOutcome>& out) {
  constexpr std::size_t kChunk = 64;
  const std::size_t pixels = split.images.numel() / split.images.dim(0);
  const bool has_meta = split.meta.size() == split.size();
  for (std::size_t lo = begin; lo < end; lo += kChunk) {
    const std::size_t hi = std::min(end, lo + kChunk);
    Tensor<float> batch({hi - lo, split.images.dim(1), split.images.dim(2), split.images.dim(3)});
    for (std::size_t i = 0; i < (hi - lo) * pixels; ++i) {
      batch[i] = static_cast<float>(split.images[lo * pixels + i]);
    }
    auto tape = Tape<float>::inference();
    auto fwd = forward(tape, params, cfg, batch);
    for (std::size_t i = lo; i < hi; ++i) {
      out[i].predicted = argmax_row(fwd.logits, i - lo);
      if (has_meta) {
        out[i].hit = localization_hit(fwd.selection.indices[i - lo], split.meta[i].glyph, cfg.patch);
      }
    }
  }
}

}  // namespace

EvalResult evaluate(const ModelParams<float>& params, const ModelConfig& cfg,
                    const LabeledSplit& split, std::size_t threads) {
  cfg.validate();
  if (split.images.rank() != 4 || split.images.dim(1) != cfg.patch.height ||
      split.images.dim(2) != cfg.patch.width || split.images.dim(3) != cfg.patch.channels) {
    throw DimensionError("evaluate: images " + shape_string(split.images.shape()) +
                         " do not match the model's patch config");
  }
  const std::size_t n = split.size();
  std::vector<SampleOutcome> outcomes(n);
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    evaluate_range(params, cfg, split, 0, n, outcomes);
  } else {
    std::vector<std::thread> pool;
    const std::size_t per = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t lo = t * per, hi = std::min(n, lo + per);
      if (lo >= hi) break;
      pool.emplace_back([&, lo, hi] { evaluate_range(params, cfg, split, lo, hi, outcomes); });
    }
    for (auto& th : pool) th.join();
  }

  EvalResult r;
  r.samples = n;
  std::vector<std::size_t> seen(cfg.num_classes, 0), right(cfg.num_classes, 0);
  std::size_t correct = 0, hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = split.labels[i];
    if (y >= cfg.num_classes) throw IndexError("evaluate: label out of range");
    ++seen[y];
    if (outcomes[i].predicted == y) {
      ++right[y];
      ++correct;
    }
    hits += outcomes[i].hit;
  }
  r.accuracy = n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  r.localization_hit_rate = n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    r.per_class_accuracy.push_back(seen[c] ? static_cast<double>(right[c]) / seen[c] : 0.0);
  }
  return r;
}

TrainResult run_training(const TrainConfig& cfg) {
  cfg.validate();
  const std::filesystem::path dir = cfg.output_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto data = generate(cfg.data);
  auto result = train(cfg, data.train);
  write_metrics_csv(result.trace, dir / "metrics.csv");
  save_checkpoint(dir / "model", result.params.to_checkpoint());
  save_config(cfg, dir / "config.txt");
  return result;
}

Checkpoint load_run(const std::filesystem::path& dir) {
  Checkpoint ck;
  ck.config = load_config(dir / "config.txt");
  ck.config.output_dir = dir.string();
  ck.params = ModelParams<float>::from_checkpoint(load_checkpoint(dir / "model"),
                                                  ck.config.model_config());
  return ck;
}

std::vector<AblationCell> ablation_grid() {
  std::vector<AblationCell> cells;
  for (bool overlap : {false, true}) {
    for (bool psm : {false, true}) {
      for (bool contrastive : {false, true}) {
        cells.push_back({"grid", overlap, psm, contrastive, kDefaultMargin});
      }
    }
  }
  for (double alpha : {0.0, 0.2, 0.4, 0.6}) cells.push_back({"margin", true, true, true, alpha});
  return cells;
}

TrainConfig apply_cell(const TrainConfig& base, const AblationCell& cell) {
  TrainConfig cfg = base;
  cfg.overlap = cell.overlap;
  cfg.psm = cell.psm;
  cfg.contrastive = cell.contrastive;
  cfg.alpha = cell.alpha;
  return cfg;
}

namespace {

AblationRow run_cell(const TrainConfig& base, const LabeledDataset& data, std::size_t index,
                     const AblationCell& cell) {
  const auto cfg = apply_cell(base, cell);
  auto result = train(cfg, data.train);
  const auto model_cfg = cfg.model_config();
  AblationRow row;
  row.index = index;
  row.cell = cell;
  row.config_hash = cfg.hash();
  const auto& last = result.trace.back();
  row.final_loss = last.loss_cross + last.loss_con;
  row.train_acc = evaluate(result.params, model_cfg, data.train).accuracy;
  const auto test = evaluate(result.params, model_cfg, data.test);
  row.test_acc = test.accuracy;
  row.localization_hit_rate = test.localization_hit_rate;
  return row;
}

void write_row(std::ostream& os, const AblationRow& r) {
  char hash[20];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(r.config_hash));
  os << r.index << ',' << r.cell.group << ',' << (r.cell.overlap ? "overlap" : "non-overlap") << ','
     << format_bool(r.cell.psm) << ',' << format_bool(r.cell.contrastive) << ','
     << format_double(r.cell.alpha) << ',' << hash << ',' << format_double(r.final_loss) << ','
     << format_double(r.train_acc) << ',' << format_double(r.test_acc) << ','
     << format_double(r.localization_hit_rate) << '\n';
  os.flush();
}

}  // namespace

std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::filesystem::path& out_dir,
                                      std::size_t threads) {
  base.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::ofstream os(out_dir / "results.csv", std::ios::trunc);
  if (!os) throw IoError("cannot open " + (out_dir / "results.csv").string());
  os << "cell,group,patch_split,psm,contrastive,alpha,config_hash,final_loss,train_acc,test_acc,"
        "localization_hit_rate\n";
  os.flush();

  const auto cells = ablation_grid();
  const auto data = generate(base.data);
  std::vector<AblationRow> rows(cells.size());
  std::vector<bool> done(cells.size(), false);
  std::size_t written = 0, next = 0;
  std::mutex mu;
  std::exception_ptr failure;

  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= cells.size() || failure) return;
        i = next++;
      }
      try {
        auto row = run_cell(base, data, i, cells[i]);
        std::lock_guard lock(mu);
        rows[i] = row;
        done[i] = true;
        while (written < cells.size() && done[written]) write_row(os, rows[written++]);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };

  threads = std::max<std::size_t>(1, std::min(threads, cells.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  if (!os) throw IoError("write failed for " + (out_dir / "results.csv").string());
  return rows;
}

std::size_t thread_budget() {
  if (const char* env = std::getenv("TRANSFG_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

}  // namespace transfg
