// transfg: train / eval / ablate / gen-data / viz.
//
// Exit codes: 0 success, 2 invalid configuration or shape mismatch, 3 I/O failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "transfg/image_io.hpp"
#include "transfg/trainer.hpp"
#include "transfg/viz.hpp"

namespace fs = std::filesystem;
using namespace transfg;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

// Every TrainConfig key becomes a --<key> option. Values are resolved as
// defaults < --config file < explicit flags.
struct ConfigFlags {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  std::string config_file;

  void attach(CLI::App& cmd) {
    for (const auto& [key, def] : TrainConfig{}.to_key_values()) {
      values[key] = def;
      options[key] = cmd.add_option("--" + key, values[key])->default_str(def);
    }
    cmd.add_option("--config", config_file, "key=value file with any of the options above");
  }

  TrainConfig resolve() const {
    std::map<std::string, std::string> kv;
    for (const auto& [key, def] : TrainConfig{}.to_key_values()) kv[key] = def;
    if (!config_file.empty()) {
      for (const auto& [key, v] : load_config(config_file).to_key_values()) kv[key] = v;
    }
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) kv[key] = values.at(key);
    }
    return TrainConfig::from_key_values(kv);
  }
};

void print_json(const nlohmann::json& j, const std::string& path) {
  std::cout << j.dump(2) << '\n';
  if (!path.empty()) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << j.dump(2) << '\n';
  }
}

int cmd_train(const ConfigFlags& flags, const std::string& out, bool quiet) {
  auto cfg = flags.resolve();
  if (!out.empty()) cfg.output_dir = out;
  cfg.validate();
  if (!quiet) {
    std::cerr << "training " << cfg.steps << " steps into " << cfg.output_dir << '\n';
  }
  const auto result = run_training(cfg);
  const auto data = generate(cfg.data);
  const auto model_cfg = cfg.model_config();
  const auto train_eval = evaluate(result.params, model_cfg, data.train, thread_budget());
  const auto test_eval = evaluate(result.params, model_cfg, data.test, thread_budget());
  nlohmann::json j;
  j["output_dir"] = cfg.output_dir;
  j["config_hash"] = cfg.hash();
  j["final_loss_cross"] = result.trace.back().loss_cross;
  j["final_loss_con"] = result.trace.back().loss_con;
  j["train_accuracy"] = train_eval.accuracy;
  j["test_accuracy"] = test_eval.accuracy;
  j["test_localization_hit_rate"] = test_eval.localization_hit_rate;
  print_json(j, "");
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& split_name,
             std::size_t dump, const std::string& dump_dir, const std::string& json_path) {
  const auto ck = load_run(checkpoint);
  const auto model_cfg = ck.config.model_config();
  const auto data = data_dir.empty() ? generate(ck.config.data) : import_dataset(data_dir);
  if (split_name != "train" && split_name != "test") {
    throw ConfigError("--split must be train or test");
  }
  const auto& split = split_name == "train" ? data.train : data.test;
  const auto r = evaluate(ck.params, model_cfg, split, thread_budget());

  nlohmann::json j;
  j["split"] = split_name;
  j["samples"] = r.samples;
  j["accuracy"] = r.accuracy;
  j["per_class_accuracy"] = r.per_class_accuracy;
  j["localization_hit_rate"] = r.localization_hit_rate;
  j["random_baseline_hit_rate"] =
      random_hit_probability(ck.config.data, model_cfg.patch, model_cfg.encoder.heads);

  if (dump > 0) {
    const fs::path dir = dump_dir.empty() ? fs::path(checkpoint) / "selections" : fs::path(dump_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string());
    const std::size_t count = std::min(dump, split.size());
    const std::size_t pixels = split.images.numel() / split.images.dim(0);
    Tensor<float> batch({count, split.images.dim(1), split.images.dim(2), split.images.dim(3)});
    for (std::size_t i = 0; i < count * pixels; ++i) batch[i] = static_cast<float>(split.images[i]);
    auto tape = Tape<float>::inference();
    const auto fwd = forward(tape, ck.params, model_cfg, batch);
    for (std::size_t i = 0; i < count; ++i) {
      const auto sel = sample_selection(fwd, model_cfg, i);
      SelectionResult<double> dsel;
      for (const auto& m : sel.rollout) dsel.rollout.push_back(m.cast<double>());
      dsel.indices = sel.indices;
      for (auto s : sel.scores) dsel.scores.push_back(s);
      const auto stem = "sample" + std::to_string(i);
      save_selection(dir / (stem + "_selection.tfgt"), dsel, model_cfg.patch);
      Tensor<double> image({split.images.dim(1), split.images.dim(2), split.images.dim(3)});
      std::copy_n(split.images.raw() + i * pixels, pixels, image.raw());
      write_ppm(image, dir / (stem + ".ppm"));
    }
    j["dump_dir"] = dir.string();
  }
  print_json(j, json_path);
  return 0;
}

int cmd_ablate(const ConfigFlags& flags, const std::string& out) {
  auto cfg = flags.resolve();
  const fs::path dir = out.empty() ? fs::path(cfg.output_dir) : fs::path(out);
  const auto rows = run_ablation(cfg, dir, thread_budget());
  std::cout << "wrote " << rows.size() << " cells to " << (dir / "results.csv").string() << '\n';
  return 0;
}

int cmd_gen_data(const ConfigFlags& flags, const std::string& out) {
  const auto cfg = flags.resolve();
  const fs::path dir = out.empty() ? fs::path("data") : fs::path(out);
  const auto data = generate(cfg.data);
  export_dataset(data, dir);
  std::cout << "wrote " << data.train.size() << " train and " << data.test.size()
            << " test samples to " << dir.string() << '\n';
  return 0;
}

int cmd_viz(const std::string& input, const std::string& selection, const std::string& mode,
            std::size_t top_k, const std::string& out) {
  OverlayRequest req;
  req.mode = parse_overlay_mode(mode);
  auto [sel, patch] = load_selection(selection);
  req.image = load_image(input);
  req.selection = std::move(sel);
  req.patch = patch;
  req.top_k = top_k;
  write_ppm(render(req), out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fine-grained recognition with attention part selection on a synthetic toy task"};
  app.require_subcommand(1);

  ConfigFlags train_flags, ablate_flags, gen_flags;
  std::string train_out, ablate_out, gen_out;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "train a model and write metrics + checkpoint");
  train_flags.attach(*train);
  train->add_option("--out", train_out, "output directory (overrides output-dir)");
  train->add_flag("--quiet", quiet);

  std::string checkpoint, data_dir, split = "test", dump_dir, json_path;
  std::size_t dump = 0;
  auto* eval = app.add_subcommand("eval", "evaluate a trained run directory");
  eval->add_option("--checkpoint", checkpoint, "run directory written by train")->required();
  eval->add_option("--data", data_dir, "dataset directory written by gen-data");
  eval->add_option("--split", split, "train or test")->capture_default_str();
  eval->add_option("--dump", dump, "write selection dumps and images for the first N samples");
  eval->add_option("--dump-dir", dump_dir);
  eval->add_option("--json", json_path, "also write the report to this file");

  auto* ablate = app.add_subcommand("ablate", "run the 12-cell ablation grid");
  ablate_flags.attach(*ablate);
  ablate->add_option("--out", ablate_out, "output directory");

  auto* gen = app.add_subcommand("gen-data", "export the synthetic dataset");
  gen_flags.attach(*gen);
  gen->add_option("--out", gen_out, "output directory");

  std::string viz_input, viz_selection, viz_mode = "selected", viz_out;
  std::size_t top_k = 4;
  auto* viz = app.add_subcommand("viz", "render selected patches or the attention map as PPM");
  viz->add_option("--input", viz_input, "PPM or TFGT image")->required();
  viz->add_option("--selection", viz_selection, "selection dump (TFGT)")->required();
  viz->add_option("--mode", viz_mode, "selected or attention")->capture_default_str();
  viz->add_option("--top-k", top_k)->capture_default_str();
  viz->add_option("--out", viz_out, "output PPM path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_flags, train_out, quiet);
    if (*eval) return cmd_eval(checkpoint, data_dir, split, dump, dump_dir, json_path);
    if (*ablate) return cmd_ablate(ablate_flags, ablate_out);
    if (*gen) return cmd_gen_data(gen_flags, gen_out);
    if (*viz) return cmd_viz(viz_input, viz_selection, viz_mode, top_k, viz_out);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::invalid_argument& e) {  // ConfigError, DimensionError
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::logic_error& e) {  // ContractError, IndexError
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
