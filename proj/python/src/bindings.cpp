// transfg._core: numpy-facing wrappers over the C++ library. Arrays cross the
// boundary as float64 and are copied.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <vector>

#include "transfg/image_io.hpp"
#include "transfg/losses.hpp"
#include "transfg/psm.hpp"
#include "transfg/trainer.hpp"

namespace py = pybind11;
using namespace transfg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  Tensor<double> t(shape);
  std::copy_n(a.data(), t.numel(), t.raw());
  return t;
}

Array to_array(const Tensor<double>& t) {
  Array a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy_n(t.raw(), t.numel(), a.mutable_data());
  return a;
}

std::map<std::string, std::string> stringify(const py::dict& d) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : d) {
    auto key = py::str(k).cast<std::string>();
    std::replace(key.begin(), key.end(), '_', '-');
    if (py::isinstance<py::bool_>(v)) {
      kv[key] = v.cast<bool>() ? "true" : "false";
    } else {
      kv[key] = py::str(v).cast<std::string>();
    }
  }
  return kv;
}

TrainConfig make_config(const py::dict& overrides) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : TrainConfig{}.to_key_values()) kv[k] = v;
  for (const auto& [k, v] : stringify(overrides)) kv[k] = v;
  auto cfg = TrainConfig::from_key_values(kv);
  if (overrides.contains("output_dir")) cfg.output_dir = overrides["output_dir"].cast<std::string>();
  return cfg;
}

py::dict split_to_dict(const LabeledSplit& s) {
  std::vector<std::array<std::size_t, 3>> glyphs;
  for (const auto& m : s.meta) glyphs.push_back({m.glyph.row, m.glyph.col, m.glyph.size});
  py::dict d;
  d["images"] = to_array(s.images);
  d["labels"] = s.labels;
  d["glyphs"] = glyphs;
  return d;
}

py::dict eval_to_dict(const EvalResult& r) {
  py::dict d;
  d["samples"] = r.samples;
  d["accuracy"] = r.accuracy;
  d["per_class_accuracy"] = r.per_class_accuracy;
  d["localization_hit_rate"] = r.localization_hit_rate;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Overlapping patches, attention rollout part selection and margin contrastive loss";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "count_patches",
      [](std::size_t height, std::size_t width, std::size_t patch, std::size_t stride) {
        const auto g = count_patches({height, width, 1, patch, stride});
        return py::make_tuple(g.rows, g.cols, g.count);
      },
      py::arg("height"), py::arg("width"), py::arg("patch"), py::arg("stride"),
      "(N_H, N_W, N) for a sliding window of side `patch` moved by `stride`.");

  m.def(
      "extract_patches",
      [](const Array& image, std::size_t patch, std::size_t stride) {
        if (image.ndim() != 3) throw DimensionError("extract_patches: image must be [H, W, C]");
        PatchConfig cfg{static_cast<std::size_t>(image.shape(0)), static_cast<std::size_t>(image.shape(1)),
                        static_cast<std::size_t>(image.shape(2)), patch, stride};
        return to_array(extract_patches(to_tensor(image), cfg));
      },
      py::arg("image"), py::arg("patch"), py::arg("stride"));

  m.def(
      "rollout",
      [](const std::vector<std::vector<Array>>& layers, bool add_identity) {
        std::vector<std::vector<Tensor<double>>> mats;
        for (const auto& layer : layers) {
          auto& row = mats.emplace_back();
          for (const auto& a : layer) row.push_back(to_tensor(a));
        }
        std::vector<Array> out;
        for (const auto& r : rollout(AttentionStack<double>::from_matrices(mats), 0, {add_identity})) {
          out.push_back(to_array(r));
        }
        return out;
      },
      py::arg("layers"), py::arg("add_identity") = false,
      "Per-head product a_L ... a_1 of layers[l][h] square attention matrices.");

  m.def(
      "select",
      [](const std::vector<Array>& rollout_mats) {
        std::vector<Tensor<double>> mats;
        for (const auto& a : rollout_mats) mats.push_back(to_tensor(a));
        const auto s = select(std::move(mats));
        return py::make_tuple(s.indices, s.scores);
      },
      py::arg("rollout"), "(indices, scores): per head, the CLS-row argmax over patch columns.");

  m.def(
      "contrastive_loss",
      [](const Array& z, const std::vector<std::size_t>& labels, double alpha) {
        Tape<double> tape;
        auto zt = to_tensor(z);
        zt.set_requires_grad(true);
        auto loss = contrastive_loss(tape, zt, labels, alpha);
        const double value = loss.item();
        tape.backward(loss);
        Tensor<double> grad(zt.shape());
        std::copy(zt.grad().begin(), zt.grad().end(), grad.raw());
        return py::make_tuple(value, to_array(grad));
      },
      py::arg("z"), py::arg("labels"), py::arg("alpha") = kDefaultMargin,
      "(loss, dloss/dz) of the margin contrastive loss.");

  m.def(
      "generate",
      [](const py::dict& overrides) {
        const auto cfg = make_config(overrides).data;
        const auto data = generate(cfg);
        py::dict d;
        d["train"] = split_to_dict(data.train);
        d["test"] = split_to_dict(data.test);
        return d;
      },
      py::arg("config") = py::dict(), "Synthetic dataset for a config dict (data keys such as image_size).");

  m.def(
      "random_hit_probability",
      [](const py::dict& overrides) {
        const auto cfg = make_config(overrides);
        return random_hit_probability(cfg.data, cfg.patch_config(), cfg.heads);
      },
      py::arg("config") = py::dict());

  m.def(
      "default_config",
      [] {
        py::dict d;
        for (const auto& [k, v] : TrainConfig{}.to_key_values()) {
          auto key = k;
          std::replace(key.begin(), key.end(), '-', '_');
          d[py::str(key)] = v;
        }
        return d;
      },
      "Default configuration as strings, keyed with underscores.");

  m.def(
      "train",
      [](const py::dict& overrides) {
        const auto cfg = make_config(overrides);
        TrainResult result;
        {
          py::gil_scoped_release release;
          result = run_training(cfg);
        }
        const auto data = generate(cfg.data);
        py::dict d;
        d["output_dir"] = cfg.output_dir;
        d["final_loss_cross"] = result.trace.back().loss_cross;
        d["final_loss_con"] = result.trace.back().loss_con;
        d["train"] = eval_to_dict(evaluate(result.params, cfg.model_config(), data.train));
        d["test"] = eval_to_dict(evaluate(result.params, cfg.model_config(), data.test));
        return d;
      },
      py::arg("config") = py::dict(), "Train, write the run directory, and evaluate both splits.");

  m.def(
      "evaluate",
      [](const std::filesystem::path& run_dir, const std::string& split) {
        const auto ck = load_run(run_dir);
        const auto data = generate(ck.config.data);
        if (split != "train" && split != "test") throw ConfigError("split must be train or test");
        return eval_to_dict(
            evaluate(ck.params, ck.config.model_config(), split == "train" ? data.train : data.test));
      },
      py::arg("run_dir"), py::arg("split") = "test");

  m.def(
      "write_ppm", [](const Array& image, const std::filesystem::path& path) { write_ppm(to_tensor(image), path); },
      py::arg("image"), py::arg("path"));
  m.def(
      "read_ppm", [](const std::filesystem::path& path) { return to_array(read_ppm(path)); }, py::arg("path"));
}
