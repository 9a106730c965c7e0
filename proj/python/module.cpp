// Python bindings for the main operations: the stable sigmoid/BCE kernels,
// the ranking metrics, and whole-run entry points (generate / train / eval /
// predict). Interfaces stay in plain lists and strings so the module has no
// numpy dependency.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mlrn/checkpoint.hpp"
#include "mlrn/dataset.hpp"
#include "mlrn/decision_rule.hpp"
#include "mlrn/errors.hpp"
#include "mlrn/metrics.hpp"
#include "mlrn/model.hpp"
#include "mlrn/ops.hpp"
#include "mlrn/run.hpp"
#include "mlrn/train.hpp"

namespace py = pybind11;
using namespace mlrn;

namespace {

std::pair<std::vector<double>, std::pair<std::size_t, std::size_t>> flatten(
    const std::vector<std::vector<double>>& rows, const char* what) {
  if (rows.empty()) throw ShapeError(std::string(what) + ": no rows");
  const std::size_t cols = rows.front().size();
  std::vector<double> flat;
  flat.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) {
      throw ShapeError(std::string(what) + ": ragged rows");
    }
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return {std::move(flat), {rows.size(), cols}};
}

std::vector<std::uint8_t> to_binary(const std::vector<double>& values,
                                    const char* what) {
  std::vector<std::uint8_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] != 0.0 && values[i] != 1.0) {
      throw ValidationError(std::string(what) + ": entries must be 0 or 1");
    }
    out[i] = values[i] == 1.0;
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "multilabel classification toolkit (C++ core)";

  py::register_exception<Error>(m, "MlrnError", PyExc_RuntimeError);

  m.def(
      "sigmoid",
      [](const std::vector<double>& logits) {
        std::vector<double> out(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i) {
          out[i] = sigmoid_scalar(logits[i]);
        }
        return out;
      },
      py::arg("logits"),
      "Numerically stable elementwise sigmoid; outputs strictly in (0,1).");

  m.def(
      "bce_from_logits",
      [](const std::vector<std::vector<double>>& logits,
         const std::vector<std::vector<double>>& targets) {
        auto [lf, lshape] = flatten(logits, "logits");
        auto [tf, tshape] = flatten(targets, "targets");
        auto lt = make_tensor({lshape.first, lshape.second}, std::move(lf));
        auto tt = make_tensor({tshape.first, tshape.second}, std::move(tf));
        return bce_loss(lt, tt)->data[0];
      },
      py::arg("logits"), py::arg("targets"),
      "Binary cross-entropy from logits: summed over classes, averaged over "
      "rows.");

  m.def(
      "average_precision",
      [](const std::vector<double>& scores,
         const std::vector<double>& labels) {
        return metrics::average_precision(scores,
                                          to_binary(labels, "labels"));
      },
      py::arg("scores"), py::arg("labels"),
      "Rank-based average precision; None when there are no positives.");

  m.def(
      "metrics_json",
      [](const std::vector<std::vector<double>>& scores,
         const std::vector<std::vector<double>>& targets,
         const std::string& rule) {
        auto [sf, shape] = flatten(scores, "scores");
        auto [tf, tshape] = flatten(targets, "targets");
        auto sm = metrics::ScoreMatrix::create(shape.first, shape.second,
                                               std::move(sf));
        auto tm = metrics::TargetMatrix::create(tshape.first, tshape.second,
                                                to_binary(tf, "targets"));
        auto report =
            metrics::table3_report(sm, tm, DecisionRule::parse(rule));
        return metrics::to_json_string(report);
      },
      py::arg("scores"), py::arg("targets"), py::arg("rule") = "threshold:0.5",
      "Full metric report (mAP, OP/CP/OR/CR/OF1/CF1) as a JSON string.");

  m.def(
      "generate_synthetic",
      [](const std::string& spec_json, std::size_t n_images,
         const std::string& out_path) {
        auto spec = data::spec_from_json(spec_json);
        auto bundle = data::generate_synthetic(spec, n_images);
        data::save_bundle(bundle, out_path);
        return bundle.manifest.size();
      },
      py::arg("spec_json"), py::arg("n_images"), py::arg("out_path"),
      "Render a synthetic shapes dataset and save it as a bundle file.");

  m.def(
      "train",
      [](const std::string& run_config_json) {
        run::run_train(run::run_config_from_json(run_config_json));
      },
      py::arg("run_config_json"),
      "Run a full training job from a JSON run config; writes the "
      "checkpoint, report, and resolved config into the output directory.");

  m.def(
      "evaluate",
      [](const std::string& checkpoint_path, const std::string& bundle_path,
         const std::string& rule) {
        auto model = model::load_checkpoint(checkpoint_path);
        auto bundle = data::load_bundle(bundle_path);
        auto report =
            training::evaluate(model, bundle, DecisionRule::parse(rule));
        return metrics::to_json_string(report);
      },
      py::arg("checkpoint_path"), py::arg("bundle_path"),
      py::arg("rule") = "threshold:0.5",
      "Score a checkpoint against a bundle; returns the metric JSON.");

  m.def(
      "predict",
      [](const std::string& checkpoint_path, const std::string& ppm_path,
         std::size_t top_n) {
        auto model = model::load_checkpoint(checkpoint_path);
        auto image = data::read_ppm(ppm_path);
        auto tensor =
            data::preprocess(image.pixels.data(), image.height, image.width,
                             model.config.input_height,
                             model.config.input_width);
        std::vector<std::string> names;
        if (model.config.num_classes == data::CategoryTable::coco80().size()) {
          names = data::CategoryTable::coco80().names();
        }
        auto probs =
            model::predict_probabilities(model, tensor, std::move(names));
        std::vector<std::pair<std::string, double>> out;
        const auto order = probs.by_descending_probability();
        for (std::size_t i = 0; i < std::min(top_n, order.size()); ++i) {
          out.emplace_back(probs.class_names[order[i]],
                           probs.probabilities[order[i]]);
        }
        return out;
      },
      py::arg("checkpoint_path"), py::arg("ppm_path"), py::arg("top_n") = 5,
      "Top-n (class, probability) pairs for one PPM image.");

  m.attr("__version__") = "0.1.0";
}
