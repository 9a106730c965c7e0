#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "mlrn/decision_rule.hpp"
#include "mlrn/model.hpp"
#include "mlrn/train.hpp"

namespace mlrn {
namespace run {

// Everything a training run needs, loadable from one JSON file
// ({"model":{...},"train":{...},"data":...,"eval_data":...,"out":...,
// "threads":N}) with command-line overrides applied on top. The fully
// resolved form is echoed to <out>/resolved_config.json so a run can be
// replayed bit-for-bit from its own output.
struct RunConfig {
  model::ModelConfig model;
  training::TrainConfig train;
  std::string data_path;
  std::string eval_data_path;  // empty: evaluate on the training bundle
  std::string out_dir = "out";
  int threads = 1;
};

std::string run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const std::string& text);

// Writes dataset.mlds, manifest.json, and the resolved spec. An empty
// spec_path means the default spec; seed_override wins over the file's seed.
void run_gen_data(const std::string& spec_path, const std::string& out_dir,
                  std::size_t n_images,
                  std::optional<std::uint64_t> seed_override);

// Trains on config.data_path, evaluating on eval_data_path (or the training
// bundle). Writes resolved_config.json, train_report.jsonl, checkpoint.mlrn;
// prints the final epoch loss and final eval mAP.
void run_train(RunConfig config);

// Writes metrics.json, metrics.txt, and pr_<class>.csv files; prints the
// seven-aggregate table.
void run_eval(const std::string& data_path, const std::string& ckpt_path,
              const DecisionRule& rule, const std::string& out_dir);

// image_ref is a PPM file path, or an image id inside --data's bundle.
void run_predict(const std::string& ckpt_path, const std::string& image_ref,
                 const std::string& data_path, std::size_t top_n);

}  // namespace run
}  // namespace mlrn
