#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mlrn/dataset.hpp"
#include "mlrn/decision_rule.hpp"
#include "mlrn/metrics.hpp"
#include "mlrn/model.hpp"

namespace mlrn {
namespace training {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 42;
  // Evaluate every k epochs (0 = only after the final epoch). The final epoch
  // always evaluates when eval data is present.
  std::size_t eval_every = 0;
  DecisionRule decision_rule = DecisionRule::make_threshold(0.5);

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

struct EpochRecord {
  std::size_t epoch = 0;    // 1-based
  double mean_loss = 0.0;
  double wall_seconds = 0.0;  // in-memory only; the JSONL form omits it so
                              // identical runs serialize byte-identically
  std::optional<metrics::MetricsReport> eval;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::string checkpoint_path;  // filled by the caller that persists the model

  std::vector<double> losses() const;
};

// One line per epoch: {"epoch":N,"mean_loss":L[,"eval":{...}]}.
std::string train_report_to_jsonl(const TrainReport& report);

// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
// Velocity slots are created (zeroed) on first use and must stay aligned with
// the parameter list afterwards.
void sgd_step(const std::vector<TensorPtr>& params,
              std::vector<std::vector<double>>& velocity, double lr,
              double momentum, double weight_decay);

// Seeded-shuffle minibatch SGD minimizing BCE. Runs config.epochs epochs
// numbered from start_epoch (lets callers train in resumable chunks with
// fresh shuffles). Aborts with NumericError diagnostics on non-finite loss.
TrainReport train(model::Model& model, const data::DataBundle& train_data,
                  const TrainConfig& config,
                  const data::DataBundle* eval_data = nullptr,
                  std::size_t start_epoch = 0);

// Frozen-batch-norm forward over the whole bundle, scores through the full
// metric suite. Never mutates the model.
metrics::MetricsReport evaluate(model::Model& model,
                                const data::DataBundle& bundle,
                                const DecisionRule& rule);

}  // namespace training
}  // namespace mlrn
