#include "mlrn/train.hpp"

#include <chrono>
#include <cmath>

#include <json.hpp>

#include "mlrn/errors.hpp"
#include "mlrn/ops.hpp"

namespace mlrn {
namespace training {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) {
    throw ConfigError("train config: learning_rate must be >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("train config: momentum must lie in [0,1)");
  }
  if (!(weight_decay >= 0.0)) {
    throw ConfigError("train config: weight_decay must be >= 0");
  }
}

std::string train_config_to_json(const TrainConfig& config) {
  json j;
  j["epochs"] = config.epochs;
  j["batch_size"] = config.batch_size;
  j["learning_rate"] = config.learning_rate;
  j["momentum"] = config.momentum;
  j["weight_decay"] = config.weight_decay;
  j["seed"] = config.seed;
  j["eval_every"] = config.eval_every;
  j["decision_rule"] = config.decision_rule.str();
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  const std::string ctx = "train config";
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(ctx + ": malformed JSON at byte " + std::to_string(e.byte) +
                     " (" + e.what() + ")");
  }
  if (!j.is_object()) throw SchemaError(ctx + ": top level must be an object");

  TrainConfig c;
  auto take_size = [&](const char* key, std::size_t* out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer() || j[key].get<std::int64_t>() < 0) {
      throw SchemaError(ctx + ": field `" + key +
                        "` must be a non-negative integer");
    }
    *out = j[key].get<std::size_t>();
  };
  auto take_real = [&](const char* key, double* out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) {
      throw SchemaError(ctx + ": field `" + key + "` must be a number");
    }
    *out = j[key].get<double>();
  };
  take_size("epochs", &c.epochs);
  take_size("batch_size", &c.batch_size);
  take_size("eval_every", &c.eval_every);
  take_real("learning_rate", &c.learning_rate);
  take_real("momentum", &c.momentum);
  take_real("weight_decay", &c.weight_decay);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer()) {
      throw SchemaError(ctx + ": field `seed` must be an integer");
    }
    c.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("decision_rule")) {
    if (!j["decision_rule"].is_string()) {
      throw SchemaError(ctx + ": field `decision_rule` must be a string");
    }
    c.decision_rule = DecisionRule::parse(j["decision_rule"].get<std::string>());
  }
  c.validate();
  return c;
}

std::vector<double> TrainReport::losses() const {
  std::vector<double> out;
  out.reserve(epochs.size());
  for (const auto& e : epochs) out.push_back(e.mean_loss);
  return out;
}

std::string train_report_to_jsonl(const TrainReport& report) {
  std::string out;
  for (const auto& e : report.epochs) {
    json line;
    line["epoch"] = e.epoch;
    line["mean_loss"] = e.mean_loss;
    if (e.eval) line["eval"] = json::parse(metrics::to_json_string(*e.eval));
    out += line.dump();
    out += "\n";
  }
  return out;
}

void sgd_step(const std::vector<TensorPtr>& params,
              std::vector<std::vector<double>>& velocity, double lr,
              double momentum, double weight_decay) {
  if (velocity.empty()) {
    velocity.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity[i].assign(params[i]->numel(), 0.0);
    }
  }
  if (velocity.size() != params.size()) {
    throw ShapeError("sgd_step: velocity list does not match parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    if (!p.has_grad()) p.ensure_grad();  // unreached parameters: grad 0
    if (velocity[i].size() != p.numel()) {
      throw ShapeError("sgd_step: velocity " + std::to_string(i) +
                       " has wrong length");
    }
    for (std::size_t k = 0; k < p.numel(); ++k) {
      velocity[i][k] = momentum * velocity[i][k] + p.grad[k] +
                       weight_decay * p.data[k];
      p.data[k] -= lr * velocity[i][k];
    }
  }
}

namespace {

void check_compatible(const model::Model& model,
                      const data::DataBundle& bundle, const char* what) {
  if (bundle.manifest.size() == 0) {
    throw ValidationError(std::string(what) + " dataset is empty");
  }
  if (bundle.manifest.num_classes() != model.config.num_classes) {
    throw ValidationError(std::string(what) + " dataset has " +
                          std::to_string(bundle.manifest.num_classes()) +
                          " classes but the model expects " +
                          std::to_string(model.config.num_classes));
  }
}

}  // namespace

TrainReport train(model::Model& model, const data::DataBundle& train_data,
                  const TrainConfig& config, const data::DataBundle* eval_data,
                  std::size_t start_epoch) {
  config.validate();
  check_compatible(model, train_data, "training");
  if (eval_data) check_compatible(model, *eval_data, "evaluation");

  const auto params_named = model.named_parameters();
  std::vector<TensorPtr> params;
  for (const auto& [name, t] : params_named) params.push_back(t);
  std::vector<std::vector<double>> velocity;

  const BatchNormMode mode = model.config.use_batch_norm
                                 ? BatchNormMode::kTrain
                                 : BatchNormMode::kFrozen;
  TrainReport report;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const std::size_t epoch = start_epoch + e + 1;  // 1-based
    const auto t0 = std::chrono::steady_clock::now();
    auto epoch_batches =
        data::batches(train_data, model.config.input_height,
                      model.config.input_width, config.batch_size,
                      config.seed + epoch, /*shuffle=*/true);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (auto& batch : epoch_batches) {
      try {
        Tape tape;
        TensorPtr logits = model::forward(model, batch.images, mode, &tape);
        TensorPtr loss = bce_loss(logits, batch.targets, &tape);
        const double loss_value = loss->data[0];
        if (!std::isfinite(loss_value)) {
          throw NumericError("loss is not finite (learning_rate=" +
                             std::to_string(config.learning_rate) + ")");
        }
        backward(loss, tape);
        sgd_step(params, velocity, config.learning_rate, config.momentum,
                 config.weight_decay);
        loss_sum += loss_value;
      } catch (const NumericError& e) {
        throw NumericError("training aborted at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
      ++batch_index;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(epoch_batches.size());
    const bool last = (e + 1 == config.epochs);
    if (eval_data &&
        (last || (config.eval_every > 0 && (e + 1) % config.eval_every == 0))) {
      rec.eval = evaluate(model, *eval_data, config.decision_rule);
    }
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    report.epochs.push_back(std::move(rec));
  }
  return report;
}

metrics::MetricsReport evaluate(model::Model& model,
                                const data::DataBundle& bundle,
                                const DecisionRule& rule) {
  check_compatible(model, bundle, "evaluation");
  const std::size_t n = bundle.manifest.size();
  const std::size_t c = model.config.num_classes;

  auto eval_batches =
      data::batches(bundle, model.config.input_height,
                    model.config.input_width, /*batch_size=*/32,
                    /*seed=*/0, /*shuffle=*/false);
  std::vector<double> flat(n * c, 0.0);
  std::vector<std::uint8_t> target_flat(n * c, 0);
  std::vector<std::int64_t> row_ids(n, 0);
  std::size_t row = 0;
  for (auto& batch : eval_batches) {
    TensorPtr logits =
        model::forward(model, batch.images, BatchNormMode::kFrozen, nullptr);
    TensorPtr probs = sigmoid(logits, nullptr);
    const std::size_t b = batch.indices.size();
    for (std::size_t k = 0; k < b; ++k, ++row) {
      const auto& rec = bundle.manifest.images[batch.indices[k]];
      row_ids[row] = rec.id;
      for (std::size_t j = 0; j < c; ++j) {
        flat[row * c + j] = probs->data[k * c + j];
        target_flat[row * c + j] = rec.labels[j];
      }
    }
  }

  auto scores = metrics::ScoreMatrix::create(
      n, c, std::move(flat), std::move(row_ids),
      bundle.manifest.categories.names());
  auto targets = metrics::TargetMatrix::create(n, c, std::move(target_flat));
  return metrics::table3_report(scores, targets, rule);
}

}  // namespace training
}  // namespace mlrn
