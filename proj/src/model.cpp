#include "mlrn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include <json.hpp>

#include "mlrn/errors.hpp"

namespace mlrn {
namespace model {

using nlohmann::json;

void ModelConfig::validate() const {
  if (input_height == 0 || input_width == 0) {
    throw ConfigError("model config: input size must be positive");
  }
  if (input_channels == 0) {
    throw ConfigError("model config: input_channels must be positive");
  }
  if (stage_channels.empty()) {
    throw ConfigError("model config: stage_channels must be nonempty");
  }
  for (std::size_t c : stage_channels) {
    if (c == 0) throw ConfigError("model config: stage channel counts must be positive");
  }
  if (blocks_per_stage == 0) {
    throw ConfigError("model config: blocks_per_stage must be >= 1");
  }
  if (num_classes == 0) {
    throw ConfigError("model config: num_classes must be >= 1");
  }
}

std::string config_to_json(const ModelConfig& config) {
  json j;
  j["input_height"] = config.input_height;
  j["input_width"] = config.input_width;
  j["input_channels"] = config.input_channels;
  j["stage_channels"] = config.stage_channels;
  j["blocks_per_stage"] = config.blocks_per_stage;
  j["num_classes"] = config.num_classes;
  j["use_batch_norm"] = config.use_batch_norm;
  j["seed"] = config.seed;
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  const std::string ctx = "model config";
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(ctx + ": malformed JSON at byte " + std::to_string(e.byte) +
                     " (" + e.what() + ")");
  }
  if (!j.is_object()) throw SchemaError(ctx + ": top level must be an object");

  ModelConfig c;
  auto take_size = [&](const char* key, std::size_t* out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer() || j[key].get<std::int64_t>() < 0) {
      throw SchemaError(ctx + ": field `" + key +
                        "` must be a non-negative integer");
    }
    *out = j[key].get<std::size_t>();
  };
  take_size("input_height", &c.input_height);
  take_size("input_width", &c.input_width);
  take_size("input_channels", &c.input_channels);
  take_size("blocks_per_stage", &c.blocks_per_stage);
  take_size("num_classes", &c.num_classes);
  if (j.contains("stage_channels")) {
    if (!j["stage_channels"].is_array()) {
      throw SchemaError(ctx + ": field `stage_channels` must be an array");
    }
    c.stage_channels.clear();
    for (const auto& v : j["stage_channels"]) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw SchemaError(ctx + ": stage_channels entries must be non-negative integers");
      }
      c.stage_channels.push_back(v.get<std::size_t>());
    }
  }
  if (j.contains("use_batch_norm")) {
    if (!j["use_batch_norm"].is_boolean()) {
      throw SchemaError(ctx + ": field `use_batch_norm` must be a boolean");
    }
    c.use_batch_norm = j["use_batch_norm"].get<bool>();
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer()) {
      throw SchemaError(ctx + ": field `seed` must be an integer");
    }
    c.seed = j["seed"].get<std::uint64_t>();
  }
  c.validate();
  return c;
}

namespace {

void collect(const std::string& prefix, const ConvLayer& conv,
             std::vector<std::pair<std::string, TensorPtr>>* out) {
  out->emplace_back(prefix + ".weight", conv.weight);
  out->emplace_back(prefix + ".bias", conv.bias);
}

void collect_bn(const std::string& prefix,
                const std::optional<BatchNormLayer>& bn, bool with_state,
                std::vector<std::pair<std::string, TensorPtr>>* out) {
  if (!bn) return;
  out->emplace_back(prefix + ".scale", bn->scale);
  out->emplace_back(prefix + ".shift", bn->shift);
  if (with_state) {
    out->emplace_back(prefix + ".running_mean", bn->state.running_mean);
    out->emplace_back(prefix + ".running_var", bn->state.running_var);
  }
}

std::vector<std::pair<std::string, TensorPtr>> collect_all(const Model& m,
                                                           bool with_state) {
  std::vector<std::pair<std::string, TensorPtr>> out;
  collect("stem.conv", m.stem, &out);
  collect_bn("stem.bn", m.stem_bn, with_state, &out);
  for (std::size_t s = 0; s < m.stages.size(); ++s) {
    for (std::size_t b = 0; b < m.stages[s].size(); ++b) {
      const std::string prefix =
          "stage" + std::to_string(s) + ".block" + std::to_string(b);
      const ResidualBlock& blk = m.stages[s][b];
      collect(prefix + ".conv1", blk.conv1, &out);
      collect_bn(prefix + ".bn1", blk.bn1, with_state, &out);
      collect(prefix + ".conv2", blk.conv2, &out);
      collect_bn(prefix + ".bn2", blk.bn2, with_state, &out);
      if (blk.projection) {
        collect(prefix + ".proj", *blk.projection, &out);
        collect_bn(prefix + ".bn_proj", blk.bn_proj, with_state, &out);
      }
    }
  }
  out.emplace_back("head.weight", m.head_weight);
  out.emplace_back("head.bias", m.head_bias);
  return out;
}

}  // namespace

std::vector<std::pair<std::string, TensorPtr>> Model::named_parameters()
    const {
  return collect_all(*this, /*with_state=*/false);
}

std::vector<std::pair<std::string, TensorPtr>> Model::named_tensors() const {
  return collect_all(*this, /*with_state=*/true);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t->numel();
  return n;
}

namespace {

TensorPtr he_tensor(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  TensorPtr t = zeros(std::move(shape));
  std::normal_distribution<double> dist(0.0,
                                        std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (double& v : t->data) v = dist(rng);
  t->requires_grad = true;
  return t;
}

ConvLayer make_conv(std::size_t out_c, std::size_t in_c, std::size_t k,
                    std::size_t stride, std::size_t padding,
                    std::mt19937_64& rng) {
  ConvLayer conv;
  conv.weight = he_tensor({out_c, in_c, k, k}, in_c * k * k, rng);
  conv.bias = zeros({out_c});
  conv.bias->requires_grad = true;
  conv.stride = stride;
  conv.padding = padding;
  return conv;
}

BatchNormLayer make_bn(std::size_t channels) {
  BatchNormLayer bn;
  bn.scale = full({channels}, 1.0);
  bn.scale->requires_grad = true;
  bn.shift = zeros({channels});
  bn.shift->requires_grad = true;
  bn.state = BatchNormState(channels);
  return bn;
}

}  // namespace

Model build_model(const ModelConfig& config, double head_bias_init) {
  config.validate();
  Model m;
  m.config = config;
  std::mt19937_64 rng(config.seed);

  m.stem = make_conv(config.stage_channels[0], config.input_channels, 3, 1, 1,
                     rng);
  if (config.use_batch_norm) m.stem_bn = make_bn(config.stage_channels[0]);

  std::size_t in_c = config.stage_channels[0];
  for (std::size_t s = 0; s < config.stage_channels.size(); ++s) {
    const std::size_t out_c = config.stage_channels[s];
    std::vector<ResidualBlock> stage;
    for (std::size_t b = 0; b < config.blocks_per_stage; ++b) {
      const bool downsample = (s > 0 && b == 0);
      ResidualBlock blk;
      if (downsample) {
        blk.conv1 = make_conv(out_c, in_c, 2, 2, 0, rng);
      } else {
        blk.conv1 = make_conv(out_c, in_c, 3, 1, 1, rng);
      }
      blk.conv2 = make_conv(out_c, out_c, 3, 1, 1, rng);
      if (downsample) {
        blk.projection = make_conv(out_c, in_c, 2, 2, 0, rng);
      } else if (in_c != out_c) {
        blk.projection = make_conv(out_c, in_c, 1, 1, 0, rng);
      }
      if (config.use_batch_norm) {
        blk.bn1 = make_bn(out_c);
        blk.bn2 = make_bn(out_c);
        if (blk.projection) blk.bn_proj = make_bn(out_c);
      }
      stage.push_back(std::move(blk));
      in_c = out_c;
    }
    m.stages.push_back(std::move(stage));
  }

  m.head_weight = he_tensor({config.num_classes, config.feature_dim()},
                            config.feature_dim(), rng);
  m.head_bias = full({config.num_classes}, head_bias_init);
  m.head_bias->requires_grad = true;
  return m;
}

namespace {

TensorPtr apply_bn(const TensorPtr& x, std::optional<BatchNormLayer>& bn,
                   BatchNormMode mode, Tape* tape) {
  if (!bn) return x;
  return batch_norm(x, bn->scale, bn->shift, bn->state, mode, 1e-5, 0.1, tape);
}

TensorPtr run_block(ResidualBlock& blk, const TensorPtr& x, BatchNormMode mode,
                    Tape* tape) {
  TensorPtr y = conv2d(x, blk.conv1.weight, blk.conv1.bias, blk.conv1.stride,
                       blk.conv1.padding, tape);
  y = apply_bn(y, blk.bn1, mode, tape);
  y = relu(y, tape);
  y = conv2d(y, blk.conv2.weight, blk.conv2.bias, blk.conv2.stride,
             blk.conv2.padding, tape);
  y = apply_bn(y, blk.bn2, mode, tape);
  if (blk.skip_enabled) {
    TensorPtr skip = x;
    if (blk.projection) {
      skip = conv2d(x, blk.projection->weight, blk.projection->bias,
                    blk.projection->stride, blk.projection->padding, tape);
      skip = apply_bn(skip, blk.bn_proj, mode, tape);
    }
    y = add(y, skip, tape);
  }
  return relu(y, tape);
}

}  // namespace

TensorPtr forward(Model& model, const TensorPtr& batch, BatchNormMode mode,
                  Tape* tape) {
  const ModelConfig& cfg = model.config;
  if (batch->shape.size() != 4 || batch->shape[1] != cfg.input_channels ||
      batch->shape[2] != cfg.input_height ||
      batch->shape[3] != cfg.input_width) {
    throw ShapeError("forward: expected input [N," +
                     std::to_string(cfg.input_channels) + "," +
                     std::to_string(cfg.input_height) + "," +
                     std::to_string(cfg.input_width) + "], got " +
                     shape_str(batch->shape));
  }
  TensorPtr x = conv2d(batch, model.stem.weight, model.stem.bias,
                       model.stem.stride, model.stem.padding, tape);
  x = apply_bn(x, model.stem_bn, mode, tape);
  x = relu(x, tape);
  for (auto& stage : model.stages) {
    for (auto& blk : stage) x = run_block(blk, x, mode, tape);
  }
  x = global_avg_pool(x, tape);
  return dense(x, model.head_weight, model.head_bias, tape);
}

std::vector<std::size_t> LabelProbabilities::by_descending_probability()
    const {
  std::vector<std::size_t> order(probabilities.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return probabilities[a] > probabilities[b];
                   });
  return order;
}

std::vector<std::string> LabelProbabilities::format_top(std::size_t top_n,
                                                        int decimals) const {
  const auto order = by_descending_probability();
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < std::min(top_n, order.size()); ++i) {
    lines.push_back(format_label_line(class_names[order[i]],
                                      probabilities[order[i]], decimals));
  }
  return lines;
}

std::string display_name(const std::string& name) {
  std::string out = name;
  if (!out.empty()) {
    out[0] = static_cast<char>(
        std::toupper(static_cast<unsigned char>(out[0])));
  }
  return out;
}

std::string format_label_line(const std::string& name, double probability,
                              int decimals) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, probability);
  return display_name(name) + " " + buf;
}

LabelProbabilities predict_probabilities(Model& model, const TensorPtr& image,
                                         std::vector<std::string> class_names) {
  if (image->shape.size() != 3) {
    throw ShapeError("predict_probabilities: expected one [3,H,W] image, got " +
                     shape_str(image->shape));
  }
  TensorPtr batch = make_tensor(
      {1, image->shape[0], image->shape[1], image->shape[2]}, image->data);
  TensorPtr logits = forward(model, batch, BatchNormMode::kFrozen, nullptr);
  TensorPtr probs = sigmoid(logits, nullptr);

  LabelProbabilities out;
  out.probabilities = probs->data;
  if (class_names.empty()) {
    for (std::size_t c = 0; c < out.probabilities.size(); ++c) {
      class_names.push_back("class_" + std::to_string(c));
    }
  }
  if (class_names.size() != out.probabilities.size()) {
    throw ShapeError("predict_probabilities: " +
                     std::to_string(class_names.size()) + " names for " +
                     std::to_string(out.probabilities.size()) + " classes");
  }
  out.class_names = std::move(class_names);
  return out;
}

std::vector<std::uint8_t> decide_labels(const LabelProbabilities& probs,
                                        const DecisionRule& rule) {
  return apply_rule(probs.probabilities, rule);
}

}  // namespace model
}  // namespace mlrn
