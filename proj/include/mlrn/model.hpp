#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mlrn/decision_rule.hpp"
#include "mlrn/ops.hpp"
#include "mlrn/tensor.hpp"

namespace mlrn {
namespace model {

struct ModelConfig {
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  std::size_t input_channels = 3;
  std::vector<std::size_t> stage_channels = {8, 16, 32};
  std::size_t blocks_per_stage = 2;
  std::size_t num_classes = 80;
  bool use_batch_norm = true;
  std::uint64_t seed = 42;

  void validate() const;
  std::size_t feature_dim() const { return stage_channels.back(); }

  bool operator==(const ModelConfig&) const = default;
};

std::string config_to_json(const ModelConfig& config);
// Missing fields keep their defaults; present fields are type-checked.
ModelConfig config_from_json(const std::string& text);

struct ConvLayer {
  TensorPtr weight;  // [out, in, kh, kw]
  TensorPtr bias;    // [out]
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct BatchNormLayer {
  TensorPtr scale;  // [C]
  TensorPtr shift;  // [C]
  BatchNormState state;
};

// conv-norm-relu-conv-norm, add skip, relu. The projection rewrites the skip
// when shape changes: 2x2 stride-2 when downsampling (stride-2 3x3/1x1 convs
// never produce integral output sizes on even inputs, so the classic kernels
// are unusable under the exact-geometry contract), 1x1 stride-1 when only the
// channel count changes.
struct ResidualBlock {
  ConvLayer conv1;
  ConvLayer conv2;
  std::optional<ConvLayer> projection;
  std::optional<BatchNormLayer> bn1, bn2, bn_proj;
  bool skip_enabled = true;  // probe seam: ablate the residual add in tests
};

struct Model {
  ModelConfig config;
  ConvLayer stem;
  std::optional<BatchNormLayer> stem_bn;
  std::vector<std::vector<ResidualBlock>> stages;
  TensorPtr head_weight;  // [num_classes, feature_dim]
  TensorPtr head_bias;    // [num_classes]

  // Trainable parameters in a fixed, documented order.
  std::vector<std::pair<std::string, TensorPtr>> named_parameters() const;
  // Parameters plus batch-norm running statistics (everything a checkpoint
  // stores).
  std::vector<std::pair<std::string, TensorPtr>> named_tensors() const;
  std::size_t parameter_count() const;
};

// He-style init: zero-mean Gaussians with std sqrt(2/fan_in), biases zero,
// batch-norm at identity, head bias at `head_bias_init`.
Model build_model(const ModelConfig& config, double head_bias_init = -2.0);

// Stem -> stages -> global average pool -> dense head; returns raw logits
// [N, num_classes]. Batch norm runs in `mode`; training mode updates the
// running statistics in place.
TensorPtr forward(Model& model, const TensorPtr& batch,
                  BatchNormMode mode = BatchNormMode::kFrozen,
                  Tape* tape = nullptr);

struct LabelProbabilities {
  std::vector<double> probabilities;     // strictly in (0,1)
  std::vector<std::string> class_names;  // category order

  // Indices by descending probability, ties broken by ascending index.
  std::vector<std::size_t> by_descending_probability() const;
  // Top-n "Name 0.999" lines, descending.
  std::vector<std::string> format_top(std::size_t top_n,
                                      int decimals = 3) const;
};

// "dining table" -> "Dining table" (presentation form used in output tables).
std::string display_name(const std::string& name);
std::string format_label_line(const std::string& name, double probability,
                              int decimals = 3);

// sigma(forward(image)) for one [3,H,W] image, batch norm frozen.
LabelProbabilities predict_probabilities(Model& model, const TensorPtr& image,
                                         std::vector<std::string> class_names);

std::vector<std::uint8_t> decide_labels(const LabelProbabilities& probs,
                                        const DecisionRule& rule);

}  // namespace model
}  // namespace mlrn
