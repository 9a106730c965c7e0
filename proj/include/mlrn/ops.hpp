#pragma once

#include <cstddef>
#include <vector>

#include "mlrn/tensor.hpp"

namespace mlrn {

// Every op takes an optional tape. With a tape, the op appends a backward
// rule whenever the output depends on a requires_grad tensor; with nullptr
// it is a plain forward computation.

// Cross-correlation with zero padding.
// input [N,Cin,H,W], kernel [Cout,Cin,kH,kW], bias [Cout].
// Output size (H + 2*padding - kH) / stride + 1 must be a positive integer.
TensorPtr conv2d(const TensorPtr& input, const TensorPtr& kernel,
                 const TensorPtr& bias, std::size_t stride,
                 std::size_t padding, Tape* tape = nullptr);

// Elementwise max(0, x). Subgradient at 0 is 0.
TensorPtr relu(const TensorPtr& x, Tape* tape = nullptr);

// Elementwise sum of identically shaped tensors (the skip-connection add).
TensorPtr add(const TensorPtr& a, const TensorPtr& b, Tape* tape = nullptr);

enum class BatchNormMode { kTrain, kFrozen };

// Per-channel running statistics, updated in train mode only.
// Running statistics live in tensors so checkpoints can address them by name
// and restore them in place; they are never trainable.
struct BatchNormState {
  TensorPtr running_mean;
  TensorPtr running_var;

  explicit BatchNormState(std::size_t channels = 1)
      : running_mean(zeros({channels})), running_var(full({channels}, 1.0)) {}
};

// Train mode normalizes with batch statistics (biased variance) and folds
// them into the running stats with factor `ema`; frozen mode normalizes with
// the running stats only and never mutates state.
TensorPtr batch_norm(const TensorPtr& x, const TensorPtr& scale,
                     const TensorPtr& shift, BatchNormState& state,
                     BatchNormMode mode, double epsilon = 1e-5,
                     double ema = 0.1, Tape* tape = nullptr);

// [N,C,H,W] -> [N,C]; each entry is the mean over its H*W plane.
TensorPtr global_avg_pool(const TensorPtr& x, Tape* tape = nullptr);

// x [N,D] * weight^T [D,C] + bias [C] -> [N,C].
TensorPtr dense(const TensorPtr& x, const TensorPtr& weight,
                const TensorPtr& bias, Tape* tape = nullptr);

// Numerically stable logistic; outputs strictly inside (0,1).
double sigmoid_scalar(double x);
TensorPtr sigmoid(const TensorPtr& x, Tape* tape = nullptr);

// Mean-over-samples, sum-over-classes binary cross-entropy, computed from
// logits in the form max(z,0) - z*y + log1p(exp(-|z|)). Targets must be
// exactly 0 or 1.
TensorPtr bce_loss(const TensorPtr& logits, const TensorPtr& targets,
                   Tape* tape = nullptr);

// Sum of all entries, as a scalar.
TensorPtr sum(const TensorPtr& x, Tape* tape = nullptr);

}  // namespace mlrn
