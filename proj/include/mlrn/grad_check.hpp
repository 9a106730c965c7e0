#pragma once

#include <functional>
#include <vector>

#include "mlrn/tensor.hpp"

namespace mlrn {

// A deterministic scalar-valued function of the given tensors. Called with a
// tape for the analytic pass and with nullptr for the numeric evaluations.
using ScalarFn =
    std::function<TensorPtr(const std::vector<TensorPtr>&, Tape*)>;

// Central-difference check of the analytic gradients of f at `inputs`.
// Returns max over coordinates of |analytic - numeric| /
// max(1, |analytic|, |numeric|). Inputs are restored bit-exactly.
double grad_check(const ScalarFn& f, const std::vector<TensorPtr>& inputs,
                  double eps = 1e-5);

}  // namespace mlrn
