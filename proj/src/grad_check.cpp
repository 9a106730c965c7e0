#include "mlrn/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace mlrn {

double grad_check(const ScalarFn& f, const std::vector<TensorPtr>& inputs,
                  double eps) {
  if (eps <= 0.0) throw ConfigError("grad_check: eps must be > 0");

  Tape tape;
  TensorPtr loss = f(inputs, &tape);
  if (loss->numel() != 1) {
    throw ConfigError("grad_check: f must return a scalar, got shape " +
                      shape_str(loss->shape));
  }
  backward(loss, tape);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& in : inputs) {
    in->ensure_grad();  // unreachable inputs check out as zero
    analytic.push_back(in->grad);
  }

  double max_err = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor& t = *inputs[i];
    for (std::size_t j = 0; j < t.numel(); ++j) {
      const double orig = t.data[j];
      t.data[j] = orig + eps;
      const double fp = f(inputs, nullptr)->data[0];
      t.data[j] = orig - eps;
      const double fm = f(inputs, nullptr)->data[0];
      t.data[j] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[i][j];
      const double err = std::abs(a - numeric) /
                         std::max({1.0, std::abs(a), std::abs(numeric)});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace mlrn
