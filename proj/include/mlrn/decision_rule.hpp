#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mlrn/errors.hpp"

namespace mlrn {

// Probability -> label conversion: fixed threshold or top-k.
struct DecisionRule {
  enum class Kind { kThreshold, kTopK };

  Kind kind = Kind::kThreshold;
  double threshold = 0.5;
  std::size_t k = 3;

  static DecisionRule make_threshold(double t);
  static DecisionRule make_top_k(std::size_t k);

  // Accepts "threshold:<t>" or "topk:<k>".
  static DecisionRule parse(const std::string& text);
  std::string str() const;
};

// Threshold: label j set iff probs[j] >= t. Top-k: exactly the k highest
// probabilities, ties broken by ascending class index.
std::vector<std::uint8_t> apply_rule(std::span<const double> probs,
                                     const DecisionRule& rule);

}  // namespace mlrn
