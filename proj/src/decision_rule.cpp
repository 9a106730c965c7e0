#include "mlrn/decision_rule.hpp"

#include <algorithm>
#include <numeric>

namespace mlrn {

DecisionRule DecisionRule::make_threshold(double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw ConfigError("decision rule: threshold must be in [0,1], got " +
                      std::to_string(t));
  }
  DecisionRule r;
  r.kind = Kind::kThreshold;
  r.threshold = t;
  return r;
}

DecisionRule DecisionRule::make_top_k(std::size_t k) {
  if (k < 1) throw ConfigError("decision rule: k must be >= 1");
  DecisionRule r;
  r.kind = Kind::kTopK;
  r.k = k;
  return r;
}

DecisionRule DecisionRule::parse(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw ConfigError("decision rule: expected threshold:<t> or topk:<k>, got '" +
                      text + "'");
  }
  const std::string head = text.substr(0, colon);
  const std::string tail = text.substr(colon + 1);
  try {
    if (head == "threshold") {
      std::size_t used = 0;
      const double t = std::stod(tail, &used);
      if (used != tail.size()) throw std::invalid_argument(tail);
      return make_threshold(t);
    }
    if (head == "topk") {
      std::size_t used = 0;
      const long long k = std::stoll(tail, &used);
      if (used != tail.size() || k < 0) throw std::invalid_argument(tail);
      return make_top_k(static_cast<std::size_t>(k));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("decision rule: bad parameter '" + tail + "' in '" +
                      text + "'");
  }
  throw ConfigError("decision rule: unknown kind '" + head + "'");
}

std::string DecisionRule::str() const {
  if (kind == Kind::kThreshold) {
    std::string t = std::to_string(threshold);
    // trim trailing zeros but keep one decimal
    while (t.size() > 1 && t.back() == '0' && t[t.size() - 2] != '.')
      t.pop_back();
    return "threshold:" + t;
  }
  return "topk:" + std::to_string(k);
}

std::vector<std::uint8_t> apply_rule(std::span<const double> probs,
                                     const DecisionRule& rule) {
  std::vector<std::uint8_t> labels(probs.size(), 0);
  if (rule.kind == DecisionRule::Kind::kThreshold) {
    if (!(rule.threshold >= 0.0 && rule.threshold <= 1.0)) {
      throw ConfigError("decision rule: threshold must be in [0,1]");
    }
    for (std::size_t j = 0; j < probs.size(); ++j) {
      labels[j] = probs[j] >= rule.threshold ? 1 : 0;
    }
    return labels;
  }
  if (rule.k < 1 || rule.k > probs.size()) {
    throw ConfigError("decision rule: k=" + std::to_string(rule.k) +
                      " out of range for " + std::to_string(probs.size()) +
                      " classes");
  }
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return probs[a] > probs[b];
                   });
  for (std::size_t i = 0; i < rule.k; ++i) labels[order[i]] = 1;
  return labels;
}

}  // namespace mlrn
