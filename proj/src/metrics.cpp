#include "mlrn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace mlrn {
namespace metrics {

namespace {

std::string fmt(double v, int decimals) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v, int decimals) {
  return v ? fmt(*v, decimals) : std::string("n/a");
}

std::vector<std::size_t> rank_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return scores[a] > scores[b];
                   });
  return order;
}

}  // namespace

ScoreMatrix ScoreMatrix::create(std::size_t rows, std::size_t cols,
                                std::vector<double> scores,
                                std::vector<std::int64_t> row_ids,
                                std::vector<std::string> col_names) {
  if (rows < 1 || cols < 1) {
    throw ShapeError("ScoreMatrix: needs at least one row and one column");
  }
  if (scores.size() != rows * cols) {
    throw ShapeError("ScoreMatrix: " + std::to_string(rows) + "x" +
                     std::to_string(cols) + " needs " +
                     std::to_string(rows * cols) + " scores, got " +
                     std::to_string(scores.size()));
  }
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) {
      throw ValidationError("ScoreMatrix: scores must lie in [0,1], got " +
                            std::to_string(s));
    }
  }
  if (row_ids.empty()) {
    row_ids.resize(rows);
    std::iota(row_ids.begin(), row_ids.end(), 0);
  }
  if (col_names.empty()) {
    for (std::size_t j = 0; j < cols; ++j)
      col_names.push_back("class_" + std::to_string(j));
  }
  if (row_ids.size() != rows || col_names.size() != cols) {
    throw ShapeError("ScoreMatrix: id lists must match matrix dimensions");
  }
  ScoreMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.scores = std::move(scores);
  m.row_ids = std::move(row_ids);
  m.col_names = std::move(col_names);
  return m;
}

TargetMatrix TargetMatrix::create(std::size_t rows, std::size_t cols,
                                  std::vector<std::uint8_t> targets) {
  if (rows < 1 || cols < 1) {
    throw ShapeError("TargetMatrix: needs at least one row and one column");
  }
  if (targets.size() != rows * cols) {
    throw ShapeError("TargetMatrix: wrong number of entries");
  }
  for (std::uint8_t t : targets) {
    if (t > 1) {
      throw ValidationError("TargetMatrix: entries must be 0 or 1");
    }
  }
  TargetMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.targets = std::move(targets);
  return m;
}

std::optional<double> precision(const ConfusionCounts& c) {
  const std::size_t denom = c.tp + c.fp;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(denom);
}

std::optional<double> recall(const ConfusionCounts& c) {
  const std::size_t denom = c.tp + c.fn;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(denom);
}

double f1(double p, double r) {
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("average_precision: scores and labels differ in length");
  }
  std::size_t total_pos = 0;
  for (std::uint8_t l : labels) total_pos += l;
  if (total_pos == 0) return std::nullopt;

  const auto order = rank_order(scores);
  double ap = 0.0;
  std::size_t cum = 0;
  for (std::size_t k = 1; k <= order.size(); ++k) {
    if (labels[order[k - 1]]) {
      ++cum;
      // (R_k - R_{k-1}) * P_k; recall only moves at positive ranks
      ap += (1.0 / static_cast<double>(total_pos)) *
            (static_cast<double>(cum) / static_cast<double>(k));
    }
  }
  return ap;
}

std::vector<PrPoint> pr_curve(std::span<const double> scores,
                              std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("pr_curve: scores and labels differ in length");
  }
  std::size_t total_pos = 0;
  for (std::uint8_t l : labels) total_pos += l;
  if (total_pos == 0) return {};

  const auto order = rank_order(scores);
  std::vector<PrPoint> curve;
  curve.reserve(order.size());
  std::size_t cum = 0;
  for (std::size_t k = 1; k <= order.size(); ++k) {
    cum += labels[order[k - 1]];
    curve.push_back(
        PrPoint{static_cast<double>(cum) / static_cast<double>(total_pos),
                static_cast<double>(cum) / static_cast<double>(k)});
  }
  return curve;
}

MapResult mean_average_precision(const ScoreMatrix& scores,
                                 const TargetMatrix& targets) {
  if (scores.rows != targets.rows || scores.cols != targets.cols) {
    throw ShapeError("mean_average_precision: matrices are not aligned");
  }
  MapResult result;
  result.per_class.resize(scores.cols);
  double total = 0.0;
  std::size_t defined = 0;
  std::vector<double> col_scores(scores.rows);
  std::vector<std::uint8_t> col_labels(scores.rows);
  for (std::size_t j = 0; j < scores.cols; ++j) {
    for (std::size_t i = 0; i < scores.rows; ++i) {
      col_scores[i] = scores.at(i, j);
      col_labels[i] = targets.at(i, j);
    }
    result.per_class[j] = average_precision(col_scores, col_labels);
    if (result.per_class[j]) {
      total += *result.per_class[j];
      ++defined;
    } else {
      ++result.excluded;
    }
  }
  if (defined > 0) result.map = total / static_cast<double>(defined);
  return result;
}

ConfusionCounts confusion(std::span<const std::uint8_t> predicted,
                          std::span<const std::uint8_t> actual) {
  if (predicted.size() != actual.size()) {
    throw ShapeError("confusion: vectors differ in length");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] && actual[i]) ++c.tp;
    else if (predicted[i] && !actual[i]) ++c.fp;
    else if (!predicted[i] && actual[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

MetricsReport table3_report(const ScoreMatrix& scores,
                            const TargetMatrix& targets,
                            const DecisionRule& rule) {
  if (scores.rows != targets.rows || scores.cols != targets.cols) {
    throw ShapeError("table3_report: matrices are not aligned");
  }
  const std::size_t n = scores.rows, c = scores.cols;

  std::vector<std::uint8_t> predictions(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = apply_rule(scores.row(i), rule);
    std::copy(row.begin(), row.end(), predictions.begin() + i * c);
  }

  std::vector<ConfusionCounts> per_class(c);
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const bool p = predictions[i * c + j], a = targets.at(i, j);
      if (p && a) ++per_class[j].tp;
      else if (p && !a) ++per_class[j].fp;
      else if (!p && a) ++per_class[j].fn;
      else ++per_class[j].tn;
    }
  }

  ConfusionCounts pooled;
  for (const auto& cc : per_class) {
    pooled.tp += cc.tp;
    pooled.fp += cc.fp;
    pooled.fn += cc.fn;
    pooled.tn += cc.tn;
  }

  MetricsReport report;
  report.decision_rule = rule;
  report.class_names = scores.col_names;
  report.op = precision(pooled);
  report.or_ = recall(pooled);

  double cp_sum = 0.0, cr_sum = 0.0;
  std::size_t cp_n = 0, cr_n = 0;
  for (const auto& cc : per_class) {
    if (auto p = precision(cc)) {
      cp_sum += *p;
      ++cp_n;
    }
    if (auto r = recall(cc)) {
      cr_sum += *r;
      ++cr_n;
    }
  }
  if (cp_n) report.cp = cp_sum / static_cast<double>(cp_n);
  if (cr_n) report.cr = cr_sum / static_cast<double>(cr_n);

  if (report.op && report.or_) report.of1 = f1(*report.op, *report.or_);
  if (report.cp && report.cr) report.cf1 = f1(*report.cp, *report.cr);

  auto map_result = mean_average_precision(scores, targets);
  report.map = map_result.map;
  report.per_class_ap = std::move(map_result.per_class);
  report.excluded_classes = map_result.excluded;

  report.pr_curves.resize(c);
  std::vector<double> col_scores(n);
  std::vector<std::uint8_t> col_labels(n);
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      col_scores[i] = scores.at(i, j);
      col_labels[i] = targets.at(i, j);
    }
    report.pr_curves[j] = pr_curve(col_scores, col_labels);
  }
  return report;
}

CooccurrenceMatrix cooccurrence_matrix(const TargetMatrix& targets) {
  const std::size_t n = targets.rows, c = targets.cols;
  CooccurrenceMatrix m;
  m.classes = c;
  m.values.assign(c * c, std::numeric_limits<double>::quiet_NaN());
  m.occurrences.assign(c, 0);
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t i = 0; i < n; ++i) m.occurrences[j] += targets.at(i, j);
  }
  for (std::size_t a = 0; a < c; ++a) {
    if (m.occurrences[a] == 0) continue;  // undefined row
    for (std::size_t b = 0; b < c; ++b) {
      std::size_t joint = 0;
      for (std::size_t i = 0; i < n; ++i) {
        joint += targets.at(i, a) && targets.at(i, b);
      }
      m.values[a * c + b] =
          static_cast<double>(joint) / static_cast<double>(m.occurrences[a]);
    }
  }
  return m;
}

std::string to_json_string(const MetricsReport& report) {
  nlohmann::json j;
  auto set_opt = [&j](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
    else j[key] = nullptr;
  };
  set_opt("map", report.map);
  j["per_class_ap"] = nlohmann::json::array();
  for (const auto& ap : report.per_class_ap) {
    if (ap) j["per_class_ap"].push_back(*ap);
    else j["per_class_ap"].push_back(nullptr);
  }
  set_opt("op", report.op);
  set_opt("cp", report.cp);
  set_opt("or", report.or_);
  set_opt("cr", report.cr);
  set_opt("of1", report.of1);
  set_opt("cf1", report.cf1);
  j["excluded_classes"] = report.excluded_classes;
  j["decision_rule"] = report.decision_rule.str();
  return j.dump(2) + "\n";
}

std::string to_text_table(const MetricsReport& report) {
  std::ostringstream os;
  auto row = [&os](const std::string& label, const std::string& value) {
    os << label;
    for (std::size_t i = label.size(); i < 22; ++i) os << ' ';
    os << value << "\n";
  };
  // Precisions carry four decimals, everything else three.
  row("MAP", fmt_opt(report.map, 3));
  row("Overall Precision", fmt_opt(report.op, 4));
  row("Class Precision", fmt_opt(report.cp, 4));
  row("Overall Recall", fmt_opt(report.or_, 3));
  row("Class Recall", fmt_opt(report.cr, 3));
  row("Overall F1 Score", fmt_opt(report.of1, 3));
  row("Class F1 Score", fmt_opt(report.cf1, 3));
  return os.str();
}

std::string pr_curve_csv(const std::string& class_name,
                         const std::vector<PrPoint>& curve) {
  std::ostringstream os;
  os << "class,rank,recall,precision\n";
  for (std::size_t k = 0; k < curve.size(); ++k) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g,%.10g", curve[k].recall,
                  curve[k].precision);
    os << class_name << "," << (k + 1) << "," << buf << "\n";
  }
  return os.str();
}

}  // namespace metrics
}  // namespace mlrn
