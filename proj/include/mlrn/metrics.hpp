#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlrn/decision_rule.hpp"
#include "mlrn/errors.hpp"

namespace mlrn {
namespace metrics {

// N x C predicted probabilities with their image/category identities.
struct ScoreMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> scores;  // row-major, entries in [0,1]
  std::vector<std::int64_t> row_ids;
  std::vector<std::string> col_names;

  static ScoreMatrix create(std::size_t rows, std::size_t cols,
                            std::vector<double> scores,
                            std::vector<std::int64_t> row_ids = {},
                            std::vector<std::string> col_names = {});

  double at(std::size_t i, std::size_t j) const { return scores[i * cols + j]; }
  std::span<const double> row(std::size_t i) const {
    return {scores.data() + i * cols, cols};
  }
};

// N x C ground-truth binaries aligned with a ScoreMatrix.
struct TargetMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> targets;

  static TargetMatrix create(std::size_t rows, std::size_t cols,
                             std::vector<std::uint8_t> targets);

  std::uint8_t at(std::size_t i, std::size_t j) const {
    return targets[i * cols + j];
  }
};

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

// The Table-III aggregates plus per-class detail. Metrics that have no
// defined value (empty denominators) are nullopt, rendered "n/a".
struct MetricsReport {
  std::optional<double> map;
  std::vector<std::optional<double>> per_class_ap;
  std::optional<double> op, cp, or_, cr, of1, cf1;
  std::vector<std::vector<PrPoint>> pr_curves;
  std::size_t excluded_classes = 0;  // classes with zero positives
  DecisionRule decision_rule;
  std::vector<std::string> class_names;  // not serialized to JSON
};

struct MapResult {
  std::optional<double> map;
  std::vector<std::optional<double>> per_class;
  std::size_t excluded = 0;
};

// tp/(tp+fp); undefined when nothing was predicted positive.
std::optional<double> precision(const ConfusionCounts& c);

// tp/(tp+fn); undefined when the class has no positives.
std::optional<double> recall(const ConfusionCounts& c);

// 2pr/(p+r), 0 when p+r == 0.
double f1(double p, double r);

// Rank-based non-interpolated AP (ties broken by ascending index).
// Undefined when labels contain no positives.
std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels);

// One (recall, precision) point per rank; empty when there are no positives.
std::vector<PrPoint> pr_curve(std::span<const double> scores,
                              std::span<const std::uint8_t> labels);

// Unweighted mean of the defined per-class APs.
MapResult mean_average_precision(const ScoreMatrix& scores,
                                 const TargetMatrix& targets);

ConfusionCounts confusion(std::span<const std::uint8_t> predicted,
                          std::span<const std::uint8_t> actual);

// Applies the rule row by row, then assembles mAP, the overall (micro,
// pooled counts) and class (macro, per-class means) precision/recall/F1,
// and per-class PR curves.
MetricsReport table3_report(const ScoreMatrix& scores,
                            const TargetMatrix& targets,
                            const DecisionRule& rule);

// Empirical P(label j present | label i present); NaN rows for classes that
// never occur; diagonal 1 where class i occurs.
struct CooccurrenceMatrix {
  std::size_t classes = 0;
  std::vector<double> values;  // row-major C x C, NaN = undefined
  std::vector<std::size_t> occurrences;

  double at(std::size_t i, std::size_t j) const {
    return values[i * classes + j];
  }
};

CooccurrenceMatrix cooccurrence_matrix(const TargetMatrix& targets);

// JSON object with exactly the fields: map, per_class_ap, op, cp, or, cr,
// of1, cf1, excluded_classes, decision_rule. Undefined values become null.
std::string to_json_string(const MetricsReport& report);

// Plain-text table with the Table-III row labels.
std::string to_text_table(const MetricsReport& report);

// "rank,recall,precision" rows for one class, with a header line.
std::string pr_curve_csv(const std::string& class_name,
                         const std::vector<PrPoint>& curve);

}  // namespace metrics
}  // namespace mlrn
