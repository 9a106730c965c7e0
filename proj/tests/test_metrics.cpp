#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include <json.hpp>

#include "mlrn/decision_rule.hpp"
#include "mlrn/errors.hpp"
#include "mlrn/metrics.hpp"
#include "oracles.hpp"

using namespace mlrn;
using namespace mlrn::metrics;

namespace {

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// decision rules
// ---------------------------------------------------------------------------

TEST_CASE("decision rules parse and print round-trip") {
  auto t = DecisionRule::parse("threshold:0.5");
  CHECK(t.kind == DecisionRule::Kind::kThreshold);
  CHECK(t.threshold == 0.5);
  CHECK(t.str() == "threshold:0.5");

  auto k = DecisionRule::parse("topk:3");
  CHECK(k.kind == DecisionRule::Kind::kTopK);
  CHECK(k.k == 3);
  CHECK(k.str() == "topk:3");

  CHECK_THROWS_AS(DecisionRule::parse("argmax"), ConfigError);
  CHECK_THROWS_AS(DecisionRule::parse("threshold:1.5"), ConfigError);
  CHECK_THROWS_AS(DecisionRule::parse("threshold:-0.1"), ConfigError);
  CHECK_THROWS_AS(DecisionRule::parse("topk:0"), ConfigError);
  CHECK_THROWS_AS(DecisionRule::parse("topk:x"), ConfigError);
  CHECK_THROWS_AS(DecisionRule::parse(""), ConfigError);
}

TEST_CASE("threshold rule includes the boundary") {
  std::vector<double> probs = {0.5, 0.49999, 0.51};
  auto labels = apply_rule(probs, DecisionRule::make_threshold(0.5));
  CHECK(labels == std::vector<std::uint8_t>{1, 0, 1});
}

TEST_CASE("topk picks exactly k with ascending-index tie breaks") {
  std::vector<double> probs = {0.4, 0.9, 0.4, 0.1};
  auto two = apply_rule(probs, DecisionRule::make_top_k(2));
  CHECK(two == std::vector<std::uint8_t>{1, 1, 0, 0});  // index 0 beats 2

  auto all = apply_rule(probs, DecisionRule::make_top_k(4));
  CHECK(all == std::vector<std::uint8_t>{1, 1, 1, 1});

  // "exactly k labels" cannot hold with fewer than k classes, so reject.
  CHECK_THROWS_AS(apply_rule(probs, DecisionRule::make_top_k(9)), ConfigError);
}

TEST_CASE("rules agree with the naive implementations on random inputs") {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> pdist(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> kdist(1, 6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> probs(6);
    for (double& p : probs) p = pdist(rng);
    const double t = pdist(rng);
    CHECK(apply_rule(probs, DecisionRule::make_threshold(t)) ==
          oracle::threshold_naive(probs, t));
    const std::size_t k = kdist(rng);
    CHECK(apply_rule(probs, DecisionRule::make_top_k(k)) ==
          oracle::topk_naive(probs, k));
  }
}

// ---------------------------------------------------------------------------
// matrices
// ---------------------------------------------------------------------------

TEST_CASE("score matrix validates its entries") {
  CHECK_THROWS_AS(ScoreMatrix::create(1, 2, {0.5, 1.5}), ValidationError);
  CHECK_THROWS_AS(ScoreMatrix::create(1, 2, {-0.1, 0.5}), ValidationError);
  CHECK_THROWS_AS(ScoreMatrix::create(2, 2, {0.5}), ShapeError);
  CHECK_THROWS_AS(ScoreMatrix::create(1, 0, {}), ShapeError);

  auto m = ScoreMatrix::create(2, 3, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  CHECK(m.row_ids == std::vector<std::int64_t>{0, 1});
  CHECK(m.col_names == std::vector<std::string>{"class_0", "class_1", "class_2"});
  CHECK(m.at(1, 2) == 0.6);
}

TEST_CASE("target matrix rejects non-binary values") {
  CHECK_THROWS_AS(TargetMatrix::create(1, 2, {0, 2}), ValidationError);
  auto t = TargetMatrix::create(2, 2, {1, 0, 0, 1});
  CHECK(t.at(0, 0) == 1);
  CHECK(t.at(1, 0) == 0);
}

// ---------------------------------------------------------------------------
// precision / recall / f1
// ---------------------------------------------------------------------------

TEST_CASE("precision and recall handle empty denominators") {
  ConfusionCounts c{.tp = 3, .fp = 1, .fn = 2, .tn = 4};
  CHECK(*precision(c) == 0.75);
  CHECK(*recall(c) == 0.6);

  ConfusionCounts nothing_predicted{.tp = 0, .fp = 0, .fn = 5, .tn = 5};
  CHECK_FALSE(precision(nothing_predicted).has_value());
  CHECK(*recall(nothing_predicted) == 0.0);

  ConfusionCounts no_positives{.tp = 0, .fp = 3, .fn = 0, .tn = 7};
  CHECK(*precision(no_positives) == 0.0);
  CHECK_FALSE(recall(no_positives).has_value());
}

TEST_CASE("f1 is the harmonic mean with a zero guard") {
  CHECK(f1(1.0, 1.0) == 1.0);
  CHECK(f1(0.0, 0.0) == 0.0);
  CHECK(f1(0.5, 1.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("f1 reproduces the published aggregate pairs") {
  // Rendered at three decimals these must match the reference report.
  CHECK(fmt3(f1(0.9947, 0.310)) == "0.473");
  CHECK(fmt3(f1(0.9927, 0.255)) == "0.406");
}

// ---------------------------------------------------------------------------
// average precision
// ---------------------------------------------------------------------------

TEST_CASE("average precision on the worked three-item example") {
  std::vector<double> scores = {0.9, 0.7, 0.3};
  std::vector<std::uint8_t> labels = {1, 0, 1};
  auto ap = average_precision(scores, labels);
  REQUIRE(ap.has_value());
  // positives at ranks 1 and 3: (1/2) * (1/1 + 2/3)
  CHECK(*ap == doctest::Approx(5.0 / 6.0).epsilon(1e-9));
}

TEST_CASE("a perfect ranking scores exactly 1") {
  std::vector<double> scores = {0.9, 0.8, 0.2, 0.1};
  std::vector<std::uint8_t> labels = {1, 1, 0, 0};
  CHECK(*average_precision(scores, labels) == 1.0);
}

TEST_CASE("average precision is undefined without positives") {
  std::vector<double> scores = {0.9, 0.1};
  std::vector<std::uint8_t> labels = {0, 0};
  CHECK_FALSE(average_precision(scores, labels).has_value());
  CHECK(pr_curve(scores, labels).empty());
}

TEST_CASE("all-positive labels give AP 1 regardless of scores") {
  std::vector<double> scores = {0.2, 0.9, 0.5};
  std::vector<std::uint8_t> labels = {1, 1, 1};
  CHECK(*average_precision(scores, labels) == 1.0);
}

TEST_CASE("average precision only depends on the ranking") {
  std::mt19937_64 rng(103);
  std::uniform_real_distribution<double> sdist(0.01, 0.99);
  std::bernoulli_distribution bdist(0.5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> scores(10);
    std::vector<std::uint8_t> labels(10);
    for (double& s : scores) s = sdist(rng);
    bool any = false;
    for (auto& l : labels) {
      l = bdist(rng);
      any |= l != 0;
    }
    if (!any) labels[0] = 1;

    std::vector<double> squashed(10);
    for (std::size_t i = 0; i < 10; ++i) {
      squashed[i] = scores[i] * scores[i];  // strictly increasing on (0,1)
    }
    auto a = average_precision(scores, labels);
    auto b = average_precision(squashed, labels);
    REQUIRE(a.has_value());
    REQUIRE(b.has_value());
    CHECK(*a == doctest::Approx(*b).epsilon(1e-12));
  }
}

TEST_CASE("ties at the same score resolve by ascending index") {
  // With 0.5 ties, index order decides ranks: positive at index 0 ranks
  // above the negative at index 1.
  std::vector<double> scores = {0.5, 0.5};
  std::vector<std::uint8_t> pos_first = {1, 0};
  std::vector<std::uint8_t> neg_first = {0, 1};
  CHECK(*average_precision(scores, pos_first) == 1.0);
  CHECK(*average_precision(scores, neg_first) == 0.5);
}

TEST_CASE("rank-based AP equals the threshold-sweep oracle on tie-free scores") {
  std::mt19937_64 rng(107);
  std::uniform_real_distribution<double> sdist(0.0, 1.0);
  std::bernoulli_distribution bdist(0.3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + trial % 17;
    std::vector<double> scores(n);
    std::vector<std::uint8_t> labels(n);
    for (double& s : scores) s = sdist(rng);  // continuous draws: ties have measure zero
    for (auto& l : labels) l = bdist(rng);
    auto fast = average_precision(scores, labels);
    auto slow = oracle::ap_sweep(scores, labels);
    CHECK(fast.has_value() == slow.has_value());
    if (fast && slow) CHECK(*fast == doctest::Approx(*slow).epsilon(1e-9));
  }
}

TEST_CASE("pr curve has one point per rank and recalls never decrease") {
  std::vector<double> scores = {0.9, 0.7, 0.3};
  std::vector<std::uint8_t> labels = {1, 0, 1};
  auto curve = pr_curve(scores, labels);
  REQUIRE(curve.size() == 3);
  CHECK(curve[0].recall == 0.5);
  CHECK(curve[0].precision == 1.0);
  CHECK(curve[1].recall == 0.5);
  CHECK(curve[1].precision == 0.5);
  CHECK(curve[2].recall == 1.0);
  CHECK(curve[2].precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("AP equals the precision mass accumulated along its own pr curve") {
  std::mt19937_64 rng(109);
  std::uniform_real_distribution<double> sdist(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<double> scores(12);
    std::vector<std::uint8_t> labels(12);
    for (double& s : scores) s = sdist(rng);
    std::size_t pos = 0;
    for (auto& l : labels) {
      l = sdist(rng) < 0.4;
      pos += l;
    }
    if (pos == 0) labels[3] = 1, pos = 1;

    auto curve = pr_curve(scores, labels);
    auto ap = average_precision(scores, labels);
    REQUIRE(curve.size() == 12);
    double acc = 0.0, prev_recall = 0.0;
    for (const auto& pt : curve) {
      CHECK(pt.recall >= prev_recall);  // monotone in rank
      acc += (pt.recall - prev_recall) * pt.precision;
      prev_recall = pt.recall;
    }
    CHECK(acc == doctest::Approx(*ap).epsilon(1e-12));
  }
}

// ---------------------------------------------------------------------------
// mean average precision
// ---------------------------------------------------------------------------

TEST_CASE("mAP averages per-class APs and tracks exclusions") {
  // class 0 perfectly ranked (AP 1), class 1 inverted pair (AP 0.5),
  // class 2 has no positives and is excluded.
  auto scores = ScoreMatrix::create(2, 3, {0.9, 0.1, 0.8, 0.1, 0.9, 0.2});
  auto targets = TargetMatrix::create(2, 3, {1, 1, 0, 0, 0, 0});
  auto result = mean_average_precision(scores, targets);
  REQUIRE(result.per_class.size() == 3);
  CHECK(*result.per_class[0] == 1.0);
  CHECK(*result.per_class[1] == 0.5);
  CHECK_FALSE(result.per_class[2].has_value());
  CHECK(result.excluded == 1);
  CHECK(*result.map == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("mAP is undefined when every class lacks positives") {
  auto scores = ScoreMatrix::create(2, 2, {0.9, 0.1, 0.8, 0.1});
  auto targets = TargetMatrix::create(2, 2, {0, 0, 0, 0});
  auto result = mean_average_precision(scores, targets);
  CHECK_FALSE(result.map.has_value());
  CHECK(result.excluded == 2);
}

// ---------------------------------------------------------------------------
// the full report
// ---------------------------------------------------------------------------

TEST_CASE("a perfect predictor reports 1.0 across the board") {
  auto scores = ScoreMatrix::create(3, 2, {0.9, 0.1, 0.1, 0.9, 0.9, 0.9});
  auto targets = TargetMatrix::create(3, 2, {1, 0, 0, 1, 1, 1});
  auto report = table3_report(scores, targets, DecisionRule::make_threshold(0.5));
  for (auto v : {report.map, report.op, report.cp, report.or_, report.cr,
                 report.of1, report.cf1}) {
    REQUIRE(v.has_value());
    CHECK(*v == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(report.excluded_classes == 0);
}

TEST_CASE("report matches the naive recomputation on random problems") {
  std::mt19937_64 rng(113);
  std::uniform_real_distribution<double> sdist(0.0, 1.0);
  std::uniform_real_distribution<double> tdist(0.1, 0.9);
  std::uniform_int_distribution<int> ndist(1, 20);
  std::uniform_int_distribution<int> cdist(1, 5);
  std::bernoulli_distribution bdist(0.35);
  std::bernoulli_distribution use_topk(0.5);

  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = ndist(rng);
    const std::size_t c = cdist(rng);
    std::vector<double> s(n * c);
    std::vector<std::uint8_t> t(n * c);
    for (double& v : s) v = sdist(rng);  // continuous: tie-free w.p. 1
    for (auto& v : t) v = bdist(rng);

    DecisionRule rule = use_topk(rng)
                            ? DecisionRule::make_top_k(
                                  1 + static_cast<std::size_t>(rng() % c))
                            : DecisionRule::make_threshold(tdist(rng));

    std::vector<std::uint8_t> naive_pred(n * c);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> row(s.begin() + i * c, s.begin() + (i + 1) * c);
      auto pred = rule.kind == DecisionRule::Kind::kTopK
                      ? oracle::topk_naive(row, rule.k)
                      : oracle::threshold_naive(row, rule.threshold);
      std::copy(pred.begin(), pred.end(), naive_pred.begin() + i * c);
    }
    auto want = oracle::table3_naive(s, t, naive_pred, n, c);

    auto report = table3_report(ScoreMatrix::create(n, c, s),
                                TargetMatrix::create(n, c, t), rule);

    auto same = [](const std::optional<double>& a,
                   const std::optional<double>& b) {
      if (a.has_value() != b.has_value()) return false;
      if (!a) return true;
      return std::abs(*a - *b) <= 1e-9;
    };
    CHECK(same(report.map, want.map));
    CHECK(same(report.op, want.op));
    CHECK(same(report.cp, want.cp));
    CHECK(same(report.or_, want.or_));
    CHECK(same(report.cr, want.cr));
    CHECK(same(report.of1, want.of1));
    CHECK(same(report.cf1, want.cf1));
    CHECK(report.excluded_classes == want.excluded);
    REQUIRE(report.per_class_ap.size() == want.per_class_ap.size());
    for (std::size_t j = 0; j < c; ++j) {
      CHECK(same(report.per_class_ap[j], want.per_class_ap[j]));
    }
  }
}

TEST_CASE("report rejects mismatched score/target shapes") {
  auto scores = ScoreMatrix::create(2, 2, {0.1, 0.2, 0.3, 0.4});
  auto targets = TargetMatrix::create(2, 3, {1, 0, 0, 0, 1, 0});
  CHECK_THROWS_AS(
      table3_report(scores, targets, DecisionRule::make_threshold(0.5)),
      ShapeError);
}

TEST_CASE("top-k beats a strict threshold on recall when scores are timid") {
  // Probabilities all below 0.9: the threshold rule predicts nothing, while
  // top-3 always commits to three labels.
  std::vector<double> s = {0.6, 0.5, 0.4, 0.1, 0.55, 0.45, 0.35, 0.2};
  std::vector<std::uint8_t> t = {1, 1, 0, 0, 1, 0, 1, 0};
  auto scores = ScoreMatrix::create(2, 4, s);
  auto targets = TargetMatrix::create(2, 4, t);
  auto strict =
      table3_report(scores, targets, DecisionRule::make_threshold(0.9));
  auto topk = table3_report(scores, targets, DecisionRule::make_top_k(3));
  REQUIRE(topk.or_.has_value());
  REQUIRE(strict.or_.has_value());
  CHECK(*topk.or_ > *strict.or_);
  CHECK(*strict.or_ == 0.0);
}

// ---------------------------------------------------------------------------
// co-occurrence
// ---------------------------------------------------------------------------

TEST_CASE("co-occurrence conditionals on a tiny hand example") {
  // 4 images, 3 classes.
  //   image 0: {0, 1}
  //   image 1: {0}
  //   image 2: {0, 1}
  //   image 3: {2}
  auto targets = TargetMatrix::create(4, 3, {1, 1, 0, 1, 0, 0, 1, 1, 0, 0, 0, 1});
  auto m = cooccurrence_matrix(targets);
  CHECK(m.occurrences == std::vector<std::size_t>{3, 2, 1});
  CHECK(m.at(0, 0) == 1.0);
  CHECK(m.at(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(m.at(1, 0) == 1.0);
  CHECK(m.at(0, 2) == 0.0);
  CHECK(m.at(2, 2) == 1.0);
}

TEST_CASE("classes that never occur get NaN rows") {
  auto targets = TargetMatrix::create(2, 2, {1, 0, 1, 0});
  auto m = cooccurrence_matrix(targets);
  CHECK(std::isnan(m.at(1, 0)));
  CHECK(std::isnan(m.at(1, 1)));
  CHECK(m.at(0, 0) == 1.0);
  CHECK(m.at(0, 1) == 0.0);
}

TEST_CASE("co-occurrence matches the naive counting oracle") {
  std::mt19937_64 rng(127);
  std::bernoulli_distribution bdist(0.4);
  std::vector<std::uint8_t> t(50 * 4);
  for (auto& v : t) v = bdist(rng);
  auto m = cooccurrence_matrix(TargetMatrix::create(50, 4, t));
  auto want = oracle::cooccurrence_naive(t, 50, 4);
  REQUIRE(m.values.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (std::isnan(want[i])) {
      CHECK(std::isnan(m.values[i]));
    } else {
      CHECK(m.values[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

TEST_CASE("json report carries exactly the agreed fields") {
  auto scores = ScoreMatrix::create(2, 2, {0.9, 0.1, 0.1, 0.9});
  auto targets = TargetMatrix::create(2, 2, {1, 0, 0, 1});
  auto report = table3_report(scores, targets, DecisionRule::make_threshold(0.5));
  auto parsed = nlohmann::json::parse(to_json_string(report));

  const std::vector<std::string> fields = {
      "map", "per_class_ap", "op",  "cp", "or", "cr",
      "of1", "cf1",          "excluded_classes", "decision_rule"};
  CHECK(parsed.size() == fields.size());
  for (const auto& f : fields) CHECK(parsed.contains(f));
  CHECK(parsed["map"].get<double>() == 1.0);
  CHECK(parsed["decision_rule"].get<std::string>() == "threshold:0.5");
  CHECK(parsed["excluded_classes"].get<int>() == 0);
  CHECK(parsed["per_class_ap"].size() == 2);
}

TEST_CASE("undefined metrics serialize as null") {
  auto scores = ScoreMatrix::create(1, 1, {0.2});
  auto targets = TargetMatrix::create(1, 1, {0});
  auto report = table3_report(scores, targets, DecisionRule::make_threshold(0.9));
  auto parsed = nlohmann::json::parse(to_json_string(report));
  CHECK(parsed["map"].is_null());
  CHECK(parsed["op"].is_null());  // nothing predicted positive
  CHECK(parsed["per_class_ap"][0].is_null());
}

TEST_CASE("the text table renders the published row values") {
  MetricsReport report;
  report.map = 0.794;
  report.op = 0.9947;
  report.cp = 0.9927;
  report.or_ = 0.310;
  report.cr = 0.255;
  report.of1 = f1(0.9947, 0.310);
  report.cf1 = f1(0.9927, 0.255);
  report.decision_rule = DecisionRule::make_threshold(0.5);

  const std::string table = to_text_table(report);
  CHECK(table.find("MAP                   0.794") != std::string::npos);
  CHECK(table.find("Overall Precision     0.9947") != std::string::npos);
  CHECK(table.find("Class Precision       0.9927") != std::string::npos);
  CHECK(table.find("Overall Recall        0.310") != std::string::npos);
  CHECK(table.find("Class Recall          0.255") != std::string::npos);
  CHECK(table.find("Overall F1 Score      0.473") != std::string::npos);
  CHECK(table.find("Class F1 Score        0.406") != std::string::npos);
}

TEST_CASE("the text table writes n/a for undefined entries") {
  MetricsReport report;  // everything nullopt
  report.decision_rule = DecisionRule::make_threshold(0.5);
  const std::string table = to_text_table(report);
  CHECK(table.find("MAP                   n/a") != std::string::npos);
}

TEST_CASE("pr curve csv format") {
  std::vector<PrPoint> curve = {{0.5, 1.0}, {0.5, 0.5}, {1.0, 2.0 / 3.0}};
  const std::string csv = pr_curve_csv("person", curve);
  CHECK(csv.rfind("class,rank,recall,precision\n", 0) == 0);
  CHECK(csv.find("person,1,0.5,1\n") != std::string::npos);
  CHECK(csv.find("person,2,0.5,0.5\n") != std::string::npos);
  CHECK(csv.find("person,3,1,0.66666") != std::string::npos);
}
