#include <doctest.h>

#include <random>
#include <vector>

#include "ctssg/errors.hpp"
#include "ctssg/metrics.hpp"
#include "ctssg/oracles.hpp"

using namespace ctssg;

TEST_CASE("f1 hand cases") {
  const std::vector<double> p = {0.9, 0.8, 0.2, 0.6}, t = {1, 0, 1, 1};
  // tp 2, fp 1, fn 1
  CHECK(*f1_score(p, t, 0.5) == doctest::Approx(2.0 / 3.0));
  CHECK(*f1_score(std::vector<double>{0.5}, std::vector<double>{1}, 0.5) == 1.0);
  CHECK_FALSE(f1_score(std::vector<double>{0.1, 0.2}, std::vector<double>{0, 0}, 0.5).has_value());
}

TEST_CASE("auroc hand cases") {
  CHECK(*auroc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<double>{0, 0, 1, 1}) == 0.75);
  CHECK(*auroc(std::vector<double>{0.3, 0.3, 0.3}, std::vector<double>{0, 1, 1}) == 0.5);
  CHECK_FALSE(auroc(std::vector<double>{0.3, 0.4}, std::vector<double>{1, 1}).has_value());
}

TEST_CASE("average precision hand cases") {
  CHECK(*average_precision(std::vector<double>{0.2, 0.9}, std::vector<double>{1, 0}) == 0.5);
  CHECK(*average_precision(std::vector<double>{0.9, 0.2}, std::vector<double>{1, 0}) == 1.0);
  // ranking 1,0,1: (1 + 2/3) / 2
  CHECK(*average_precision(std::vector<double>{0.9, 0.5, 0.4}, std::vector<double>{1, 0, 1}) ==
        doctest::Approx(5.0 / 6.0));
  CHECK_FALSE(average_precision(std::vector<double>{0.9}, std::vector<double>{0}).has_value());
}

TEST_CASE("metrics are invariant to monotone score transforms") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(60), t(60), s2(60);
  for (std::size_t i = 0; i < 60; ++i) {
    s[i] = u(rng);
    t[i] = u(rng) < 0.4 ? 1.0 : 0.0;
    s2[i] = s[i] * s[i] * s[i] + 0.1;
  }
  CHECK(*auroc(s, t) == *auroc(s2, t));
  CHECK(*average_precision(s, t) == *average_precision(s2, t));
}

TEST_CASE("metrics match brute-force references") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> s(25), t(25);
    for (std::size_t i = 0; i < 25; ++i) {
      s[i] = rep % 2 ? std::round(u(rng) * 4) / 4 : u(rng);
      t[i] = u(rng) < 0.5 ? 1.0 : 0.0;
    }
    CHECK(auroc(s, t) == oracle::auroc_pairs(s, t));
    const auto ap = average_precision(s, t), ap_ref = oracle::average_precision_pairs(s, t);
    REQUIRE(ap.has_value() == ap_ref.has_value());
    if (ap) CHECK(*ap == doctest::Approx(*ap_ref).epsilon(1e-12));
    const auto f1 = f1_score(s, t, 0.5), f1_ref = oracle::f1_confusion(s, t, 0.5);
    REQUIRE(f1.has_value() == f1_ref.has_value());
    if (f1) CHECK(*f1 == doctest::Approx(*f1_ref).epsilon(1e-12));
    CHECK(accuracy(s, t, 0.5) == doctest::Approx(oracle::accuracy_count(s, t, 0.5)).epsilon(1e-12));
  }
}

TEST_CASE("evaluate_metrics skips degenerate labels") {
  // label 0 mixed, label 1 has no positives and no predicted positives.
  const std::vector<double> p = {0.9, 0.1, 0.2, 0.1, 0.7, 0.3}, t = {1, 0, 0, 0, 1, 0};
  const MetricsReport r = evaluate_metrics(p, t, 3, 2);
  CHECK(r.skipped_f1 == 1);
  CHECK(r.skipped_auroc == 1);
  CHECK(r.skipped_ap == 1);
  CHECK(r.macro_f1 == 1.0);
  CHECK(r.macro_auroc == 1.0);
  CHECK(r.per_label[0].positives == 2);
  CHECK(r.to_json().contains("macro_f1"));
  CHECK_THROWS_AS(evaluate_metrics(p, t, 2, 2), DimensionError);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1}, std::vector<double>{0.5}), ValidationError);
}
