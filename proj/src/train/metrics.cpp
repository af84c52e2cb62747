#include "ctssg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctssg/errors.hpp"

namespace ctssg {

namespace {

void check_inputs(std::span<const double> scores, std::span<const double> targets) {
  if (scores.size() != targets.size()) {
    throw DimensionError("metric inputs differ in length: " + std::to_string(scores.size()) +
                         " vs " + std::to_string(targets.size()));
  }
  for (double t : targets) {
    if (t != 0.0 && t != 1.0) throw ValidationError("metric target is not binary");
  }
}

void check_probs(std::span<const double> probs) {
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("probability outside [0, 1]");
  }
}

}  // namespace

std::optional<double> f1_score(std::span<const double> probs, std::span<const double> targets,
                               double threshold) {
  check_inputs(probs, targets);
  check_probs(probs);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    const bool truth = targets[i] == 1.0;
    tp += pred && truth;
    fp += pred && !truth;
    fn += !pred && truth;
  }
  if (tp + fp + fn == 0) return std::nullopt;
  return 2.0 * double(tp) / double(2 * tp + fp + fn);
}

std::optional<double> auroc(std::span<const double> scores, std::span<const double> targets) {
  check_inputs(scores, targets);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  // Sum of 1-based average ranks over positives.
  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * double(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (targets[order[t]] == 1.0) {
        rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double u = rank_sum - 0.5 * double(positives) * double(positives + 1);
  return u / (double(positives) * double(negatives));
}

std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const double> targets) {
  check_inputs(scores, targets);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  double total = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (targets[order[r]] == 1.0) {
      ++hits;
      total += double(hits) / double(r + 1);
    }
  }
  if (hits == 0) return std::nullopt;
  return total / double(hits);
}

double accuracy(std::span<const double> probs, std::span<const double> targets, double threshold) {
  check_inputs(probs, targets);
  check_probs(probs);
  if (probs.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    correct += (probs[i] >= threshold) == (targets[i] == 1.0);
  }
  return double(correct) / double(probs.size());
}

MetricsReport evaluate_metrics(std::span<const double> probs, std::span<const double> targets,
                               std::size_t samples, std::size_t labels, double threshold) {
  if (probs.size() != samples * labels || targets.size() != samples * labels) {
    throw DimensionError("evaluate_metrics: expected " + std::to_string(samples) + "x" +
                         std::to_string(labels) + " probabilities and targets");
  }
  MetricsReport report;
  double f1_sum = 0.0, auc_sum = 0.0, ap_sum = 0.0, acc_sum = 0.0;
  std::size_t f1_n = 0, auc_n = 0, ap_n = 0;
  std::vector<double> p(samples), t(samples);
  for (std::size_t m = 0; m < labels; ++m) {
    for (std::size_t b = 0; b < samples; ++b) {
      p[b] = probs[b * labels + m];
      t[b] = targets[b * labels + m];
    }
    LabelMetrics lm;
    lm.f1 = f1_score(p, t, threshold);
    lm.auroc = auroc(p, t);
    lm.average_precision = average_precision(p, t);
    lm.accuracy = accuracy(p, t, threshold);
    lm.positives = std::size_t(std::count(t.begin(), t.end(), 1.0));
    if (lm.f1) { f1_sum += *lm.f1; ++f1_n; } else { ++report.skipped_f1; }
    if (lm.auroc) { auc_sum += *lm.auroc; ++auc_n; } else { ++report.skipped_auroc; }
    if (lm.average_precision) { ap_sum += *lm.average_precision; ++ap_n; } else { ++report.skipped_ap; }
    acc_sum += lm.accuracy;
    report.per_label.push_back(lm);
  }
  report.macro_f1 = f1_n ? f1_sum / double(f1_n) : 0.0;
  report.macro_auroc = auc_n ? auc_sum / double(auc_n) : 0.0;
  report.mean_average_precision = ap_n ? ap_sum / double(ap_n) : 0.0;
  report.macro_accuracy = labels ? acc_sum / double(labels) : 0.0;
  return report;
}

nlohmann::json MetricsReport::to_json() const {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json labels = nlohmann::json::array();
  for (const LabelMetrics& lm : per_label) {
    labels.push_back({{"f1", opt(lm.f1)},
                      {"auroc", opt(lm.auroc)},
                      {"average_precision", opt(lm.average_precision)},
                      {"accuracy", lm.accuracy},
                      {"positives", lm.positives}});
  }
  return {{"macro_f1", macro_f1},
          {"macro_auroc", macro_auroc},
          {"map", mean_average_precision},
          {"accuracy", macro_accuracy},
          {"skipped", {{"f1", skipped_f1}, {"auroc", skipped_auroc}, {"ap", skipped_ap}}},
          {"per_label", std::move(labels)}};
}

}  // namespace ctssg
