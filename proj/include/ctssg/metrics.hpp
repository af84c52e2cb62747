#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

namespace ctssg {

/// F1 of one label with prediction = prob >= threshold. Empty when the label
/// has neither predicted nor actual positives.
std::optional<double> f1_score(std::span<const double> probs, std::span<const double> targets,
                               double threshold);

/// Mann-Whitney AUROC, ties counted 1/2. Empty without both classes present.
std::optional<double> auroc(std::span<const double> scores, std::span<const double> targets);

/// Step-wise average precision over a stable descending-score ranking.
/// Empty when there are no positives.
std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const double> targets);

/// Fraction of correct binary decisions.
double accuracy(std::span<const double> probs, std::span<const double> targets, double threshold);

struct LabelMetrics {
  std::optional<double> f1;
  std::optional<double> auroc;
  std::optional<double> average_precision;
  double accuracy = 0.0;
  std::size_t positives = 0;
};

struct MetricsReport {
  std::vector<LabelMetrics> per_label;
  double macro_f1 = 0.0;
  double macro_auroc = 0.0;
  double mean_average_precision = 0.0;
  double macro_accuracy = 0.0;
  std::size_t skipped_f1 = 0;
  std::size_t skipped_auroc = 0;
  std::size_t skipped_ap = 0;

  nlohmann::json to_json() const;
};

/// Per-label metrics over row-major [samples x labels] probabilities and
/// binary targets; macro values average the non-degenerate labels only (0
/// when every label is degenerate).
MetricsReport evaluate_metrics(std::span<const double> probs, std::span<const double> targets,
                               std::size_t samples, std::size_t labels, double threshold = 0.5);

}  // namespace ctssg
