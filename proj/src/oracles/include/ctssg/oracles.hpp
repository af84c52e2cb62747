#pragma once

// Independent reference computations. Nothing in the core library depends on
// this module; it exists to check the library against slower, more obviously
// correct formulations.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ctssg/encoder.hpp"
#include "ctssg/graph.hpp"
#include "ctssg/synth.hpp"

namespace ctssg::oracle {

Eigen::MatrixXd to_matrix(const Tensor& t);
Tensor to_tensor(const Eigen::MatrixXd& m);

/// U (sum_k T_k(Lambda) U^T X theta_k) with L^ = U Lambda U^T and
/// T_k(x) = cos(k acos x) evaluated on the eigenvalues.
Eigen::MatrixXd chebyshev_spectral(const Eigen::MatrixXd& x, const Eigen::MatrixXd& scaled_laplacian,
                                   const std::vector<Eigen::MatrixXd>& theta);

/// Max |a - b| / max(|b|_max, 1e-300): error relative to the oracle's scale.
double max_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Brute-force metric references.
std::optional<double> f1_confusion(std::span<const double> probs, std::span<const double> targets,
                                   double threshold);
std::optional<double> auroc_pairs(std::span<const double> scores, std::span<const double> targets);
std::optional<double> average_precision_pairs(std::span<const double> scores,
                                              std::span<const double> targets);
double accuracy_count(std::span<const double> probs, std::span<const double> targets,
                      double threshold);

/// changed[i][j] is true iff perturbing input row j alters output row i.
std::vector<std::vector<bool>> influence(const std::function<Tensor(const Tensor&)>& f,
                                         const Tensor& input, std::uint64_t seed);

/// Hand-coded detector for planted patterns: per label, the largest
/// |region mean - background| over the slices of its band, thresholded.
std::vector<double> matched_filter(const SynthConfig& cfg, const Tensor& volume);

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::size_t cases = 0;
  double worst = 0.0;
  std::string detail;
  double seconds = 0.0;
};

/// Random graphs (N <= 16) and K in 1..5: recurrence vs eigendecomposition.
SuiteResult cheb_suite(std::size_t graphs = 100, std::uint64_t seed = 1);
/// Invariant battery over random GraphConfigs.
SuiteResult laplacian_suite(std::size_t configs = 50, std::uint64_t seed = 2);
/// Per-op finite-difference checks (< 1e-6) and the full-model check (< 1e-4).
SuiteResult grad_suite(std::uint64_t seed = 3);
/// Metrics vs brute force on random instances (1e-12).
SuiteResult metrics_suite(std::size_t instances = 200, std::uint64_t seed = 4);

}  // namespace ctssg::oracle
