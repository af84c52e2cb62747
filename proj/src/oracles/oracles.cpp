#include "ctssg/oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "ctssg/metrics.hpp"
#include "ctssg/ops.hpp"

namespace ctssg::oracle {

Eigen::MatrixXd to_matrix(const Tensor& t) {
  const auto rows = Eigen::Index(t.shape()[0]);
  const auto cols = Eigen::Index(t.rank() > 1 ? t.shape()[1] : 1);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = t[std::size_t(i * cols + j)];
  }
  return m;
}

Tensor to_tensor(const Eigen::MatrixXd& m) {
  std::vector<double> v;
  v.reserve(std::size_t(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
  }
  return Tensor({std::size_t(m.rows()), std::size_t(m.cols())}, std::move(v));
}

Eigen::MatrixXd chebyshev_spectral(const Eigen::MatrixXd& x, const Eigen::MatrixXd& scaled_laplacian,
                                   const std::vector<Eigen::MatrixXd>& theta) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(scaled_laplacian);
  const Eigen::MatrixXd& u = solver.eigenvectors();
  const Eigen::VectorXd& lambda = solver.eigenvalues();
  const Eigen::MatrixXd spectral_x = u.transpose() * x;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(x.rows(), theta.front().cols());
  for (std::size_t k = 0; k < theta.size(); ++k) {
    Eigen::VectorXd tk(lambda.size());
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
      tk(i) = std::cos(double(k) * std::acos(std::clamp(lambda(i), -1.0, 1.0)));
    }
    acc += tk.asDiagonal() * spectral_x * theta[k];
  }
  return u * acc;
}

double max_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-300);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

std::optional<double> f1_confusion(std::span<const double> probs, std::span<const double> targets,
                                   double threshold) {
  // confusion[predicted][actual]
  std::size_t confusion[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < probs.size(); ++i) {
    ++confusion[probs[i] >= threshold ? 1 : 0][targets[i] == 1.0 ? 1 : 0];
  }
  const double tp = double(confusion[1][1]), fp = double(confusion[1][0]),
               fn = double(confusion[0][1]);
  if (tp + fp + fn == 0) return std::nullopt;
  if (tp == 0) return 0.0;
  const double precision = tp / (tp + fp), recall = tp / (tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

std::optional<double> auroc_pairs(std::span<const double> scores, std::span<const double> targets) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (targets[i] != 1.0) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (targets[j] != 0.0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  if (pairs == 0) return std::nullopt;
  return wins / double(pairs);
}

std::optional<double> average_precision_pairs(std::span<const double> scores,
                                              std::span<const double> targets) {
  // j precedes i iff s_j > s_i, or s_j == s_i and j < i.
  double total = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (targets[i] != 1.0) continue;
    ++positives;
    std::size_t rank = 1, hits = 1;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (j == i) continue;
      if (scores[j] > scores[i] || (scores[j] == scores[i] && j < i)) {
        ++rank;
        if (targets[j] == 1.0) ++hits;
      }
    }
    total += double(hits) / double(rank);
  }
  if (positives == 0) return std::nullopt;
  return total / double(positives);
}

double accuracy_count(std::span<const double> probs, std::span<const double> targets,
                      double threshold) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if ((probs[i] >= threshold && targets[i] == 1.0) || (probs[i] < threshold && targets[i] == 0.0)) {
      ++correct;
    }
  }
  return probs.empty() ? 0.0 : double(correct) / double(probs.size());
}

std::vector<std::vector<bool>> influence(const std::function<Tensor(const Tensor&)>& f,
                                         const Tensor& input, std::uint64_t seed) {
  const std::size_t rows = input.shape()[0];
  const std::size_t cols = input.numel() / rows;
  const Tensor base = f(input);
  const std::size_t out_cols = base.numel() / base.shape()[0];
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<bool>> changed(base.shape()[0], std::vector<bool>(rows, false));
  for (std::size_t j = 0; j < rows; ++j) {
    std::vector<double> v(input.values().begin(), input.values().end());
    for (std::size_t c = 0; c < cols; ++c) v[j * cols + c] += normal(rng);
    const Tensor out = f(Tensor(input.shape(), std::move(v)));
    for (std::size_t i = 0; i < base.shape()[0]; ++i) {
      for (std::size_t c = 0; c < out_cols; ++c) {
        if (out[i * out_cols + c] != base[i * out_cols + c]) {
          changed[i][j] = true;
          break;
        }
      }
    }
  }
  return changed;
}

std::vector<double> matched_filter(const SynthConfig& cfg, const Tensor& volume) {
  const std::size_t h_n = cfg.height, w_n = cfg.width, c = cfg.slices_per_node;
  std::vector<double> detected(cfg.labels.size(), 0.0);
  for (std::size_t m = 0; m < cfg.labels.size(); ++m) {
    const LabelSpec& spec = cfg.labels[m];
    const Region region = label_region(cfg, m);
    double peak = 0.0;
    std::size_t voxels = 0;
    for (std::size_t z = spec.band_begin * c; z < (spec.band_end + 1) * c; ++z) {
      double total = 0.0;
      voxels = 0;
      for (std::size_t y = 0; y < h_n; ++y) {
        for (std::size_t x = 0; x < w_n; ++x) {
          if (!region.contains(y, x)) continue;
          total += volume[(z * h_n + y) * w_n + x];
          ++voxels;
        }
      }
      peak = std::max(peak, std::abs(total / double(voxels) - cfg.background));
    }
    const double noise_level = 6.0 * cfg.noise_floor / std::sqrt(double(std::max<std::size_t>(voxels, 1)));
    detected[m] = peak > std::max(0.25 * spec.amplitude, noise_level) ? 1.0 : 0.0;
  }
  return detected;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = normal(rng);
  }
  return m;
}

Tensor random_tensor(std::mt19937_64& rng, Shape shape, bool requires_grad, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = normal(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

GraphConfig random_graph_config(std::mt19937_64& rng, std::size_t max_nodes) {
  GraphConfig cfg;
  cfg.nodes = 2 + rng() % (max_nodes - 1);
  cfg.receptive_field = 1 + rng() % (cfg.nodes - 1);
  std::uniform_real_distribution<double> spacing(0.001, 0.1);
  cfg.spacing_dm = spacing(rng);
  return cfg;
}

}  // namespace

SuiteResult cheb_suite(std::size_t graphs, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r;
  r.name = "cheb";
  std::mt19937_64 rng(seed);
  for (std::size_t g = 0; g < graphs; ++g) {
    const SliceGraph graph = build_graph(random_graph_config(rng, 16));
    const auto n = Eigen::Index(graph.size());
    const Eigen::Index d_in = 1 + Eigen::Index(rng() % 4), d_out = 1 + Eigen::Index(rng() % 4);
    const Eigen::MatrixXd x = random_matrix(rng, n, d_in);
    for (std::size_t k = 1; k <= 5; ++k) {
      std::vector<Eigen::MatrixXd> theta;
      std::vector<Tensor> theta_t;
      for (std::size_t i = 0; i < k; ++i) {
        theta.push_back(random_matrix(rng, d_in, d_out));
        theta_t.push_back(to_tensor(theta.back()));
      }
      const Eigen::MatrixXd got =
          to_matrix(cheb_conv(to_tensor(x), to_tensor(graph.scaled_laplacian), theta_t));
      const double err = max_relative_error(got, chebyshev_spectral(x, graph.scaled_laplacian, theta));
      r.worst = std::max(r.worst, err);
      ++r.cases;
    }
  }
  r.passed = r.worst < 1e-10;
  r.seconds = seconds_since(t0);
  r.detail = "max rel. error vs eigendecomposition (tolerance 1e-10)";
  return r;
}

SuiteResult laplacian_suite(std::size_t configs, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r;
  r.name = "laplacian";
  std::mt19937_64 rng(seed);
  std::ostringstream failures;
  double worst_row = 0.0, worst_loop = 0.0, min_eig = 0.0, hat_excess = 0.0, worst_power = 0.0;
  bool symmetric = true, counts = true;
  for (std::size_t c = 0; c < configs; ++c) {
    GraphConfig cfg = random_graph_config(rng, 40);
    cfg.topology = rng() % 4 == 0 ? Topology::kFullyConnected : Topology::kSparse;
    const SliceGraph g = build_graph(cfg);
    symmetric = symmetric && (g.adjacency.array() == g.adjacency.transpose().array()).all();
    worst_row = std::max(worst_row, g.laplacian.rowwise().sum().cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> lap(g.laplacian, Eigen::EigenvaluesOnly);
    min_eig = std::min(min_eig, lap.eigenvalues().minCoeff());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> hat(g.scaled_laplacian, Eigen::EigenvaluesOnly);
    hat_excess = std::max({hat_excess, hat.eigenvalues().maxCoeff() - 1.0,
                           -1.0 - hat.eigenvalues().minCoeff()});
    GraphConfig looped = cfg;
    looped.include_self_loops = true;
    worst_loop = std::max(worst_loop, (build_graph(looped).laplacian - g.laplacian).cwiseAbs().maxCoeff());
    const std::size_t q = cfg.effective_receptive_field();
    if (g.edges.size() != expected_edge_count(cfg.nodes, q)) {
      counts = false;
      failures << " edge count N=" << cfg.nodes << " q=" << q;
    }
    const double lanczos = lambda_max_lanczos(g.laplacian);
    worst_power = std::max(worst_power, std::abs(lanczos - g.lambda_max) / g.lambda_max);
    ++r.cases;
  }
  {
    // Power iteration on the reference-scale graph.
    GraphConfig ref;
    ref.nodes = 80;
    ref.receptive_field = 16;
    const SliceGraph g = build_graph(ref);
    const double power = lambda_max_power_iteration(g.laplacian);
    worst_power = std::max(worst_power, std::abs(power - g.lambda_max) / g.lambda_max);
  }
  r.passed = symmetric && counts && worst_row < 1e-12 && min_eig >= -1e-10 && hat_excess <= 1e-9 &&
             worst_loop < 1e-12 && worst_power < 1e-8;
  r.worst = std::max({worst_row, worst_loop});
  std::ostringstream os;
  os << "symmetric=" << symmetric << " row_sum=" << worst_row << " min_eig=" << min_eig
     << " hat_excess=" << hat_excess << " self_loop_diff=" << worst_loop
     << " iterative_vs_dense=" << worst_power << " edge_counts=" << counts << failures.str();
  r.detail = os.str();
  r.seconds = seconds_since(t0);
  return r;
}

SuiteResult grad_suite(std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r;
  r.name = "grad";
  std::mt19937_64 rng(seed);
  std::ostringstream os;
  bool ok = true;

  // f = sum(c * op(...)) with a fixed random weighting c.
  auto weighted = [&](const Tensor& out, const Tensor& c) { return sum(mul(out, c)); };
  auto check = [&](const std::string& name, double tol, const std::function<Tensor()>& f,
                   std::vector<Tensor> params) {
    const GradCheckResult g = grad_check(f, std::move(params), 1e-5);
    ++r.cases;
    r.worst = std::max(r.worst, g.max_rel_error);
    const bool pass = g.max_rel_error < tol;
    ok = ok && pass;
    if (r.cases > 1) os << ' ';
    os << name << '=' << g.max_rel_error;
    if (!pass) os << "(FAIL at " << g.worst_param << '[' << g.worst_index << "])";
  };

  {
    Tensor a = random_tensor(rng, {5, 4}, true), b = random_tensor(rng, {4, 3}, true);
    Tensor c = random_tensor(rng, {5, 3}, false);
    check("matmul", 1e-6, [&] { return weighted(matmul(a, b), c); }, {a, b});
  }
  {
    Tensor x = random_tensor(rng, {2, 3, 4}, true), w = random_tensor(rng, {4, 5}, true);
    Tensor b = random_tensor(rng, {5}, true), c = random_tensor(rng, {2, 3, 5}, false);
    check("linear", 1e-6, [&] { return weighted(linear(x, w, b), c); }, {x, w, b});
  }
  {
    Tensor x = random_tensor(rng, {4, 8}, true), g = random_tensor(rng, {8}, true);
    Tensor b = random_tensor(rng, {8}, true), c = random_tensor(rng, {4, 8}, false);
    check("layer_norm", 1e-6, [&] { return weighted(layer_norm(x, g, b), c); }, {x, g, b});
  }
  {
    // gelu' vanishes near x = -0.7518 and in the far negative tail; there the
    // relative error only measures finite-difference noise, so inputs are
    // drawn from [-4, 4] away from the stationary point.
    std::uniform_real_distribution<double> range(-4.0, 4.0);
    std::vector<double> xv(21);
    for (double& v : xv) {
      do v = range(rng);
      while (std::abs(v + 0.7518) < 0.05);
    }
    Tensor c = random_tensor(rng, {3, 7}, false);
    Tensor x({3, 7}, xv, true);
    check("gelu", 1e-6, [&] { return weighted(gelu(x), c); }, {x});
  }
  {
    Tensor x = random_tensor(rng, {3, 4, 5}, true), c = random_tensor(rng, {3, 5}, false);
    check("mean_over_axis", 1e-6, [&] { return weighted(mean_over_axis(x, 1), c); }, {x});
  }
  {
    Tensor z = random_tensor(rng, {3, 4}, true, 3.0);
    std::vector<double> y(12);
    for (double& v : y) v = double(rng() % 2);
    Tensor t({3, 4}, y);
    check("bce_with_logits", 1e-6, [&] { return bce_with_logits(z, t); }, {z});
  }
  {
    Tensor x = random_tensor(rng, {2, 3, 7, 6}, true), w = random_tensor(rng, {4, 3, 3, 3}, true);
    Tensor b = random_tensor(rng, {4}, true), c = random_tensor(rng, {2, 4, 4, 3}, false);
    check("conv2d", 1e-6, [&] { return weighted(conv2d(x, w, b, 2, 1), c); }, {x, w, b});
  }
  {
    Tensor a = random_tensor(rng, {3, 4}, true), b = random_tensor(rng, {3, 4}, true);
    Tensor c = random_tensor(rng, {3, 4}, false);
    check("elementwise", 1e-6,
          [&] { return weighted(add(scale(mul(a, b), 0.7), sub(a, reshape(reshape(b, {12}), {3, 4}))), c); },
          {a, b});
  }

  GraphConfig gc;
  gc.nodes = 6;
  gc.receptive_field = 2;
  const SliceGraph graph = build_graph(gc);
  const BlockGraph bg = block_graph_tensors(graph);
  {
    Tensor x = random_tensor(rng, {6, 4}, true), c = random_tensor(rng, {6, 3}, false);
    std::vector<Tensor> theta;
    for (int k = 0; k < 4; ++k) theta.push_back(random_tensor(rng, {4, 3}, true));
    std::vector<Tensor> params = theta;
    params.push_back(x);
    check("cheb_conv", 1e-5, [&] { return weighted(cheb_conv(x, bg.scaled_laplacian, theta), c); },
          params);
  }
  {
    Tensor x = random_tensor(rng, {6, 4}, true), ws = random_tensor(rng, {4, 4}, true);
    Tensor wn = random_tensor(rng, {4, 4}, true), c = random_tensor(rng, {6, 4}, false);
    check("graph_conv", 1e-5, [&] { return weighted(graph_conv(x, bg.adjacency, ws, wn), c); },
          {x, ws, wn});
  }
  {
    EncoderConfig ec;
    ec.slices = 18;
    ec.latent = 5;
    ec.filter_size = 3;
    const EncoderParams p = init_params(ec, seed);
    Tensor h = random_tensor(rng, {6, 5}, true), c = random_tensor(rng, {6, 5}, false);
    const BlockParams& bp = p.blocks[0];
    std::vector<Tensor> params = bp.theta;
    for (const Tensor& t : {bp.ln1_gamma, bp.ln1_beta, bp.ln2_gamma, bp.ln2_beta, bp.ffn_weight, bp.ffn_bias, h}) {
      params.push_back(t);
    }
    check("spectral_block", 1e-5, [&] { return weighted(spectral_block(ec, h, bg, p.blocks[0]), c); },
          params);
  }

  // Full model at the reference desk configuration.
  for (FeatureInit init : {FeatureInit::kTinyCnn, FeatureInit::kFlattenLinear}) {
    EncoderConfig ec;
    ec.slices = 12;
    ec.height = 8;
    ec.width = 8;
    ec.latent = 8;
    ec.filter_size = 3;
    ec.blocks = 1;
    ec.labels = 4;
    ec.feature_init = init;
    GraphConfig g;
    g.nodes = ec.nodes();
    g.receptive_field = 1;
    const SpectralEncoder encoder(ec, g);
    const EncoderParams p = init_params(ec, seed + 7);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> vox(12 * 8 * 8);
    for (double& v : vox) v = unit(rng);
    const Tensor volume({12, 8, 8}, vox);
    const Tensor targets({1, 4}, {1.0, 0.0, 0.0, 1.0});
    check("full_model_" + to_string(init), 1e-4,
          [&] { return bce_with_logits(reshape(encoder.forward(volume, p), {1, 4}), targets); },
          p.tensors());
  }

  r.passed = ok;
  r.detail = os.str();
  r.seconds = seconds_since(t0);
  return r;
}

SuiteResult metrics_suite(std::size_t instances, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r;
  r.name = "metrics";
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t it = 0; it < instances; ++it) {
    const std::size_t b = 2 + rng() % 29, m = 1 + rng() % 5;
    const bool quantized = rng() % 2 == 0;  // forces score ties
    std::vector<double> probs(b * m), targets(b * m);
    for (std::size_t i = 0; i < b * m; ++i) {
      probs[i] = quantized ? double(rng() % 5) / 4.0 : unit(rng);
      targets[i] = double(rng() % 2);
    }
    const MetricsReport rep = evaluate_metrics(probs, targets, b, m, 0.5);
    double f1_sum = 0, auc_sum = 0, ap_sum = 0, acc_sum = 0;
    std::size_t f1_n = 0, auc_n = 0, ap_n = 0;
    std::vector<double> p(b), t(b);
    for (std::size_t l = 0; l < m; ++l) {
      for (std::size_t i = 0; i < b; ++i) {
        p[i] = probs[i * m + l];
        t[i] = targets[i * m + l];
      }
      if (auto v = f1_confusion(p, t, 0.5)) { f1_sum += *v; ++f1_n; }
      if (auto v = auroc_pairs(p, t)) { auc_sum += *v; ++auc_n; }
      if (auto v = average_precision_pairs(p, t)) { ap_sum += *v; ++ap_n; }
      acc_sum += accuracy_count(p, t, 0.5);
    }
    const double errs[] = {
        std::abs(rep.macro_f1 - (f1_n ? f1_sum / double(f1_n) : 0.0)),
        std::abs(rep.macro_auroc - (auc_n ? auc_sum / double(auc_n) : 0.0)),
        std::abs(rep.mean_average_precision - (ap_n ? ap_sum / double(ap_n) : 0.0)),
        std::abs(rep.macro_accuracy - acc_sum / double(m)),
    };
    for (double e : errs) r.worst = std::max(r.worst, e);
    ++r.cases;
  }
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8}, y{0, 0, 1, 1};
  const double fixed = auroc(s, y).value_or(-1.0);
  r.passed = r.worst < 1e-12 && fixed == 0.75;
  std::ostringstream os;
  os << "max abs diff vs brute force " << r.worst << "; AUROC([0.1,0.4,0.35,0.8],[0,0,1,1]) = "
     << fixed;
  r.detail = os.str();
  r.seconds = seconds_since(t0);
  return r;
}

}  // namespace ctssg::oracle
