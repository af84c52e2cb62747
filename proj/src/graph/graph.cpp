#include "ctssg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "ctssg/errors.hpp"

namespace ctssg {

std::string to_string(Topology t) {
  return t == Topology::kSparse ? "sparse" : "fully_connected";
}

Topology topology_from_string(const std::string& s) {
  if (s == "sparse") return Topology::kSparse;
  if (s == "fully_connected") return Topology::kFullyConnected;
  throw ValidationError("unknown topology '" + s + "' (expected sparse or fully_connected)");
}

void GraphConfig::validate() const {
  if (nodes < 2) throw ValidationError("graph needs N >= 2 nodes, got " + std::to_string(nodes));
  if (topology == Topology::kSparse && receptive_field < 1) {
    throw ValidationError("receptive field q must be >= 1");
  }
  if (!(spacing_dm > 0.0) || !std::isfinite(spacing_dm)) {
    throw ValidationError("spacing s_z must be positive, got " + std::to_string(spacing_dm));
  }
  if (!(slices_per_node > 0.0)) throw ValidationError("slices per node must be positive");
}

std::size_t GraphConfig::effective_receptive_field() const {
  if (topology == Topology::kFullyConnected) return nodes - 1;
  return std::min(receptive_field, nodes - 1);
}

double edge_weight(std::size_t i, std::size_t j, double spacing_dm, double slices_per_node) {
  if (!(spacing_dm > 0.0)) {
    throw ValidationError("edge_weight: spacing must be positive, got " +
                          std::to_string(spacing_dm));
  }
  const double gap = i > j ? double(i - j) : double(j - i);
  return 1.0 + 1.0 / (1.0 + slices_per_node * gap * spacing_dm);
}

std::vector<Edge> build_edges(const GraphConfig& cfg) {
  cfg.validate();
  const std::size_t q = cfg.effective_receptive_field();
  auto weight = [&](std::size_t i, std::size_t j) {
    return cfg.weighting == EdgeWeighting::kUnit
               ? 1.0
               : edge_weight(i, j, cfg.spacing_dm, cfg.slices_per_node);
  };
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < cfg.nodes; ++i) {
    if (cfg.include_self_loops) edges.push_back({i, i, weight(i, i)});
    for (std::size_t j = i + 1; j < cfg.nodes && j - i <= q; ++j) {
      edges.push_back({i, j, weight(i, j)});
    }
  }
  return edges;
}

std::size_t expected_edge_count(std::size_t nodes, std::size_t receptive_field) {
  const std::size_t q = receptive_field;
  return q * nodes - q * (q + 1) / 2;
}

SliceGraph build_graph(const GraphConfig& cfg) {
  SliceGraph g;
  g.config = cfg;
  g.edges = build_edges(cfg);
  const auto n = Eigen::Index(cfg.nodes);
  g.adjacency = Eigen::MatrixXd::Zero(n, n);
  for (const Edge& e : g.edges) {
    g.adjacency(Eigen::Index(e.i), Eigen::Index(e.j)) = e.weight;
    g.adjacency(Eigen::Index(e.j), Eigen::Index(e.i)) = e.weight;
  }
  g.degree = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) g.degree(i, i) = g.adjacency.row(i).sum();
  g.laplacian = g.degree - g.adjacency;
  g.lambda_max = lambda_max(g.laplacian);
  if (g.lambda_max < 1e-12) {
    throw NumericError("degenerate graph: lambda_max = " + std::to_string(g.lambda_max));
  }
  g.scaled_laplacian =
      (2.0 / g.lambda_max) * g.laplacian - Eigen::MatrixXd::Identity(n, n);
  g.neighbors.resize(cfg.nodes);
  for (std::size_t i = 0; i < cfg.nodes; ++i) {
    for (std::size_t j = 0; j < cfg.nodes; ++j) {
      const double a = g.adjacency(Eigen::Index(i), Eigen::Index(j));
      if (i != j && a != 0.0) g.neighbors[i].emplace_back(j, a);
    }
  }
  return g;
}

double lambda_max(const Eigen::MatrixXd& laplacian) {
  if (laplacian.rows() != laplacian.cols() || laplacian.rows() == 0) {
    throw ValidationError("lambda_max: matrix must be square and non-empty");
  }
  double top = 0.0;
  if (std::size_t(laplacian.rows()) <= kDenseEigenLimit) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(laplacian, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw NumericError("lambda_max: eigensolve failed");
    top = solver.eigenvalues().maxCoeff();
  } else {
    top = lambda_max_lanczos(laplacian);
  }
  if (top < 1e-12) throw NumericError("lambda_max: degenerate spectrum (largest eigenvalue ~ 0)");
  return top;
}

double lambda_max_power_iteration(const Eigen::MatrixXd& laplacian, double tolerance,
                                  int max_iterations) {
  const Eigen::Index n = laplacian.rows();
  // Deterministic start with components along both smooth and oscillating modes.
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    v(i) = (i % 2 ? -1.0 : 1.0) + 0.5 * std::sin(1.7 * double(i) + 0.3);
  }
  v.normalize();
  // Rayleigh quotients rise monotonically with error ~ r^k. The ratio of
  // successive increments estimates r, which bounds the remaining error by
  // delta * r / (1 - r); stop once that bound is below tolerance.
  double rayleigh = v.dot(laplacian * v);
  double prev_delta = 0.0;
  double residual = 0.0;
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::VectorXd w = laplacian * v;
    const double norm = w.norm();
    if (norm < 1e-300) throw NumericError("lambda_max: power iteration hit the null space");
    v = w / norm;
    const Eigen::VectorXd lv = laplacian * v;
    const double next = v.dot(lv);
    residual = (lv - next * v).norm();
    const double delta = std::abs(next - rayleigh);
    rayleigh = next;
    if (residual <= 1e-14 * std::abs(next)) return next;
    if (it > 0 && prev_delta > 0.0) {
      const double ratio = delta / prev_delta;
      if (ratio < 1.0 && delta * ratio / (1.0 - ratio) <= tolerance * std::abs(next)) return next;
    }
    prev_delta = delta;
  }
  throw NumericError("lambda_max: power iteration did not converge in " +
                     std::to_string(max_iterations) + " iterations (residual " +
                     std::to_string(residual) + ")");
}

double lambda_max_lanczos(const Eigen::MatrixXd& laplacian, double tolerance, int max_steps) {
  const Eigen::Index n = laplacian.rows();
  const Eigen::Index steps = std::min<Eigen::Index>(n, max_steps);
  Eigen::MatrixXd basis(n, steps);
  Eigen::VectorXd q(n);
  for (Eigen::Index i = 0; i < n; ++i) q(i) = (i % 2 ? -1.0 : 1.0) + 0.5 * std::sin(1.7 * double(i) + 0.3);
  q.normalize();
  std::vector<double> alpha, beta;
  double bound = 0.0;
  for (Eigen::Index j = 0; j < steps; ++j) {
    basis.col(j) = q;
    Eigen::VectorXd w = laplacian * q;
    alpha.push_back(q.dot(w));
    // Two passes of classical Gram-Schmidt against the whole basis.
    for (int pass = 0; pass < 2; ++pass) {
      const auto b = basis.leftCols(j + 1);
      w -= b * (b.transpose() * w);
    }
    const double next_beta = w.norm();

    Eigen::VectorXd diag = Eigen::Map<Eigen::VectorXd>(alpha.data(), Eigen::Index(alpha.size()));
    Eigen::VectorXd sub = Eigen::Map<Eigen::VectorXd>(beta.data(), Eigen::Index(beta.size()));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
    tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    const Eigen::Index top = diag.size() - 1;
    const double theta = tri.eigenvalues()(top);
    bound = next_beta * std::abs(tri.eigenvectors()(top, top));
    if (bound <= tolerance * std::abs(theta) || next_beta < 1e-300) return theta;
    beta.push_back(next_beta);
    q = w / next_beta;
  }
  throw NumericError("lambda_max: Lanczos did not converge in " + std::to_string(steps) +
                     " steps (residual bound " + std::to_string(bound) + ")");
}

std::vector<std::vector<int>> hop_distances(const SliceGraph& graph) {
  const std::size_t n = graph.size();
  std::vector<std::vector<int>> dist(n, std::vector<int>(n, -1));
  for (std::size_t s = 0; s < n; ++s) {
    std::deque<std::size_t> frontier{s};
    dist[s][s] = 0;
    while (!frontier.empty()) {
      const std::size_t u = frontier.front();
      frontier.pop_front();
      for (const auto& [v, w] : graph.neighbors[u]) {
        if (dist[s][v] < 0) {
          dist[s][v] = dist[s][u] + 1;
          frontier.push_back(v);
        }
      }
    }
  }
  return dist;
}

nlohmann::json graph_to_json(const SliceGraph& graph) {
  nlohmann::json edges = nlohmann::json::array();
  for (const Edge& e : graph.edges) edges.push_back({e.i, e.j, e.weight});
  return {{"n", graph.config.nodes},
          {"q", graph.config.effective_receptive_field()},
          {"s_z_dm", graph.config.spacing_dm},
          {"topology", to_string(graph.config.topology)},
          {"edges", std::move(edges)},
          {"lambda_max", graph.lambda_max}};
}

}  // namespace ctssg
