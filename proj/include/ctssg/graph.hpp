#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace ctssg {

enum class Topology { kSparse, kFullyConnected };
enum class EdgeWeighting { kDistance, kUnit };

std::string to_string(Topology t);
Topology topology_from_string(const std::string& s);

/// Sequence graph over N slice triplets ordered along the z-axis.
struct GraphConfig {
  std::size_t nodes = 8;
  /// Maximum triplet-index gap joined by an edge (sparse topology only).
  std::size_t receptive_field = 2;
  /// Inter-slice spacing along the z-axis, in decimeters.
  double spacing_dm = 0.0075;
  bool include_self_loops = false;
  Topology topology = Topology::kSparse;
  EdgeWeighting weighting = EdgeWeighting::kDistance;
  /// The 3 in the distance weight, i.e. slices per triplet.
  double slices_per_node = 3.0;

  /// Throws ValidationError naming the violated constraint.
  void validate() const;
  /// q actually used: N-1 for fully connected, otherwise min(q, N-1).
  std::size_t effective_receptive_field() const;
};

/// w = 1 + 1 / (1 + c * |i - j| * s_z), c = slices per node.
double edge_weight(std::size_t i, std::size_t j, double spacing_dm, double slices_per_node = 3.0);

struct Edge {
  std::size_t i = 0;
  std::size_t j = 0;
  double weight = 0.0;
};

/// Undirected edges {i < j : j - i <= q}, plus (i, i) when self-loops are on.
std::vector<Edge> build_edges(const GraphConfig& cfg);

/// q*N - q(q+1)/2 for 1 <= q <= N-1.
std::size_t expected_edge_count(std::size_t nodes, std::size_t receptive_field);

struct SliceGraph {
  GraphConfig config;
  std::vector<Edge> edges;
  Eigen::MatrixXd adjacency;
  Eigen::MatrixXd degree;
  Eigen::MatrixXd laplacian;
  /// (2 / lambda_max) L - I; spectrum in [-1, 1].
  Eigen::MatrixXd scaled_laplacian;
  double lambda_max = 0.0;
  /// neighbors[i] = (j, A_ij) for every j != i with A_ij != 0.
  std::vector<std::vector<std::pair<std::size_t, double>>> neighbors;

  std::size_t size() const { return config.nodes; }
};

SliceGraph build_graph(const GraphConfig& cfg);

/// Largest eigenvalue of a symmetric matrix: dense eigensolve up to
/// kDenseEigenLimit rows, Lanczos above.
double lambda_max(const Eigen::MatrixXd& laplacian);

inline constexpr std::size_t kDenseEigenLimit = 512;

/// Power iteration for the dominant eigenvalue of a symmetric positive
/// semidefinite matrix. Throws NumericError if the Rayleigh quotient has not
/// settled to `tolerance` (relative) within `max_iterations`.
double lambda_max_power_iteration(const Eigen::MatrixXd& laplacian, double tolerance = 1e-10,
                                  int max_iterations = 10000);

/// Lanczos with full reorthogonalization; stops when the Ritz residual bound
/// of the top Ritz value drops below `tolerance` (relative).
double lambda_max_lanczos(const Eigen::MatrixXd& laplacian, double tolerance = 1e-10,
                          int max_steps = 1000);

/// All-pairs hop distance (unweighted BFS over the edge set); -1 if unreachable.
std::vector<std::vector<int>> hop_distances(const SliceGraph& graph);

/// {n, q, s_z_dm, edges: [[i, j, w], ...], lambda_max}
nlohmann::json graph_to_json(const SliceGraph& graph);

}  // namespace ctssg
