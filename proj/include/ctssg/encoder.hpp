#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ctssg/graph.hpp"
#include "ctssg/serialize.hpp"
#include "ctssg/tensor.hpp"

namespace ctssg {

enum class GraphOperator { kChebyshev, kGraphConv };
enum class FeatureInit { kTinyCnn, kFlattenLinear };

std::string to_string(GraphOperator op);
std::string to_string(FeatureInit init);
GraphOperator graph_operator_from_string(const std::string& s);
FeatureInit feature_init_from_string(const std::string& s);

struct EncoderConfig {
  std::size_t slices = 24;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t slices_per_node = 3;
  std::size_t latent = 64;
  std::size_t blocks = 1;
  /// Chebyshev filter size K (number of polynomial terms).
  std::size_t filter_size = 3;
  std::size_t labels = 4;
  GraphOperator op = GraphOperator::kChebyshev;
  FeatureInit feature_init = FeatureInit::kFlattenLinear;
  /// Channels of the first tiny_cnn stage.
  std::size_t cnn_channels = 8;

  // Component switches for ablations; all on is the full model.
  bool positional = true;
  bool residual = true;
  bool layer_norm = true;
  double layer_norm_eps = 1e-5;

  std::size_t nodes() const { return slices / slices_per_node; }
  void validate() const;
};

struct BlockParams {
  Tensor ln1_gamma, ln1_beta;
  std::vector<Tensor> theta;          // chebyshev: K tensors of d x d
  Tensor self_weight, neighbor_weight;  // graph_conv
  Tensor ln2_gamma, ln2_beta;
  Tensor ffn_weight, ffn_bias;
};

struct EncoderParams {
  // tiny_cnn
  Tensor conv1_weight, conv1_bias, conv2_weight, conv2_bias;
  // flatten_linear
  Tensor proj_weight, proj_bias;
  Tensor positional;  // N x d, undefined when disabled
  std::vector<BlockParams> blocks;
  Tensor head_weight, head_bias;

  /// Visits every defined tensor with a stable dotted name, in a fixed order.
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;

  std::vector<NamedTensor> named() const;
  std::vector<Tensor> tensors() const;
  std::size_t parameter_count() const;

  /// Leaves sharing storage with this set but owning their own gradients.
  EncoderParams leaf_views() const;
  EncoderParams clone() const;
};

/// Closed-form parameter count for a config; matches init_params().parameter_count().
std::size_t parameter_count(const EncoderConfig& cfg);

/// Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit/zero norm affine,
/// N(0, 0.02) positional table. Every tensor requires a gradient.
EncoderParams init_params(const EncoderConfig& cfg, std::uint64_t seed);

/// Rebuilds a parameter set from named tensors; throws LoadError on a
/// missing name or a shape that does not match `cfg`.
EncoderParams params_from_named(const EncoderConfig& cfg, const std::vector<NamedTensor>& named);

// Individual stages, exposed for testing and reuse.

/// volume [S x H x W] -> triplet features [N x d].
Tensor init_features(const EncoderConfig& cfg, const Tensor& volume, const EncoderParams& params);

/// H = features + positional.
Tensor add_positional(const Tensor& features, const Tensor& positional);

/// sum_k T_k(L^) X theta_k via the three-term recurrence.
Tensor cheb_conv(const Tensor& x, const Tensor& scaled_laplacian, std::span<const Tensor> theta);

/// out_i = X_i W_self + (sum_j A_ij X_j) W_neigh.
Tensor graph_conv(const Tensor& x, const Tensor& adjacency, const Tensor& self_weight,
                  const Tensor& neighbor_weight);

/// Graph operands of one block as constant tensors.
struct BlockGraph {
  Tensor scaled_laplacian;
  Tensor adjacency;
};

BlockGraph block_graph_tensors(const SliceGraph& graph);

/// Z = H + conv(LN1(H)); out = Z + GELU(LN2(Z) W + b).
Tensor spectral_block(const EncoderConfig& cfg, const Tensor& h, const BlockGraph& graph,
                      const BlockParams& params);

/// Full forward pass owning the per-layer graphs.
class SpectralEncoder {
 public:
  /// `per_layer_q`, when non-empty, gives a receptive field per block and
  /// overrides graph.receptive_field. Graphs are built once per distinct q.
  SpectralEncoder(EncoderConfig cfg, GraphConfig graph, std::vector<std::size_t> per_layer_q = {});

  const EncoderConfig& config() const { return cfg_; }
  const SliceGraph& graph(std::size_t block) const { return graphs_[layer_graph_[block]]; }

  /// Node features after the spectral blocks, [N x d].
  Tensor propagate(const Tensor& volume, const EncoderParams& params) const;
  /// Logits [M].
  Tensor forward(const Tensor& volume, const EncoderParams& params) const;

 private:
  EncoderConfig cfg_;
  std::vector<SliceGraph> graphs_;
  std::vector<BlockGraph> graph_tensors_;
  std::vector<std::size_t> layer_graph_;
};

}  // namespace ctssg
