#include "ctssg/encoder.hpp"

#include <cmath>
#include <map>
#include <random>

#include "ctssg/errors.hpp"
#include "ctssg/ops.hpp"

namespace ctssg {

std::string to_string(GraphOperator op) {
  return op == GraphOperator::kChebyshev ? "chebyshev" : "graph_conv";
}

std::string to_string(FeatureInit init) {
  return init == FeatureInit::kTinyCnn ? "tiny_cnn" : "flatten_linear";
}

GraphOperator graph_operator_from_string(const std::string& s) {
  if (s == "chebyshev") return GraphOperator::kChebyshev;
  if (s == "graph_conv") return GraphOperator::kGraphConv;
  throw ValidationError("unknown operator '" + s + "' (expected chebyshev or graph_conv)");
}

FeatureInit feature_init_from_string(const std::string& s) {
  if (s == "tiny_cnn") return FeatureInit::kTinyCnn;
  if (s == "flatten_linear") return FeatureInit::kFlattenLinear;
  throw ValidationError("unknown feature_init '" + s + "' (expected tiny_cnn or flatten_linear)");
}

void EncoderConfig::validate() const {
  if (slices_per_node == 0) throw ValidationError("slices per triplet must be >= 1");
  if (slices == 0 || slices % slices_per_node != 0) {
    throw ValidationError("S=" + std::to_string(slices) + " is not divisible into triplets of " +
                          std::to_string(slices_per_node) + " slices");
  }
  if (nodes() < 2) throw ValidationError("need at least 2 triplets, got " + std::to_string(nodes()));
  if (height == 0 || width == 0) throw ValidationError("slice extents must be positive");
  if (latent == 0) throw ValidationError("latent width d must be >= 1");
  if (blocks == 0) throw ValidationError("block count L must be >= 1");
  if (filter_size == 0) throw ValidationError("filter size K must be >= 1");
  if (labels == 0) throw ValidationError("label count M must be >= 1");
  if (cnn_channels == 0) throw ValidationError("cnn_channels must be >= 1");
  if (!(layer_norm_eps > 0.0)) throw ValidationError("layer_norm_eps must be positive");
}

namespace {

template <typename Params, typename Fn>
void visit_params(Params& p, Fn&& fn) {
  auto visit = [&](const std::string& name, auto& t) {
    if (t.defined()) fn(name, t);
  };
  visit("features.conv1.weight", p.conv1_weight);
  visit("features.conv1.bias", p.conv1_bias);
  visit("features.conv2.weight", p.conv2_weight);
  visit("features.conv2.bias", p.conv2_bias);
  visit("features.proj.weight", p.proj_weight);
  visit("features.proj.bias", p.proj_bias);
  visit("positional", p.positional);
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    auto& b = p.blocks[l];
    const std::string prefix = "blocks." + std::to_string(l) + ".";
    visit(prefix + "ln1.gamma", b.ln1_gamma);
    visit(prefix + "ln1.beta", b.ln1_beta);
    for (std::size_t k = 0; k < b.theta.size(); ++k) {
      visit(prefix + "theta." + std::to_string(k), b.theta[k]);
    }
    visit(prefix + "self_weight", b.self_weight);
    visit(prefix + "neighbor_weight", b.neighbor_weight);
    visit(prefix + "ln2.gamma", b.ln2_gamma);
    visit(prefix + "ln2.beta", b.ln2_beta);
    visit(prefix + "ffn.weight", b.ffn_weight);
    visit(prefix + "ffn.bias", b.ffn_bias);
  }
  visit("head.weight", p.head_weight);
  visit("head.bias", p.head_bias);
}

template <typename Fn>
EncoderParams map_params(const EncoderParams& src, Fn&& fn) {
  EncoderParams out = src;
  out.for_each([&](const std::string&, Tensor& t) { t = fn(t); });
  return out;
}

}  // namespace

void EncoderParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_params(*this, fn);
}

void EncoderParams::for_each(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_params(*this, fn);
}

std::vector<NamedTensor> EncoderParams::named() const {
  std::vector<NamedTensor> out;
  for_each([&](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
  return out;
}

std::vector<Tensor> EncoderParams::tensors() const {
  std::vector<Tensor> out;
  for_each([&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

EncoderParams EncoderParams::leaf_views() const {
  return map_params(*this, [](const Tensor& t) { return t.leaf_view(); });
}

EncoderParams EncoderParams::clone() const {
  return map_params(*this, [](const Tensor& t) { return t.clone(); });
}

std::size_t parameter_count(const EncoderConfig& cfg) {
  const std::size_t d = cfg.latent, c = cfg.slices_per_node;
  std::size_t n = 0;
  if (cfg.feature_init == FeatureInit::kTinyCnn) {
    n += cfg.cnn_channels * c * 9 + cfg.cnn_channels + d * cfg.cnn_channels * 9 + d;
  } else {
    n += c * cfg.height * cfg.width * d + d;
  }
  if (cfg.positional) n += cfg.nodes() * d;
  std::size_t block = d * d + d;
  if (cfg.layer_norm) block += 4 * d;
  block += cfg.op == GraphOperator::kChebyshev ? cfg.filter_size * d * d : 2 * d * d;
  n += cfg.blocks * block;
  n += d * cfg.labels + cfg.labels;
  return n;
}

EncoderParams init_params(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg.latent, c = cfg.slices_per_node;

  auto uniform = [&](Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(double(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), true);
  };
  auto constant = [](Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), true);
  };

  EncoderParams p;
  if (cfg.feature_init == FeatureInit::kTinyCnn) {
    p.conv1_weight = uniform({cfg.cnn_channels, c, 3, 3}, c * 9);
    p.conv1_bias = constant({cfg.cnn_channels}, 0.0);
    p.conv2_weight = uniform({d, cfg.cnn_channels, 3, 3}, cfg.cnn_channels * 9);
    p.conv2_bias = constant({d}, 0.0);
  } else {
    const std::size_t in = c * cfg.height * cfg.width;
    p.proj_weight = uniform({in, d}, in);
    p.proj_bias = constant({d}, 0.0);
  }
  if (cfg.positional) {
    std::normal_distribution<double> dist(0.0, 0.02);
    std::vector<double> v(cfg.nodes() * d);
    for (double& x : v) x = dist(rng);
    p.positional = Tensor({cfg.nodes(), d}, std::move(v), true);
  }
  for (std::size_t l = 0; l < cfg.blocks; ++l) {
    BlockParams b;
    if (cfg.layer_norm) {
      b.ln1_gamma = constant({d}, 1.0);
      b.ln1_beta = constant({d}, 0.0);
    }
    if (cfg.op == GraphOperator::kChebyshev) {
      for (std::size_t k = 0; k < cfg.filter_size; ++k) b.theta.push_back(uniform({d, d}, d));
    } else {
      b.self_weight = uniform({d, d}, d);
      b.neighbor_weight = uniform({d, d}, d);
    }
    if (cfg.layer_norm) {
      b.ln2_gamma = constant({d}, 1.0);
      b.ln2_beta = constant({d}, 0.0);
    }
    b.ffn_weight = uniform({d, d}, d);
    b.ffn_bias = constant({d}, 0.0);
    p.blocks.push_back(std::move(b));
  }
  p.head_weight = uniform({d, cfg.labels}, d);
  p.head_bias = constant({cfg.labels}, 0.0);
  return p;
}

EncoderParams params_from_named(const EncoderConfig& cfg, const std::vector<NamedTensor>& named) {
  std::map<std::string, const Tensor*> by_name;
  for (const NamedTensor& nt : named) by_name[nt.name] = &nt.tensor;
  EncoderParams p = init_params(cfg, 0);
  std::size_t used = 0;
  p.for_each([&](const std::string& name, Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw LoadError("checkpoint lacks parameter " + name);
    if (it->second->shape() != t.shape()) {
      throw LoadError("parameter " + name + " has shape " + shape_string(it->second->shape()) +
                      ", config expects " + shape_string(t.shape()));
    }
    t = it->second->clone(true);
    ++used;
  });
  if (used != by_name.size()) throw LoadError("checkpoint holds parameters the config does not use");
  return p;
}

Tensor init_features(const EncoderConfig& cfg, const Tensor& volume, const EncoderParams& params) {
  const Shape expected{cfg.slices, cfg.height, cfg.width};
  if (volume.shape() != expected) {
    throw DimensionError("volume " + shape_string(volume.shape()) + " does not match config " +
                         shape_string(expected));
  }
  const std::size_t n = cfg.nodes(), c = cfg.slices_per_node;
  if (cfg.feature_init == FeatureInit::kFlattenLinear) {
    Tensor flat = reshape(volume, {n, c * cfg.height * cfg.width});
    return linear(flat, params.proj_weight, params.proj_bias);
  }
  Tensor triplets = reshape(volume, {n, c, cfg.height, cfg.width});
  Tensor h1 = gelu(conv2d(triplets, params.conv1_weight, params.conv1_bias, 2, 1));
  Tensor h2 = gelu(conv2d(h1, params.conv2_weight, params.conv2_bias, 2, 1));
  const Shape& s = h2.shape();
  return mean_over_axis(reshape(h2, {s[0], s[1], s[2] * s[3]}), 2);
}

Tensor add_positional(const Tensor& features, const Tensor& positional) {
  if (features.shape() != positional.shape()) {
    throw DimensionError("positional table " + shape_string(positional.shape()) +
                         " does not match features " + shape_string(features.shape()));
  }
  return add(features, positional);
}

Tensor cheb_conv(const Tensor& x, const Tensor& scaled_laplacian, std::span<const Tensor> theta) {
  if (theta.empty()) throw ValidationError("cheb_conv: filter size K must be >= 1");
  if (x.rank() != 2 || scaled_laplacian.rank() != 2 ||
      scaled_laplacian.shape()[0] != x.shape()[0] ||
      scaled_laplacian.shape()[1] != x.shape()[0]) {
    throw DimensionError("cheb_conv: features " + shape_string(x.shape()) +
                         " do not fit Laplacian " + shape_string(scaled_laplacian.shape()));
  }
  Tensor out = matmul(x, theta[0]);
  if (theta.size() == 1) return out;
  Tensor prev = x;
  Tensor cur = matmul(scaled_laplacian, x);
  out = add(out, matmul(cur, theta[1]));
  for (std::size_t k = 2; k < theta.size(); ++k) {
    Tensor next = sub(scale(matmul(scaled_laplacian, cur), 2.0), prev);
    out = add(out, matmul(next, theta[k]));
    prev = cur;
    cur = next;
  }
  return out;
}

Tensor graph_conv(const Tensor& x, const Tensor& adjacency, const Tensor& self_weight,
                  const Tensor& neighbor_weight) {
  if (x.rank() != 2 || adjacency.rank() != 2 || adjacency.shape()[0] != x.shape()[0] ||
      adjacency.shape()[1] != x.shape()[0]) {
    throw DimensionError("graph_conv: features " + shape_string(x.shape()) +
                         " do not fit adjacency " + shape_string(adjacency.shape()));
  }
  return add(matmul(x, self_weight), matmul(matmul(adjacency, x), neighbor_weight));
}

namespace {

Tensor matrix_tensor(const Eigen::MatrixXd& m) {
  std::vector<double> v(std::size_t(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) v[std::size_t(i * m.cols() + j)] = m(i, j);
  }
  return Tensor({std::size_t(m.rows()), std::size_t(m.cols())}, std::move(v));
}

}  // namespace

BlockGraph block_graph_tensors(const SliceGraph& graph) {
  return {matrix_tensor(graph.scaled_laplacian), matrix_tensor(graph.adjacency)};
}

Tensor spectral_block(const EncoderConfig& cfg, const Tensor& h, const BlockGraph& graph,
                      const BlockParams& params) {
  auto norm = [&](const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    return cfg.layer_norm ? layer_norm(x, gamma, beta, cfg.layer_norm_eps) : x;
  };
  Tensor normed = norm(h, params.ln1_gamma, params.ln1_beta);
  Tensor conv = cfg.op == GraphOperator::kChebyshev
                    ? cheb_conv(normed, graph.scaled_laplacian, params.theta)
                    : graph_conv(normed, graph.adjacency, params.self_weight,
                                 params.neighbor_weight);
  Tensor z = cfg.residual ? add(h, conv) : conv;
  Tensor ffn = gelu(linear(norm(z, params.ln2_gamma, params.ln2_beta), params.ffn_weight,
                           params.ffn_bias));
  return cfg.residual ? add(z, ffn) : ffn;
}

SpectralEncoder::SpectralEncoder(EncoderConfig cfg, GraphConfig graph,
                                 std::vector<std::size_t> per_layer_q)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (graph.nodes != cfg_.nodes()) {
    throw ValidationError("graph has N=" + std::to_string(graph.nodes) + " nodes but the volume " +
                          "gives N=S/C=" + std::to_string(cfg_.nodes()));
  }
  if (!per_layer_q.empty() && per_layer_q.size() != cfg_.blocks) {
    throw ValidationError("per-layer receptive fields: expected " + std::to_string(cfg_.blocks) +
                          " entries, got " + std::to_string(per_layer_q.size()));
  }
  std::map<std::size_t, std::size_t> built;  // q -> index in graphs_
  for (std::size_t l = 0; l < cfg_.blocks; ++l) {
    GraphConfig gc = graph;
    if (!per_layer_q.empty()) gc.receptive_field = per_layer_q[l];
    const std::size_t key = gc.effective_receptive_field();
    auto it = built.find(key);
    if (it == built.end()) {
      graphs_.push_back(build_graph(gc));
      graph_tensors_.push_back(block_graph_tensors(graphs_.back()));
      it = built.emplace(key, graphs_.size() - 1).first;
    }
    layer_graph_.push_back(it->second);
  }
}

Tensor SpectralEncoder::propagate(const Tensor& volume, const EncoderParams& params) const {
  Tensor h = init_features(cfg_, volume, params);
  if (cfg_.positional) h = add_positional(h, params.positional);
  for (std::size_t l = 0; l < cfg_.blocks; ++l) {
    h = spectral_block(cfg_, h, graph_tensors_[layer_graph_[l]], params.blocks[l]);
  }
  return h;
}

Tensor SpectralEncoder::forward(const Tensor& volume, const EncoderParams& params) const {
  Tensor pooled = mean_over_axis(propagate(volume, params), 0);
  return linear(pooled, params.head_weight, params.head_bias);
}

}  // namespace ctssg
