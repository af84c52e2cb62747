#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ctssg/encoder.hpp"
#include "ctssg/errors.hpp"
#include "ctssg/ops.hpp"
#include "ctssg/oracles.hpp"

using namespace ctssg;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, bool requires_grad = false) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = normal(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

EncoderConfig small_config(FeatureInit init = FeatureInit::kFlattenLinear) {
  EncoderConfig c;
  c.slices = 12;
  c.height = 8;
  c.width = 8;
  c.latent = 6;
  c.labels = 3;
  c.feature_init = init;
  return c;
}

GraphConfig graph_for(const EncoderConfig& c, std::size_t q = 1) {
  GraphConfig g;
  g.nodes = c.nodes();
  g.receptive_field = q;
  return g;
}

Tensor random_volume(std::mt19937_64& rng, const EncoderConfig& c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(c.slices * c.height * c.width);
  for (double& x : v) x = u(rng);
  return Tensor({c.slices, c.height, c.width}, v);
}

}  // namespace

TEST_CASE("config validation") {
  EncoderConfig c = small_config();
  c.slices = 13;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small_config();
  c.filter_size = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small_config();
  GraphConfig wrong;
  wrong.nodes = 5;
  CHECK_THROWS_AS(SpectralEncoder(c, wrong), ValidationError);
}

TEST_CASE("init_features: linearity and per-triplet independence") {
  for (FeatureInit init : {FeatureInit::kFlattenLinear, FeatureInit::kTinyCnn}) {
    CAPTURE(to_string(init));
    const EncoderConfig c = small_config(init);
    const EncoderParams p = init_params(c, 3);
    std::mt19937_64 rng(1);
    if (init == FeatureInit::kFlattenLinear) {
      const Tensor zero = init_features(c, Tensor({12, 8, 8}), p);
      CHECK(vals(zero) == std::vector<double>(4 * 6, 0.0));
    }
    const Tensor v1 = random_volume(rng, c);
    std::vector<double> v2(v1.values().begin(), v1.values().end());
    for (std::size_t k = 2 * 3 * 64; k < 3 * 3 * 64; ++k) v2[k] += 0.25;  // triplet 2 only
    const Tensor a = init_features(c, v1, p), b = init_features(c, Tensor(v1.shape(), v2), p);
    for (std::size_t r = 0; r < 4; ++r) {
      bool same = true;
      for (std::size_t j = 0; j < 6; ++j) same = same && a[r * 6 + j] == b[r * 6 + j];
      CHECK(same == (r != 2));
    }
    CHECK_THROWS_AS(init_features(c, Tensor({12, 8, 7}), p), DimensionError);
  }
}

TEST_CASE("init_features: permuting triplets permutes rows") {
  const EncoderConfig c = small_config(FeatureInit::kTinyCnn);
  const EncoderParams p = init_params(c, 4);
  std::mt19937_64 rng(2);
  const Tensor v = random_volume(rng, c);
  const std::size_t perm[4] = {2, 0, 3, 1};
  std::vector<double> pv(v.numel());
  const std::size_t block = 3 * 64;
  for (std::size_t t = 0; t < 4; ++t) {
    std::copy_n(v.values().begin() + long(perm[t] * block), block, pv.begin() + long(t * block));
  }
  const Tensor a = init_features(c, v, p), b = init_features(c, Tensor(v.shape(), pv), p);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t j = 0; j < 6; ++j) CHECK(b[t * 6 + j] == a[perm[t] * 6 + j]);
  }
}

TEST_CASE("add_positional") {
  std::mt19937_64 rng(3);
  const Tensor h = random_tensor(rng, {4, 6}), pos = random_tensor(rng, {4, 6});
  CHECK(vals(add_positional(h, Tensor({4, 6}))) == vals(h));
  CHECK(vals(add_positional(Tensor({4, 6}), pos)) == vals(pos));
  CHECK_THROWS_AS(add_positional(h, Tensor({3, 6})), DimensionError);

  // dloss/dP equals dloss/dH.
  Tensor hg = h.clone(true), pg = pos.clone(true);
  const Tensor w = random_tensor(rng, {4, 6});
  Tape tape;
  Tensor loss;
  {
    Tape::Scope scope(&tape);
    loss = sum(mul(gelu(add_positional(hg, pg)), w));
  }
  tape.backward(loss);
  CHECK(vals(Tensor({24}, {hg.grad().begin(), hg.grad().end()})) ==
        vals(Tensor({24}, {pg.grad().begin(), pg.grad().end()})));
}

TEST_CASE("cheb_conv special cases") {
  std::mt19937_64 rng(4);
  GraphConfig g;
  g.nodes = 5;
  g.receptive_field = 2;
  const BlockGraph bg = block_graph_tensors(build_graph(g));
  const Tensor x = random_tensor(rng, {5, 3}), t0 = random_tensor(rng, {3, 3});
  CHECK(vals(cheb_conv(x, bg.scaled_laplacian, std::vector<Tensor>{t0})) == vals(matmul(x, t0)));
  const Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor lx = cheb_conv(x, bg.scaled_laplacian, std::vector<Tensor>{Tensor({3, 3}), eye});
  const Tensor ref = matmul(bg.scaled_laplacian, x);
  for (std::size_t i = 0; i < 15; ++i) CHECK(lx[i] == doctest::Approx(ref[i]).epsilon(1e-15));
  CHECK_THROWS_AS(cheb_conv(x, bg.scaled_laplacian, std::vector<Tensor>{}), ValidationError);
}

TEST_CASE("cheb_conv agrees with the spectral oracle on small graphs") {
  std::mt19937_64 rng(5);
  for (std::size_t n = 2; n <= 8; ++n) {
    GraphConfig g;
    g.nodes = n;
    g.receptive_field = 1 + rng() % (n - 1);
    const SliceGraph graph = build_graph(g);
    const Eigen::MatrixXd x = oracle::to_matrix(random_tensor(rng, {n, 2}));
    for (std::size_t k = 1; k <= 5; ++k) {
      std::vector<Eigen::MatrixXd> theta;
      std::vector<Tensor> tt;
      for (std::size_t i = 0; i < k; ++i) {
        tt.push_back(random_tensor(rng, {2, 2}));
        theta.push_back(oracle::to_matrix(tt.back()));
      }
      const Eigen::MatrixXd got =
          oracle::to_matrix(cheb_conv(oracle::to_tensor(x), oracle::to_tensor(graph.scaled_laplacian), tt));
      CHECK(oracle::max_relative_error(got, oracle::chebyshev_spectral(x, graph.scaled_laplacian, theta)) <
            1e-10);
    }
  }
}

TEST_CASE("graph_conv") {
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor(rng, {3, 2}), ws = random_tensor(rng, {2, 2}), wn = random_tensor(rng, {2, 2});
  CHECK(vals(graph_conv(x, Tensor({3, 3}), ws, wn)) == vals(matmul(x, ws)));
  CHECK(vals(graph_conv(x, Tensor({3, 3}, {0, 1, 0, 1, 0, 1, 0, 1, 0}), ws, Tensor({2, 2}))) ==
        vals(matmul(x, ws)));

  // 3-node path with weights 2 and 3, neighbor sums by hand.
  const Tensor a({3, 3}, {0, 2, 0, 2, 0, 3, 0, 3, 0});
  const Tensor out = graph_conv(x, a, Tensor({2, 2}), Tensor({2, 2}, {1, 0, 0, 1}));
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(out[0 * 2 + c] == doctest::Approx(2 * x[1 * 2 + c]));
    CHECK(out[1 * 2 + c] == doctest::Approx(2 * x[0 * 2 + c] + 3 * x[2 * 2 + c]));
    CHECK(out[2 * 2 + c] == doctest::Approx(3 * x[1 * 2 + c]));
  }
  CHECK_THROWS_AS(graph_conv(x, Tensor({2, 2}), ws, wn), DimensionError);
}

TEST_CASE("spectral_block: zeroed branches pass H through") {
  for (GraphOperator op : {GraphOperator::kChebyshev, GraphOperator::kGraphConv}) {
    EncoderConfig c = small_config();
    c.op = op;
    EncoderParams p = init_params(c, 7);
    BlockParams& b = p.blocks[0];
    for (Tensor& t : b.theta) t = Tensor(t.shape());
    if (b.self_weight.defined()) b.self_weight = Tensor(b.self_weight.shape());
    if (b.neighbor_weight.defined()) b.neighbor_weight = Tensor(b.neighbor_weight.shape());
    b.ffn_weight = Tensor(b.ffn_weight.shape());
    std::mt19937_64 rng(8);
    const Tensor h = random_tensor(rng, {4, 6});
    const BlockGraph bg = block_graph_tensors(build_graph(graph_for(c, 2)));
    CHECK(vals(spectral_block(c, h, bg, b)) == vals(h));
  }
}

TEST_CASE("spectral_block: K = 1 ignores the edge weights") {
  EncoderConfig c = small_config();
  c.filter_size = 1;
  const EncoderParams p = init_params(c, 9);
  std::mt19937_64 rng(10);
  const Tensor h = random_tensor(rng, {4, 6});
  GraphConfig g1 = graph_for(c, 2), g2 = g1;
  g2.spacing_dm = 0.07;
  const Tensor a = spectral_block(c, h, block_graph_tensors(build_graph(g1)), p.blocks[0]);
  const Tensor b = spectral_block(c, h, block_graph_tensors(build_graph(g2)), p.blocks[0]);
  CHECK(vals(a) == vals(b));
}

TEST_CASE("spectral_block gradient check") {
  for (GraphOperator op : {GraphOperator::kChebyshev, GraphOperator::kGraphConv}) {
    EncoderConfig c = small_config();
    c.op = op;
    const EncoderParams p = init_params(c, 11);
    std::mt19937_64 rng(12);
    Tensor h = random_tensor(rng, {4, 6}, true);
    const BlockGraph bg = block_graph_tensors(build_graph(graph_for(c, 2)));
    const Tensor w = random_tensor(rng, {4, 6});
    std::vector<Tensor> params = p.tensors();
    params.push_back(h);
    const auto r = grad_check([&] { return sum(mul(spectral_block(c, h, bg, p.blocks[0]), w)); }, params);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("encoder: logits shape, determinism, permutation sensitivity") {
  const EncoderConfig c = small_config(FeatureInit::kTinyCnn);
  const SpectralEncoder enc(c, graph_for(c, 1));
  const EncoderParams p = init_params(c, 13);
  std::mt19937_64 rng(14);
  const Tensor v = random_volume(rng, c);
  const Tensor y1 = enc.forward(v, p), y2 = enc.forward(v, p);
  CHECK(y1.shape() == Shape{3});
  CHECK(vals(y1) == vals(y2));

  std::vector<double> pv(v.values().begin(), v.values().end());
  std::rotate(pv.begin(), pv.begin() + 3 * 64, pv.end());
  CHECK(vals(enc.forward(Tensor(v.shape(), pv), p)) != vals(y1));
}

TEST_CASE("parameter counts") {
  for (FeatureInit init : {FeatureInit::kFlattenLinear, FeatureInit::kTinyCnn}) {
    for (GraphOperator op : {GraphOperator::kChebyshev, GraphOperator::kGraphConv}) {
      EncoderConfig c = small_config(init);
      c.op = op;
      c.blocks = 2;
      CHECK(parameter_count(c) == init_params(c, 0).parameter_count());
      c.positional = false;
      CHECK(parameter_count(c) == init_params(c, 0).parameter_count());
    }
  }
  EncoderConfig c = small_config();
  std::size_t prev = 0;
  for (std::size_t k : {1, 3, 5}) {
    c.filter_size = k;
    CHECK(parameter_count(c) > prev);
    prev = parameter_count(c);
  }
  c.filter_size = 3;
  prev = 0;
  for (std::size_t l : {1, 3, 5}) {
    c.blocks = l;
    CHECK(parameter_count(c) > prev);
    prev = parameter_count(c);
  }
}

TEST_CASE("init_params: seeded and conventional") {
  const EncoderConfig c = small_config();
  const EncoderParams a = init_params(c, 5), b = init_params(c, 5), d = init_params(c, 6);
  CHECK(vals(a.proj_weight) == vals(b.proj_weight));
  CHECK(vals(a.proj_weight) != vals(d.proj_weight));
  CHECK(vals(a.blocks[0].ln1_gamma) == std::vector<double>(6, 1.0));
  CHECK(vals(a.blocks[0].ffn_bias) == std::vector<double>(6, 0.0));
  const double bound = 1.0 / std::sqrt(double(3 * 64));
  for (double w : a.proj_weight.values()) CHECK(std::abs(w) <= bound);
}

TEST_CASE("named parameters round trip") {
  const EncoderConfig c = small_config(FeatureInit::kTinyCnn);
  const EncoderParams p = init_params(c, 15);
  const auto named = p.named();
  CHECK(named.front().name == "features.conv1.weight");
  const EncoderParams q = params_from_named(c, named);
  CHECK(q.parameter_count() == p.parameter_count());
  CHECK(vals(q.blocks[0].theta[2]) == vals(p.blocks[0].theta[2]));
  auto broken = named;
  broken.pop_back();
  CHECK_THROWS_AS(params_from_named(c, broken), LoadError);
}

TEST_CASE("per-layer receptive fields") {
  EncoderConfig c = small_config();
  c.blocks = 3;
  const SpectralEncoder enc(c, graph_for(c, 1), {1, 3, 1});
  CHECK(enc.graph(0).edges.size() == 3);
  CHECK(enc.graph(1).edges.size() == 6);
  CHECK(&enc.graph(0) == &enc.graph(2));
  CHECK_THROWS_AS(SpectralEncoder(c, graph_for(c, 1), {1, 2}), ValidationError);
}
