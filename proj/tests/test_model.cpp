// Copyright 2026 The tgrow Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "test_support.hpp"
#include "tgrow/model.hpp"

using namespace tgrow;
using Catch::Matchers::WithinAbs;

namespace {

// One layer, two hidden dims, one head with scalar q/k/v, scalar MLP, two
// outputs. Small enough to unroll the whole forward pass by hand.
ModelConfig micro_config(Activation act = Activation::Relu) {
  ModelConfig c;
  c.num_layers = 1;
  c.hidden = 2;
  c.num_heads = 1;
  c.key_dim = 1;
  c.value_dim = 1;
  c.mlp_inner = 1;
  c.out_dim = 2;
  c.max_seq = 2;
  c.vocab = 3;
  c.activation = act;
  return c;
}

ModelParams micro_params(const ModelConfig& c) {
  ModelParams p = zero_params(c);
  p.embedding = Matrix::from_rows({{0.5, -0.25}, {1.0, 2.0}, {-1.5, 0.75}});
  p.pos = Matrix::from_rows({{0.1, 0.2}, {-0.3, 0.4}});
  auto& l = p.layers[0];
  l.g_mha = Matrix::from_rows({{1.25, 0.75}});
  l.heads[0].wq = Matrix::from_rows({{0.6}, {-0.4}});
  l.heads[0].wk = Matrix::from_rows({{0.2}, {0.9}});
  l.heads[0].wv = Matrix::from_rows({{1.1}, {-0.7}});
  l.wo = Matrix::from_rows({{0.8, -0.5}});
  l.g_mlp = Matrix::from_rows({{0.9, 1.1}});
  l.wl1 = Matrix::from_rows({{0.45}, {-0.85}});
  l.bl1 = Matrix::from_rows({{0.15}});
  l.wl2 = Matrix::from_rows({{-0.35, 0.65}});
  l.bl2 = Matrix::from_rows({{0.05, -0.1}});
  p.w_out = Matrix::from_rows({{1.2, -0.2}, {0.3, 0.55}});
  return p;
}

// Scalar reimplementation of the whole forward pass, kept deliberately free
// of the Matrix kernels so it can serve as an independent oracle.
void micro_expected(const ModelConfig& c, const ModelParams& p, const TokenSeq& toks,
                    double out[2][2]) {
  auto act = [&](double x) {
    if (c.activation == Activation::Relu) return x > 0.0 ? x : 0.0;
    return x * 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  };
  double x[2][2];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) x[i][j] = p.embedding(toks[i], j) + p.pos(i, j);

  const auto& l = p.layers[0];
  double nm[2][2];
  for (int i = 0; i < 2; ++i) {
    const double r = std::sqrt((x[i][0] * x[i][0] + x[i][1] * x[i][1]) / 2.0);
    for (int j = 0; j < 2; ++j) nm[i][j] = x[i][j] * l.g_mha(0, j) / r;
  }
  double q[2], k[2], v[2];
  for (int i = 0; i < 2; ++i) {
    q[i] = nm[i][0] * l.heads[0].wq(0, 0) + nm[i][1] * l.heads[0].wq(1, 0);
    k[i] = nm[i][0] * l.heads[0].wk(0, 0) + nm[i][1] * l.heads[0].wk(1, 0);
    v[i] = nm[i][0] * l.heads[0].wv(0, 0) + nm[i][1] * l.heads[0].wv(1, 0);
  }
  double h[2];
  for (int i = 0; i < 2; ++i) {
    const double l0 = q[i] * k[0], l1 = q[i] * k[1];  // divided by sqrt(1)
    const double m = std::max(l0, l1);
    const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
    h[i] = (e0 * v[0] + e1 * v[1]) / (e0 + e1);
  }
  double xm[2][2];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) xm[i][j] = x[i][j] + h[i] * l.wo(0, j);

  double nm2[2][2];
  for (int i = 0; i < 2; ++i) {
    const double r = std::sqrt((xm[i][0] * xm[i][0] + xm[i][1] * xm[i][1]) / 2.0);
    for (int j = 0; j < 2; ++j) nm2[i][j] = xm[i][j] * l.g_mlp(0, j) / r;
  }
  double xo[2][2];
  for (int i = 0; i < 2; ++i) {
    const double pre = nm2[i][0] * l.wl1(0, 0) + nm2[i][1] * l.wl1(1, 0) + l.bl1(0, 0);
    const double a = act(pre);
    for (int j = 0; j < 2; ++j) xo[i][j] = xm[i][j] + a * l.wl2(0, j) + l.bl2(0, j);
  }
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      out[i][j] = xo[i][0] * p.w_out(0, j) + xo[i][1] * p.w_out(1, j);
}

}  // namespace

TEST_CASE("param_count closed form matches tensor enumeration", "[model]") {
  for (const ModelConfig& c : {ts::desk_config(), ts::tiny_config(), micro_config()}) {
    ModelParams p = zero_params(c);
    std::size_t enumerated = 0;
    for_each_tensor(p, [&](const std::string&, const Matrix& m) { enumerated += m.size(); });
    REQUIRE(param_count(c) == enumerated);
  }
  // Hand-computed totals.
  REQUIRE(param_count(ts::desk_config()) == 8176);
  REQUIRE(param_count(ts::tiny_config()) == 148);
}

TEST_CASE("init_params is seeded and leaves gains at one", "[model]") {
  const ModelConfig c = ts::tiny_config();
  ModelParams a = init_params(c, 7, 0.02);
  ModelParams b = init_params(c, 7, 0.02);
  REQUIRE(ts::params_bits_equal(a, b));
  ModelParams other = init_params(c, 8, 0.02);
  REQUIRE_FALSE(ts::params_bits_equal(a, other));

  for (const auto& layer : a.layers) {
    for (std::size_t j = 0; j < c.hidden; ++j) {
      REQUIRE(layer.g_mha(0, j) == 1.0);
      REQUIRE(layer.g_mlp(0, j) == 1.0);
    }
  }
  REQUIRE(max_abs(a.embedding) > 0.0);
  REQUIRE(max_abs(a.embedding) < 0.2);  // 10 sigma on 0.02
  REQUIRE(validate(a, c).empty());
  REQUIRE_THROWS_AS(init_params(c, 1, 0.0), std::invalid_argument);
}

TEST_CASE("validate reports every shape problem", "[model]") {
  const ModelConfig c = ts::tiny_config();
  ModelParams p = zero_params(c);
  REQUIRE(validate(p, c).empty());

  p.w_out = Matrix(c.hidden + 1, c.out_dim);
  p.layers[0].bl1 = Matrix(1, c.mlp_inner + 2);
  auto errs = validate(p, c);
  REQUIRE(errs.size() == 2);
  REQUIRE(errs[0].find("bl1") != std::string::npos);
  REQUIRE(errs[1].find("w_out") != std::string::npos);

  ModelConfig bad = c;
  bad.hidden = 0;
  auto cfg_errs = validate_config(bad);
  REQUIRE(cfg_errs.size() == 1);
  REQUIRE(cfg_errs[0].find("hidden") != std::string::npos);
}

TEST_CASE("embed looks up rows and rejects bad tokens", "[model]") {
  const ModelConfig c = micro_config();
  ModelParams p = micro_params(c);
  Matrix e = embed(p, {2, 0}, c);
  REQUIRE(e(0, 0) == -1.5);
  REQUIRE(e(0, 1) == 0.75);
  REQUIRE(e(1, 0) == 0.5);
  REQUIRE_THROWS_AS(embed(p, {3}, c), std::invalid_argument);       // token out of range
  REQUIRE_THROWS_AS(embed(p, {0, 1, 0}, c), std::invalid_argument); // longer than max_seq
  REQUIRE_THROWS_AS(embed(p, {}, c), std::invalid_argument);
}

TEST_CASE("attention with zero queries averages the values", "[model]") {
  Matrix q(2, 3);  // all zeros: uniform softmax
  Prng rng(11);
  Matrix k = random_normal(2, 3, rng, 1.0);
  Matrix v = Matrix::from_rows({{1.0, 3.0}, {5.0, 7.0}});
  Matrix out = attention(q, k, v);
  REQUIRE(out(0, 0) == 3.0);
  REQUIRE(out(0, 1) == 5.0);
  REQUIRE(out(1, 0) == 3.0);
  REQUIRE(out(1, 1) == 5.0);
  REQUIRE_THROWS_AS(attention(q, random_normal(2, 2, rng, 1.0), v), std::invalid_argument);
}

TEST_CASE("forward matches the hand-unrolled micro model", "[model]") {
  for (Activation act : {Activation::Relu, Activation::Gelu}) {
    const ModelConfig c = micro_config(act);
    const ModelParams p = micro_params(c);
    for (TokenSeq toks : {TokenSeq{2, 0}, TokenSeq{1, 2}, TokenSeq{0, 1}}) {
      double expected[2][2];
      micro_expected(c, p, toks, expected);
      Matrix got = forward(p, toks, c);
      REQUIRE(got.rows() == 2);
      REQUIRE(got.cols() == 2);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) REQUIRE_THAT(got(i, j), WithinAbs(expected[i][j], 1e-13));
    }
  }
}

TEST_CASE("forward with zero layers is embedding plus readout", "[model]") {
  ModelConfig c = micro_config();
  c.num_layers = 0;
  ModelParams p = zero_params(c);
  p.embedding = micro_params(micro_config()).embedding;
  p.pos = micro_params(micro_config()).pos;
  p.w_out = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  TokenSeq toks{1, 2};
  Matrix x = add(embed(p, toks, c), slice_rows(p.pos, 0, 2));
  REQUIRE(bits_equal(forward(p, toks, c), matmul(x, p.w_out)));
}

TEST_CASE("a layer with zero wo, wl2, bl2 is the identity", "[model]") {
  const ModelConfig c = ts::tiny_config();
  Model m = ts::random_model(c, 3);
  auto& l = m.params.layers[0];
  l.wo = Matrix(c.num_heads * c.value_dim, c.hidden);
  l.wl2 = Matrix(c.mlp_inner, c.hidden);
  l.bl2 = Matrix(1, c.hidden);
  Prng rng(5);
  Matrix x = random_normal(3, c.hidden, rng, 1.0);
  REQUIRE(bits_equal(layer_forward(l, x, c), x));
}

TEST_CASE("shorter sequences use a positional prefix", "[model]") {
  const ModelConfig c = ts::tiny_config();
  Model m = ts::random_model(c, 9);
  Matrix full = forward(m.params, {1, 2, 3}, c);
  Matrix short_seq = forward(m.params, {1}, c);
  REQUIRE(short_seq.rows() == 1);
  REQUIRE(short_seq.cols() == c.out_dim);
  REQUIRE(forward(m, {1}).rows() == 1);  // Model overload agrees
  REQUIRE(bits_equal(forward(m, {1, 2, 3}), full));
}

TEST_CASE("activation choice changes the function", "[model]") {
  Model relu_m = ts::random_model(ts::tiny_config(Activation::Relu), 4);
  Model gelu_m = relu_m;
  gelu_m.config.activation = Activation::Gelu;
  REQUIRE(max_abs_diff(forward(relu_m, {1, 2}), forward(gelu_m, {1, 2})) > 1e-6);
}
