// Copyright 2026 The tgrow Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "test_support.hpp"
#include "tgrow/autograd.hpp"

using namespace tgrow;
using namespace tgrow::autograd;

TEST_CASE("forward_with_tape reproduces forward bit for bit", "[autograd]") {
  ModelConfig c = ts::tiny_config(Activation::Gelu);
  Model m = ts::random_model(c, 71);
  TokenSeq tokens = {1, 4, 2};
  Tape t = forward_with_tape(m.params, tokens, c);
  REQUIRE(bits_equal(t.logits, forward(m.params, tokens, c)));
  REQUIRE(t.layers.size() == c.num_layers);
  REQUIRE(t.tokens == tokens);

  // The tape is a faithful trace: replaying each layer from its recorded
  // input lands exactly on the next recorded input.
  Matrix x = t.x0;
  for (std::size_t i = 0; i < t.layers.size(); ++i) {
    REQUIRE(bits_equal(t.layers[i].x_in, x));
    x = layer_forward(m.params.layers[i], x, c);
  }
  REQUIRE(bits_equal(t.x_final, x));
  REQUIRE(bits_equal(t.logits, matmul(t.x_final, m.params.w_out)));
}

TEST_CASE("cross entropy matches hand-computed values", "[autograd]") {
  SECTION("uniform logits give log(classes)") {
    Matrix logits = Matrix::filled(2, 4, 3.25);
    TokenSeq targets = {0, 3};
    LossGrad lg = cross_entropy_loss(logits, targets);
    REQUIRE(std::abs(lg.loss - std::log(4.0)) <= 1e-15);
    // Gradient rows sum to zero: softmax mass 1 minus the one-hot 1.
    for (std::size_t i = 0; i < 2; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 4; ++j) s += lg.dlogits(i, j);
      REQUIRE(std::abs(s) <= 1e-15);
    }
    REQUIRE(lg.dlogits(0, 0) == (0.25 - 1.0) / 2.0);
  }
  SECTION("two classes reduce to the logistic loss") {
    const double a = 0.37, b = -1.21;
    Matrix logits = Matrix::from_rows({{a, b}});
    LossGrad lg = cross_entropy_loss(logits, {0});
    REQUIRE(std::abs(lg.loss - std::log(1.0 + std::exp(b - a))) <= 1e-12);
  }
  SECTION("huge margins do not overflow") {
    Matrix logits = Matrix::from_rows({{1000.0, 0.0}});
    LossGrad lg = cross_entropy_loss(logits, {0});
    REQUIRE(std::isfinite(lg.loss));
    REQUIRE(lg.loss <= 1e-6);
    LossGrad lw = cross_entropy_loss(logits, {1});
    REQUIRE(std::abs(lw.loss - 1000.0) <= 1e-9);
  }
  SECTION("bad targets are rejected") {
    Matrix logits(2, 3);
    REQUIRE_THROWS_AS(cross_entropy_loss(logits, {0}), std::invalid_argument);
    REQUIRE_THROWS_AS(cross_entropy_loss(logits, {0, 3}), std::invalid_argument);
  }
}

TEST_CASE("backward handles the zero-layer readout exactly", "[autograd]") {
  ModelConfig c = ts::tiny_config();
  c.num_layers = 0;
  ModelParams p = init_params(c, 72, 0.3);
  TokenSeq tokens = {2, 2, 5};  // duplicate token exercises row accumulation
  Tape t = forward_with_tape(p, tokens, c);
  LossGrad lg = cross_entropy_loss(t.logits, {1, 0, 6});
  ParamGrads g = backward(t, lg.dlogits, p, c);

  // With no layers the readout gradient is a single exact matmul.
  REQUIRE(bits_equal(g.w_out, matmul(transpose(t.x0), lg.dlogits)));
  Matrix dx0 = matmul(lg.dlogits, transpose(p.w_out));
  for (std::size_t i = 0; i < tokens.size(); ++i)
    for (std::size_t j = 0; j < c.hidden; ++j) REQUIRE(g.pos(i, j) == dx0(i, j));
  for (std::size_t j = 0; j < c.hidden; ++j) {
    REQUIRE(g.embedding(2, j) == dx0(0, j) + dx0(1, j));
    REQUIRE(g.embedding(5, j) == dx0(2, j));
    REQUIRE(g.embedding(0, j) == 0.0);
  }
}

TEST_CASE("backward of zero upstream gradient is zero", "[autograd]") {
  ModelConfig c = ts::tiny_config();
  Model m = ts::random_model(c, 73);
  TokenSeq tokens = {0, 6, 3};
  Tape t = forward_with_tape(m.params, tokens, c);
  Matrix dlogits(tokens.size(), c.out_dim);
  ParamGrads g = backward(t, dlogits, m.params, c);
  double worst = 0.0;
  for_each_tensor(g, [&](const std::string&, const Matrix& mt) {
    worst = std::max(worst, max_abs(mt));
  });
  REQUIRE(worst == 0.0);

  Matrix bad(tokens.size(), c.out_dim + 1);
  REQUIRE_THROWS_AS(backward(t, bad, m.params, c), std::invalid_argument);
}

TEST_CASE("gradients flow into the zero blocks of a fresh identity layer", "[autograd]") {
  ModelConfig c = ts::tiny_config(Activation::Gelu);
  ModelParams p = zero_params(c);
  Prng rng(5);
  p.embedding = random_normal(c.vocab, c.hidden, rng, 0.5);
  p.pos = random_normal(c.max_seq, c.hidden, rng, 0.5);
  p.w_out = random_normal(c.hidden, c.out_dim, rng, 0.5);
  p.layers[0].wl1 = random_normal(c.hidden, c.mlp_inner, rng, 0.5);
  p.layers[0].heads[0].wq = random_normal(c.hidden, c.key_dim, rng, 0.5);
  p.layers[0].heads[0].wk = random_normal(c.hidden, c.key_dim, rng, 0.5);
  p.layers[0].heads[0].wv = random_normal(c.hidden, c.value_dim, rng, 0.5);

  TokenSeq tokens = {1, 2, 3};
  Tape t = forward_with_tape(p, tokens, c);
  LossGrad lg = cross_entropy_loss(t.logits, {4, 5, 6});
  ParamGrads g = backward(t, lg.dlogits, p, c);
  // wl2 and wo are zero in the forward pass, yet their gradients are live:
  // training can immediately recruit the new capacity.
  REQUIRE(max_abs(g.layers[0].wl2) > 0.0);
  REQUIRE(max_abs(g.layers[0].wo) > 0.0);
  REQUIRE(max_abs(g.layers[0].bl2) > 0.0);
}

TEST_CASE("analytic gradients agree with central differences", "[autograd]") {
  const double tol = 1e-6, eps = 1e-5;
  for (Activation act : {Activation::Relu, Activation::Gelu}) {
    ModelConfig c = ts::tiny_config(act);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      ModelParams p = init_params(c, seed, 0.2);
      Prng rng(derive_seed(seed, 0x69));
      TokenSeq tokens, targets;
      for (std::size_t i = 0; i < c.max_seq; ++i) {
        tokens.push_back(static_cast<TokenId>(rng.next_below(c.vocab)));
        targets.push_back(static_cast<TokenId>(rng.next_below(c.out_dim)));
      }
      Tape t = forward_with_tape(p, tokens, c);
      LossGrad lg = cross_entropy_loss(t.logits, targets);
      ParamGrads analytic = backward(t, lg.dlogits, p, c);
      ParamGrads fd = finite_diff_grad(p, tokens, targets, c, eps);

      double worst = 0.0;
      std::string worst_name;
      std::vector<std::pair<std::string, const Matrix*>> av, fv;
      for_each_tensor(analytic, [&](const std::string& n, const Matrix& m) {
        av.emplace_back(n, &m);
      });
      for_each_tensor(fd, [&](const std::string& n, const Matrix& m) {
        fv.emplace_back(n, &m);
      });
      REQUIRE(av.size() == fv.size());
      for (std::size_t ti = 0; ti < av.size(); ++ti) {
        const Matrix& a = *av[ti].second;
        const Matrix& f = *fv[ti].second;
        for (std::size_t i = 0; i < a.size(); ++i) {
          const double rel = std::abs(a.data()[i] - f.data()[i]) /
                             std::max({1.0, std::abs(a.data()[i]), std::abs(f.data()[i])});
          if (rel > worst) {
            worst = rel;
            worst_name = av[ti].first;
          }
        }
      }
      INFO("activation " << (act == Activation::Relu ? "relu" : "gelu") << " seed " << seed
                         << " worst tensor " << worst_name);
      REQUIRE(worst <= tol);
    }
  }
}

TEST_CASE("rmsnorm backward matches a scalar finite-difference oracle", "[autograd]") {
  Matrix x = Matrix::from_rows({{3.0, -4.0}});
  Matrix g = Matrix::from_rows({{0.9, 1.2}});
  Matrix dy = Matrix::from_rows({{0.7, -0.3}});
  Matrix dx(1, 2), dg(1, 2);
  autograd::detail::rmsnorm_backward(x, g, dy, dx, dg);

  for (std::size_t j = 0; j < 2; ++j) {
    auto loss_at_x = [&](double t) {
      Matrix xt = x;
      xt(0, j) = t;
      Matrix y = rmsnorm_rows(xt, g);
      return dy(0, 0) * y(0, 0) + dy(0, 1) * y(0, 1);
    };
    REQUIRE(std::abs(dx(0, j) - central_diff(loss_at_x, x(0, j), 1e-6)) <= 1e-8);
    auto loss_at_g = [&](double t) {
      Matrix gt = g;
      gt(0, j) = t;
      Matrix y = rmsnorm_rows(x, gt);
      return dy(0, 0) * y(0, 0) + dy(0, 1) * y(0, 1);
    };
    REQUIRE(std::abs(dg(0, j) - central_diff(loss_at_g, g(0, j), 1e-6)) <= 1e-8);
  }

  // An all-zero row contributes nothing, matching the forward convention.
  Matrix xz(1, 2), dxz(1, 2), dgz(1, 2);
  autograd::detail::rmsnorm_backward(xz, g, dy, dxz, dgz);
  REQUIRE(max_abs(dxz) == 0.0);
  REQUIRE(max_abs(dgz) == 0.0);
}

TEST_CASE("central_diff differentiates a parabola", "[autograd]") {
  auto f = [](double t) { return t * t; };
  REQUIRE(std::abs(central_diff(f, 3.0, 1e-6) - 6.0) <= 1e-9);
  REQUIRE(std::abs(central_diff(f, -0.5, 1e-6) + 1.0) <= 1e-9);
}
