// Copyright 2026 The tgrow Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"
#include "tgrow/transforms.hpp"
#include "tgrow/verify.hpp"

using namespace tgrow;
using namespace tgrow::verify;

TEST_CASE("sample_inputs is deterministic with cycling lengths", "[verify]") {
  ModelConfig c = ts::tiny_config();  // max_seq = 3
  auto a = sample_inputs(c, 7, 42);
  auto b = sample_inputs(c, 7, 42);
  REQUIRE(a.size() == 7);
  REQUIRE(a == b);
  // Lengths cycle 1..max_seq so every admissible prefix length is exercised.
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].size() == 1 + i % c.max_seq);
    for (TokenId t : a[i]) REQUIRE(t < c.vocab);
  }
  auto other = sample_inputs(c, 7, 43);
  REQUIRE(a != other);
  REQUIRE(sample_inputs(c, 1, 0).size() == 1);
}

TEST_CASE("preservation_report measures worst-case logit drift", "[verify]") {
  Model m = ts::random_model(ts::tiny_config(), 51);
  auto inputs = sample_inputs(m.config, 6, 3);

  SECTION("a model preserves itself exactly") {
    auto r = preservation_report(m, m, inputs, 1e-15);
    REQUIRE(r.num_inputs == 6);
    REQUIRE(r.max_abs_diff == 0.0);
    REQUIRE(r.max_rel_diff == 0.0);
    REQUIRE(r.pass);
    REQUIRE(r.per_input_diffs.size() == 6);
  }

  SECTION("per-input maxima aggregate into the headline numbers") {
    Model grown = transforms::hidden_expand(m.config, m.params, 9,
                                            transforms::InitPolicy::random_normal(4, 0.5));
    auto r = preservation_report(m, grown, inputs, 1e-10);
    REQUIRE(r.pass);
    double worst = 0.0;
    for (double d : r.per_input_diffs) worst = std::max(worst, d);
    REQUIRE(r.max_abs_diff == worst);
    // Relative diffs divide by max(1, |reference|), so they never exceed abs.
    REQUIRE(r.max_rel_diff <= r.max_abs_diff);
  }

  SECTION("a genuinely different model fails") {
    Model other = ts::random_model(ts::tiny_config(), 52);
    auto r = preservation_report(m, other, inputs, 1e-10);
    REQUIRE_FALSE(r.pass);
    REQUIRE(r.max_abs_diff > 1e-3);
  }

  SECTION("incomparable output spaces are rejected") {
    ModelConfig c2 = ts::tiny_config();
    c2.out_dim = 5;
    Model other{c2, init_params(c2, 1, 0.2)};
    REQUIRE_THROWS_AS(preservation_report(m, other, inputs, 1e-10), std::invalid_argument);
  }
}

TEST_CASE("summary_line is stable and scrapeable", "[verify]") {
  PreservationReport r;
  r.num_inputs = 3;
  r.max_abs_diff = 0.5;
  r.max_rel_diff = 0.25;
  r.pass = true;
  std::string s = summary_line(r);
  REQUIRE(s.find("inputs=3") != std::string::npos);
  REQUIRE(s.find("max_abs=0.5") != std::string::npos);
  REQUIRE(s.find("max_rel=0.25") != std::string::npos);
  REQUIRE(s.find("pass=true") != std::string::npos);
  r.pass = false;
  REQUIRE(summary_line(r).find("pass=false") != std::string::npos);
}

TEST_CASE("norm padding identity holds under gain rescaling", "[verify]") {
  SECTION("zero activations stay zero") {
    Matrix x(2, 3);
    LayerParams layer;
    layer.g_mha = Matrix::ones(1, 3);
    REQUIRE(check_norm_padding_identity(layer, x, 8) == 0.0);
  }
  SECTION("generic activations match to rounding") {
    Matrix x = Matrix::from_rows({{3.0, 4.0}, {-1.0, 0.5}});
    LayerParams layer;
    Prng rng(9);
    layer.g_mha = random_normal(1, 2, rng, 1.0);
    REQUIRE(check_norm_padding_identity(layer, x, 4) <= 1e-15);
    REQUIRE(check_norm_padding_identity(layer, x, 8) <= 1e-15);
  }
  SECTION("without the sqrt(h/h') correction the identity breaks") {
    // Hand computation: rmsnorm([3 4], g=[1 1]) = [3,4]/sqrt(12.5).
    // Padding to width 4 without scaling gives ms 12.5/2 not 12.5.
    Matrix x = Matrix::from_rows({{3.0, 4.0}});
    Matrix padded = concat_cols(x, Matrix(1, 2));
    Matrix g = Matrix::ones(1, 4);  // deliberately unscaled
    Matrix wrong = rmsnorm_rows(padded, g);
    Matrix right = rmsnorm_rows(x, Matrix::ones(1, 2));
    REQUIRE(std::abs(wrong(0, 0) - right(0, 0)) > 1e-3);
  }
}

TEST_CASE("attention logit identity holds after key expansion", "[verify]") {
  ModelConfig c = ts::tiny_config();
  Model m = ts::random_model(c, 61);
  Model grown = transforms::attention_expand(m.config, m.params, 5,
                                             transforms::InitPolicy::random_normal(7, 0.5));
  Prng rng(11);
  Matrix x = random_normal(c.max_seq, c.hidden, rng, 1.0);
  const auto& hb = m.params.layers[0].heads[0];
  const auto& ha = grown.params.layers[0].heads[0];
  REQUIRE(check_attention_logit_identity(hb, ha, x, c.key_dim, 5) <= 1e-12);
  // Degenerate inputs are exactly preserved.
  Matrix zero(c.max_seq, c.hidden);
  REQUIRE(check_attention_logit_identity(hb, ha, zero, c.key_dim, 5) == 0.0);
  // A head whose keys were not rescaled fails the identity.
  HeadParams bad = ha;
  bad.wk = concat_cols(hb.wk, Matrix(c.hidden, 5 - c.key_dim));
  REQUIRE(check_attention_logit_identity(hb, bad, x, c.key_dim, 5) > 1e-3);
}

TEST_CASE("a zero-output block is an exact identity layer", "[verify]") {
  ModelConfig c = ts::tiny_config();
  ModelParams p = zero_params(c);  // wo, wl2, bl2 all zero, gains one
  Prng rng(13);
  p.layers[0].heads[0].wq = random_normal(c.hidden, c.key_dim, rng, 0.5);
  p.layers[0].heads[0].wk = random_normal(c.hidden, c.key_dim, rng, 0.5);
  p.layers[0].heads[0].wv = random_normal(c.hidden, c.value_dim, rng, 0.5);
  p.layers[0].wl1 = random_normal(c.hidden, c.mlp_inner, rng, 0.5);
  Matrix x = random_normal(c.max_seq, c.hidden, rng, 1.0);
  REQUIRE(check_layer_identity(p.layers[0], x, c) == 0.0);
  // Any nonzero wo breaks exactness.
  p.layers[0].wo = random_normal(c.num_heads * c.value_dim, c.hidden, rng, 0.5);
  REQUIRE(check_layer_identity(p.layers[0], x, c) > 0.0);
}
