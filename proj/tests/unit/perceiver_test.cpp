// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#include "pac/autodiff.hpp"
#include "pac/model.hpp"
#include "pac/perceiver.hpp"
#include "pac/value_bins.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

namespace pac {
namespace {

using ad::Matrix;

ArchConfig toy_arch() {
  ArchConfig a;
  a.n_latents = 4;
  a.latent_dim = 16;
  a.n_blocks = 2;
  a.n_heads = 4;
  a.n_action_bins = 5;
  a.n_value_bins = 7;
  return a;
}

ModalitySpec toy_spec() {
  ModalitySpec s;
  s.n_proprio = 3;
  s.n_text_tokens = 3;
  s.n_action_dims = 2;
  s.gains = {0.1, 1.0, 10.0};
  s.embed_dim = 8;
  return s;
}

Matrix random(Rng& rng, int r, int c) {
  Matrix m(r, c);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

TEST(Attention, SingleKey) {
  ad::Tape t;
  Rng rng(1);
  const ad::Var q = t.constant(random(rng, 3, 4));
  const ad::Var k = t.constant(random(rng, 1, 4));
  const ad::Var v = t.constant(random(rng, 1, 2));
  const Matrix out = ad::attention(q, k, v, {}, 1).value();
  for (int r = 0; r < 3; ++r) EXPECT_TRUE(out.row(r).isApprox(v.value().row(0), 1e-14));
}

TEST(Attention, IdenticalKeysGiveMean) {
  ad::Tape t;
  Rng rng(2);
  const Matrix krow = random(rng, 1, 4);
  const ad::Var q = t.constant(random(rng, 2, 4));
  const ad::Var k = t.constant(krow.replicate(3, 1));
  const Matrix vals = random(rng, 3, 2);
  const Matrix out = ad::attention(q, k, t.constant(vals), {}, 2).value();
  const Matrix mean = vals.colwise().mean();
  for (int r = 0; r < 2; ++r) EXPECT_TRUE(out.row(r).isApprox(mean.row(0), 1e-12));
}

TEST(Attention, TwoKeyExample) {
  ad::Tape t;
  const ad::Var q = t.constant(Matrix::Zero(1, 1));
  Matrix k(2, 1);
  k << 1, -1;
  Matrix v(2, 1);
  v << 1, 0;
  EXPECT_DOUBLE_EQ(ad::attention(q, t.constant(k), t.constant(v), {}, 1).value()(0, 0), 0.5);
}

TEST(Attention, MaskedKeysGetZeroWeightAndRowsSumToOne) {
  Rng rng(3);
  const Matrix q = random(rng, 3, 4);
  const Matrix k = random(rng, 5, 4);
  const std::vector<bool> mask{true, false, true, true, false};
  const Matrix w = ad::attention_weights(q, k, mask);
  for (int r = 0; r < 3; ++r) {
    EXPECT_NEAR(w.row(r).sum(), 1.0, 1e-12);
    EXPECT_EQ(w(r, 1), 0.0);
    EXPECT_EQ(w(r, 4), 0.0);
  }
  ad::Tape t;
  EXPECT_THROW(ad::attention(t.constant(q), t.constant(k), t.constant(k), std::vector<bool>(5, false), 1),
               std::invalid_argument);
}

TEST(CrossAttend, ZeroBranchesGiveIdentity) {
  Rng rng(4);
  ad::ParamSet p;
  add_block_params("blk", 8, 6, 2, false, p, rng);
  p["blk.o.w"].setZero();
  p["blk.ff2.w"].setZero();
  ad::Tape t;
  const Matrix xq = random(rng, 3, 8);
  const ad::Var out = cross_attend(p, "blk", t.constant(xq), t.constant(random(rng, 5, 6)), {}, 2);
  EXPECT_EQ(out.value(), xq);
}

TEST(CrossAttend, MaskedRowsIgnored) {
  Rng rng(5);
  ad::ParamSet p;
  add_block_params("blk", 8, 6, 1, false, p, rng);
  const Matrix xq = random(rng, 2, 8);
  Matrix kv = random(rng, 5, 6);
  const std::vector<bool> mask{true, true, false, true, false};
  ad::Tape t1;
  const Matrix a = cross_attend(p, "blk", t1.constant(xq), t1.constant(kv), mask, 2).value();
  kv.row(2) = random(rng, 1, 6) * 100.0;
  kv.row(4).swap(kv.row(2));
  ad::Tape t2;
  const Matrix b = cross_attend(p, "blk", t2.constant(xq), t2.constant(kv), mask, 2).value();
  EXPECT_EQ(a, b);
}

TEST(CrossAttend, BottleneckCostRatio) {
  EXPECT_NEAR(std::pow(2634.0 / 32.0, 2), 6775.0, 1.0);
}

TEST(EncodeLatents, ShapesAndNoBlocks) {
  ArchConfig a = toy_arch();
  const ModalitySpec s = toy_spec();
  Rng rng(6);
  ad::ParamSet p = init_perceiver_params(a, s, rng);
  Observation o;
  o.proprio = {0.1f, 0.2f, -0.4f};
  o.text_tokens = {3};
  ad::Tape t;
  const TokenSequence tok = assemble_input(s, p, o, t);
  const ad::Var z = encode_latents(a, p, tok, t);
  EXPECT_EQ(z.rows(), 4);
  EXPECT_EQ(z.cols(), 16);

  a.n_blocks = 0;
  const ad::Var z0 = encode_latents(a, p, tok, t);
  const ad::Var direct = cross_attend(p, "pc.in", t.param(p, "pc.latents"), tok.embeddings, tok.mask, a.n_heads);
  EXPECT_EQ(z0.value(), direct.value());
}

TEST(EncodeLatents, PaddedContentDoesNotMatter) {
  const ArchConfig a = toy_arch();
  const ModalitySpec s = toy_spec();
  Rng rng(7);
  ad::ParamSet p = init_perceiver_params(a, s, rng);
  Observation o;
  o.proprio = {0.3f};
  ad::Tape t;
  TokenSequence tok = assemble_input(s, p, o, t);
  const Matrix z1 = encode_latents(a, p, tok, t).value();
  Matrix e = tok.embeddings.value();
  for (int r = 0; r < tok.size(); ++r) {
    if (!tok.mask[std::size_t(r)]) e.row(r).setConstant(1e3 * (r + 1));
  }
  tok.embeddings = t.constant(e);
  EXPECT_EQ(encode_latents(a, p, tok, t).value(), z1);
}

class DecoderTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(8);
    params = init_perceiver_params(arch, spec, rng);
    obs.proprio = {0.5f, -0.25f, 1.5f};
    obs.text_tokens = {4, 5};
  }
  ad::Var latents(ad::Tape& t) const { return encode_latents(arch, params, assemble_input(spec, params, obs, t), t); }

  ArchConfig arch = toy_arch();
  ModalitySpec spec = toy_spec();
  ad::ParamSet params;
  Observation obs;
};

TEST_F(DecoderTest, PolicyShapeAndDeterminism) {
  ad::Tape t;
  const ad::Var z = latents(t);
  const ad::Var a = decode_policy(arch, params, z, t);
  const ad::Var b = decode_policy(arch, params, z, t);
  EXPECT_EQ(a.rows(), 2);
  EXPECT_EQ(a.cols(), 5);
  EXPECT_EQ(a.value(), b.value());
  ArchConfig wide = arch;
  wide.n_action_bins = 101;
  Rng rng(9);
  const ad::ParamSet pw = init_perceiver_params(wide, spec, rng);
  ad::Tape t2;
  const ad::Var zw = encode_latents(wide, pw, assemble_input(spec, pw, obs, t2), t2);
  EXPECT_EQ(decode_policy(wide, pw, zw, t2).cols(), 101);
}

TEST_F(DecoderTest, QCacheMatchesFreshPasses) {
  Rng rng(10);
  std::vector<std::vector<double>> actions;
  for (int i = 0; i < 10; ++i) actions.push_back({rng.uniform() * 2 - 1, rng.uniform() * 2 - 1});
  ad::Tape t;
  const auto cached = decode_q_batch(arch, spec, params, latents(t), actions, t);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    ad::Tape fresh;
    EXPECT_EQ(decode_q(arch, spec, params, latents(fresh), actions[i], fresh).value(), cached[i].value());
  }
  EXPECT_NE(cached[0].value(), cached[1].value());
}

TEST_F(DecoderTest, QRejectsNonFiniteAction) {
  ad::Tape t;
  const std::vector<double> bad{0.0, std::numeric_limits<double>::infinity()};
  EXPECT_THROW(decode_q(arch, spec, params, latents(t), bad, t), std::domain_error);
}

TEST_F(DecoderTest, GradientsMatchFiniteDifferences) {
  const std::vector<double> action{0.3, -0.6};
  const Matrix wp = Matrix::Random(2, 5);
  const Matrix wq = Matrix::Random(1, 7);
  auto f = [&](const ad::ParamSet& p, ad::ParamSet* g) {
    ad::Tape t;
    const ad::Var z = encode_latents(arch, p, assemble_input(spec, p, obs, t), t);
    const ad::Var out = ad::add(ad::weighted_sum(ad::log_softmax_rows(decode_policy(arch, p, z, t)), wp),
                                ad::weighted_sum(decode_q(arch, spec, p, z, action, t), wq));
    if (g) t.backward(out, *g);
    return out.scalar();
  };
  ad::ParamSet g = params.zeros_like();
  f(params, &g);
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (ad::Index k = 0; k < params.value(i).size(); ++k) {
      ad::ParamSet plus = params;
      ad::ParamSet minus = params;
      plus.value(i).data()[k] += 1e-5;
      minus.value(i).data()[k] -= 1e-5;
      const double fd = (f(plus, nullptr) - f(minus, nullptr)) / 2e-5;
      const double an = g.value(i).data()[k];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(QValue, Examples) {
  const ValueBins three{0.0, 1.0, 3};
  EXPECT_DOUBLE_EQ(q_value(Matrix::Zero(1, 3), three), 0.5);
  Matrix peaked = Matrix::Constant(1, 3, -1e9);
  peaked(0, 2) = 0.0;
  EXPECT_DOUBLE_EQ(q_value(peaked, three), 1.0);
  Matrix two(1, 2);
  two << std::log(1.0), std::log(3.0);
  EXPECT_NEAR(q_value(two, ValueBins{0.0, 1.0, 2}), 0.75, 1e-15);
  EXPECT_THROW(q_value(Matrix::Zero(1, 4), three), std::invalid_argument);
}

TEST(ActionCodec, MidpointsAndClamping) {
  const ActionCodec c(4, {-1.0}, {1.0});
  EXPECT_DOUBLE_EQ(c.center(0, 0), -0.75);
  EXPECT_DOUBLE_EQ(c.center(0, 3), 0.75);
  EXPECT_EQ(c.bin_of(0, -5.0), 0);
  EXPECT_EQ(c.bin_of(0, 5.0), 3);
  EXPECT_EQ(c.bin_of(0, 0.1), 2);
  const std::vector<float> a{0.8f};
  EXPECT_EQ(c.decode(c.encode(a))[0], 0.75);
  EXPECT_THROW(ActionCodec(0, {0.0}, {1.0}), std::invalid_argument);
  EXPECT_THROW(ActionCodec(3, {1.0}, {0.0}), std::invalid_argument);
}

TEST(GreedyBins, TiesPickLowest) {
  Matrix l(2, 3);
  l << 1, 2, 2, 5, 5, 5;
  EXPECT_EQ(greedy_bins(l), (std::vector<int>{1, 0}));
}

TEST(ArchConfig, Validation) {
  ArchConfig a = toy_arch();
  a.n_heads = 3;
  EXPECT_THROW(a.validate(), std::invalid_argument);
  a = toy_arch();
  a.n_latents = 0;
  EXPECT_THROW(a.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace pac
