#include <gtest/gtest.h>

#include <cmath>

#include "condseg/conditioning.hpp"
#include "condseg/error.hpp"
#include "condseg/ops.hpp"
#include "oracles.hpp"

using namespace condseg;

TEST(Conditioning, ParseAndNames) {
  for (auto k : {ConditioningKind::None, ConditioningKind::SE, ConditioningKind::ME, ConditioningKind::SME,
                 ConditioningKind::FiLM}) {
    EXPECT_EQ(parse_conditioning_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_conditioning_kind("CBN"), ValidationError);
}

TEST(Conditioning, HiddenAndInputWidths) {
  EXPECT_EQ(hidden_width(16), 4u);
  EXPECT_EQ(hidden_width(3), 1u);
  EXPECT_EQ(fc1_input_width(ConditioningKind::SE, 16, 0), 16u);
  EXPECT_EQ(fc1_input_width(ConditioningKind::ME, 16, 7), 7u);
  EXPECT_EQ(fc1_input_width(ConditioningKind::SME, 16, 7), 23u);
  EXPECT_EQ(fc1_input_width(ConditioningKind::FiLM, 16, 7), 7u);

  Rng rng(1);
  const auto film = make_block<float>(ConditioningKind::FiLM, 16, 7, rng);
  EXPECT_EQ(film.fc1_weight.shape(), (Shape{4, 7}));
  EXPECT_EQ(film.fc2_weight.shape(), (Shape{32, 4}));
  const auto sme = make_block<float>(ConditioningKind::SME, 16, 7, rng);
  EXPECT_EQ(sme.fc1_weight.shape(), (Shape{4, 23}));
  EXPECT_EQ(sme.fc2_weight.shape(), (Shape{16, 4}));
}

TEST(Conditioning, MetadataKindsNeedMetaWidth) {
  Rng rng(1);
  EXPECT_THROW(make_block<float>(ConditioningKind::ME, 8, 0, rng), ValidationError);
  EXPECT_THROW(make_block<float>(ConditioningKind::SME, 8, 0, rng), ValidationError);
  EXPECT_NO_THROW(make_block<float>(ConditioningKind::SE, 8, 0, rng));
}

TEST(Conditioning, SeMatchesHandComputation) {
  Rng rng(4);
  const auto block = make_block<double>(ConditioningKind::SE, 4, 0, rng);
  const auto x = oracle::random_tensor<double>({2, 4, 3, 3}, rng);
  const auto out = se_forward(block, x);
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<double> pooled(4);
    for (std::size_t c = 0; c < 4; ++c) {
      for (std::size_t i = 0; i < 9; ++i) pooled[c] += x[(b * 4 + c) * 9 + i] / 9.0;
    }
    const auto h = oracle::linear(pooled, 1, 4, oracle::as_double(block.fc1_weight), 1, oracle::as_double(block.fc1_bias));
    const std::vector<double> hr{std::max(0.0, h[0])};
    const auto z = oracle::linear(hr, 1, 1, oracle::as_double(block.fc2_weight), 4, oracle::as_double(block.fc2_bias));
    for (std::size_t c = 0; c < 4; ++c) {
      const double gate = 1.0 / (1.0 + std::exp(-z[c]));
      for (std::size_t i = 0; i < 9; ++i) {
        EXPECT_NEAR(out[(b * 4 + c) * 9 + i], gate * x[(b * 4 + c) * 9 + i], 1e-12);
      }
    }
  }
}

TEST(Conditioning, GatesLieStrictlyInsideUnitInterval) {
  Rng rng(2);
  for (auto kind : {ConditioningKind::SE, ConditioningKind::ME, ConditioningKind::SME}) {
    const auto block = make_block<double>(kind, 8, kind == ConditioningKind::SE ? 0 : 3, rng);
    const auto x = oracle::random_tensor<double>({3, 8, 2, 2}, rng, -50.0, 50.0);
    const auto meta = oracle::random_tensor<double>({3, 3}, rng, 0.0, 1.0);
    const auto gate = block_gate(block, x, kind == ConditioningKind::SE ? Tensor64() : meta);
    for (double g : gate.data()) {
      EXPECT_GT(g, 0.0);
      EXPECT_LT(g, 1.0);
    }
    const auto out = apply_block(block, x, kind == ConditioningKind::SE ? Tensor64() : meta);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_LE(std::abs(out[i]), std::abs(x[i]));
  }
}

TEST(Conditioning, MeGateIgnoresFeatures) {
  Rng rng(3);
  const auto block = make_block<double>(ConditioningKind::ME, 8, 4, rng);
  const auto meta = oracle::random_tensor<double>({2, 4}, rng, 0.0, 1.0);
  const auto g1 = block_gate(block, oracle::random_tensor<double>({2, 8, 4, 4}, rng), meta);
  const auto g2 = block_gate(block, oracle::random_tensor<double>({2, 8, 4, 4}, rng, -9.0, 9.0), meta);
  EXPECT_EQ(oracle::as_double(g1), oracle::as_double(g2));
}

TEST(Conditioning, SmeWithDummyMetadataOnlySeesPooledFeatures) {
  Rng rng(5);
  const auto block = make_block<double>(ConditioningKind::SME, 4, 3, rng);
  const auto x = oracle::random_tensor<double>({1, 4, 2, 2}, rng);
  const Tensor64 zeros({1, 3});
  // With zero metadata the meta columns of fc1 contribute nothing.
  auto trimmed = block;
  trimmed.kind = ConditioningKind::SE;
  trimmed.meta_dim = 0;
  trimmed.fc1_weight = Tensor64({block.hidden, 4});
  for (std::size_t r = 0; r < block.hidden; ++r) {
    for (std::size_t c = 0; c < 4; ++c) trimmed.fc1_weight[r * 4 + c] = block.fc1_weight[r * 7 + c];
  }
  EXPECT_EQ(oracle::as_double(sme_forward(block, x, zeros)), oracle::as_double(se_forward(trimmed, x)));
}

TEST(Conditioning, FilmStartsAsIdentity) {
  Rng rng(6);
  const auto block = make_block<double>(ConditioningKind::FiLM, 6, 5, rng);
  const auto x = oracle::random_tensor<double>({2, 6, 3, 3}, rng);
  const auto meta = oracle::random_tensor<double>({2, 5}, rng, 0.0, 1.0);
  EXPECT_EQ(oracle::as_double(film_forward(block, x, meta)), oracle::as_double(x));
}

TEST(Conditioning, FilmAppliesAffineWithoutSquashing) {
  Rng rng(6);
  auto block = make_block<double>(ConditioningKind::FiLM, 2, 1, rng);
  for (auto& v : block.fc1_weight.data()) v = 1.0;
  block.fc2_weight = Tensor64({4, 1}, std::vector<double>{3.0, 0.0, 0.0, -2.0});
  block.fc2_bias = Tensor64({4});
  const Tensor64 x({1, 2, 1, 1}, std::vector<double>{1.0, 1.0});
  const Tensor64 meta({1, 1}, std::vector<double>{1.0});
  // h = 1, gamma = [3, 0], beta = [0, -2]
  EXPECT_EQ(oracle::as_double(film_forward(block, x, meta)), (std::vector<double>{3.0, -2.0}));
}

TEST(Conditioning, NoneIsPassThroughAndKindsAreChecked) {
  Rng rng(7);
  const auto none = make_block<float>(ConditioningKind::None, 4, 0, rng);
  const Tensor x({1, 4, 2, 2}, 2.0f);
  EXPECT_EQ(apply_block(none, x, Tensor()).impl(), x.impl());
  const auto se = make_block<float>(ConditioningKind::SE, 4, 0, rng);
  EXPECT_THROW(me_forward(se, x, Tensor({1, 2})), ValidationError);
  const auto me = make_block<float>(ConditioningKind::ME, 4, 2, rng);
  EXPECT_THROW(me_forward(me, x, Tensor()), ValidationError);
  EXPECT_THROW(me_forward(me, x, Tensor({1, 3})), ShapeError);
  EXPECT_THROW(se_forward(se, Tensor({1, 5, 2, 2})), ShapeError);
}
