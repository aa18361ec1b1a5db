#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "condseg/error.hpp"
#include "condseg/ops.hpp"
#include "condseg/training.hpp"
#include "condseg/unet.hpp"
#include "oracles.hpp"

using namespace condseg;

namespace {

UNetConfig small(ConditioningKind kind, std::size_t meta = 0) {
  UNetConfig c;
  c.depth = 2;
  c.base_channels = 4;
  c.conditioning = kind;
  c.meta_dim = meta;
  return c;
}

}  // namespace

TEST(UNet, ConfigValidation) {
  UNetConfig c;
  EXPECT_NO_THROW(c.validate());
  c.depth = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.base_channels = 2;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.conditioning = ConditioningKind::SME;
  EXPECT_THROW(c.validate(), ValidationError);
  c.meta_dim = 3;
  EXPECT_NO_THROW(c.validate());
  c.conditioning = ConditioningKind::SE;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(UNet, OutputShapeMatchesInput) {
  Rng rng(1);
  for (std::size_t out : {1u, 2u}) {
    auto cfg = small(ConditioningKind::SME, 3);
    cfg.out_channels = out;
    ConditionedUNet<float> net(cfg, rng);
    const auto y = net.forward(Tensor({2, 1, 16, 8}, 0.3f), Tensor({2, 3}));
    EXPECT_EQ(y.shape(), (Shape{2, out, 16, 8}));
  }
}

TEST(UNet, ParameterNamesAreStableAndOrdered) {
  Rng rng(1);
  ConditionedUNet<float> net(small(ConditioningKind::SE), rng);
  std::vector<std::string> names;
  for (const auto& p : net.parameters()) names.push_back(p.name);
  EXPECT_EQ(names.front(), "enc0.conv_a.weight");
  EXPECT_EQ(names.back(), "head.bias");
  EXPECT_NE(std::find(names.begin(), names.end(), "bottleneck.cond.fc2.weight"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "dec1.up.weight"), names.end());
  const auto dec1 = std::find(names.begin(), names.end(), "dec1.up.weight");
  const auto dec0 = std::find(names.begin(), names.end(), "dec0.up.weight");
  EXPECT_LT(dec1, dec0);
  std::size_t total = 0;
  for (const auto& p : net.parameters()) total += p.tensor.numel();
  EXPECT_EQ(total, net.parameter_count());
}

TEST(UNet, SameSeedSameParameters) {
  Rng a(42), b(42);
  ConditionedUNet<float> n1(small(ConditioningKind::FiLM, 2), a), n2(small(ConditioningKind::FiLM, 2), b);
  for (std::size_t i = 0; i < n1.parameters().size(); ++i) {
    EXPECT_EQ(oracle::as_double(n1.parameters()[i].tensor), oracle::as_double(n2.parameters()[i].tensor));
  }
}

TEST(UNet, MetadataContract) {
  Rng rng(1);
  ConditionedUNet<float> se(small(ConditioningKind::SE), rng);
  EXPECT_THROW(se.forward(Tensor({1, 1, 8, 8}), Tensor({1, 2})), ValidationError);
  ConditionedUNet<float> none(small(ConditioningKind::None), rng);
  EXPECT_THROW(none.forward(Tensor({1, 1, 8, 8}), Tensor({1, 2})), ValidationError);
  ConditionedUNet<float> sme(small(ConditioningKind::SME, 2), rng);
  EXPECT_THROW(sme.forward(Tensor({1, 1, 8, 8})), ValidationError);
  EXPECT_THROW(sme.forward(Tensor({1, 1, 8, 8}), Tensor({1, 3})), ShapeError);
  EXPECT_THROW(sme.forward(Tensor({1, 1, 6, 8}), Tensor({1, 2})), ShapeError);
  EXPECT_THROW(sme.forward(Tensor({1, 2, 8, 8}), Tensor({1, 2})), ShapeError);
}

TEST(UNet, MetadataChangesLogitsAfterOneStep) {
  for (auto kind : {ConditioningKind::ME, ConditioningKind::SME, ConditioningKind::FiLM}) {
    Rng rng(3);
    ConditionedUNet<float> net(small(kind, 2), rng);
    const auto image = oracle::random_tensor<float>({2, 1, 8, 8}, rng, 0.0, 1.0);
    const Tensor meta({2, 2}, std::vector<float>{1, 0, 0, 1});
    Tensor target({2, 1, 8, 8});
    for (std::size_t i = 0; i < 64; ++i) target[i] = 1.0f;
    auto adam = make_adam_state(net.parameters());
    bce_with_logits(net.forward(image, meta), target).backward();
    adam_step(adam, net.parameters(), 1e-2);

    NoGradGuard guard;
    const auto single = Tensor({1, 1, 8, 8}, std::vector<float>(image.data().begin(), image.data().begin() + 64));
    const auto a = net.forward(single, Tensor({1, 2}, std::vector<float>{1, 0}));
    const auto b = net.forward(single, Tensor({1, 2}, std::vector<float>{0, 1}));
    double diff = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(static_cast<double>(a[i] - b[i])));
    EXPECT_GT(diff, 0.0) << to_string(kind);
  }
}

TEST(UNet, ThresholdAndPredict) {
  const Tensor logits({4}, std::vector<float>{-1.0f, 0.0f, 0.1f, 5.0f});
  EXPECT_EQ(oracle::as_double(threshold_logits(logits)), (std::vector<double>{0, 1, 1, 1}));
  EXPECT_EQ(oracle::as_double(threshold_logits(logits, 0.9)), (std::vector<double>{0, 0, 0, 1}));
  Rng rng(2);
  ConditionedUNet<float> net(small(ConditioningKind::SE), rng);
  const auto mask = predict_mask(net, Tensor({1, 1, 8, 8}, 0.5f));
  for (float v : mask.data()) EXPECT_TRUE(v == 0.0f || v == 1.0f);
}
