#include <gtest/gtest.h>

#include <set>

#include "grad_suite.hpp"

TEST(Gradients, EveryOpBlockAndTinyUNetPassCentralDifferences) {
  const auto cases = gradsuite::run(5);
  std::set<std::string> names;
  for (const auto& c : cases) {
    names.insert(c.name);
    EXPECT_LE(c.max_rel_err, 1e-5) << c.name << " seed " << c.seed;
  }
  for (const char* required : {"conv2d same", "linear", "channel_scale", "channel_affine", "bce_with_logits",
                               "block SE", "block ME", "block SME", "block FiLM", "unet SME"}) {
    EXPECT_TRUE(names.contains(required)) << required;
  }
}

TEST(Gradients, CheckerDetectsAWrongGradient) {
  using namespace condseg;
  Rng rng(1);
  auto x = gradsuite::leaf({4}, rng);
  // A detached factor halves the recorded gradient of sum(x*x).
  const double err = finite_diff_check(
      [=] {
        Tensor64 detached = x.clone();
        return sum(mul(x, detached));
      },
      {x});
  EXPECT_GT(err, 1e-3);
}
