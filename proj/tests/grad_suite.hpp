#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "condseg/conditioning.hpp"
#include "condseg/gradcheck.hpp"
#include "condseg/ops.hpp"
#include "condseg/unet.hpp"
#include "oracles.hpp"

namespace gradsuite {

using condseg::Rng;
using condseg::Tensor64;

struct Case {
  std::string name;
  int seed;
  double max_rel_err;
};

inline Tensor64 leaf(condseg::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  auto t = oracle::random_tensor<double>(std::move(shape), rng, lo, hi);
  t.set_requires_grad(true);
  return t;
}

/// Scalar probe: sum(w * y) with fixed random weights, so every output element matters.
inline Tensor64 probe(const Tensor64& y, Rng& rng) {
  Tensor64 w(y.shape());
  for (auto& v : w.data()) v = rng.uniform(-1.0, 1.0);
  return condseg::sum(condseg::mul(y, w));
}

inline std::vector<condseg::Tensor64> block_params(const condseg::ConditioningBlock<double>& b) {
  std::vector<Tensor64> out;
  for (const auto& p : b.parameters("blk")) out.push_back(p.tensor);
  return out;
}

/// True when some coordinate of `wrt` sits within `eps` of a ReLU or max-pool
/// switch, seen as disagreeing forward and backward one-sided differences.
/// Central differences are meaningless there, so such instances are redrawn.
inline bool straddles_kink(const std::function<Tensor64()>& f, std::vector<Tensor64> wrt, double eps = 1e-4) {
  condseg::NoGradGuard guard;
  const double f0 = f().item();
  for (auto& t : wrt) {
    auto values = t.data();
    for (auto& v : values) {
      const double saved = v;
      v = saved + eps;
      const double up = f().item();
      v = saved - eps;
      const double down = f().item();
      v = saved;
      const double fwd = (up - f0) / eps, bwd = (f0 - down) / eps;
      if (std::abs(fwd - bwd) > 1e-3 * std::max(1.0, std::abs(fwd))) return true;
    }
  }
  return false;
}

/// Runs every differentiable op, the four conditioning blocks and a tiny U-Net
/// through central differences; `seeds` instances each.
inline std::vector<Case> run(int seeds = 5) {
  using namespace condseg;
  std::vector<Case> cases;
  auto check = [&](const std::string& name, int seed, const std::function<Tensor64()>& f, std::vector<Tensor64> wrt) {
    cases.push_back({name, seed, finite_diff_check(f, std::move(wrt))});
  };
  for (int seed = 0; seed < seeds; ++seed) {
    Rng rng(1000 + seed);
    {
      auto x = leaf({2, 2, 5, 5}, rng), w = leaf({3, 2, 3, 3}, rng), b = leaf({3}, rng);
      const std::uint64_t s = 77 + static_cast<std::uint64_t>(seed);
      check("conv2d same", seed, [=] { Rng r(s); return probe(conv2d(x, w, b, Padding::Same), r); }, {x, w, b});
      check("conv2d valid stride2", seed, [=] { Rng r(s); return probe(conv2d(x, w, b, Padding::Valid, 2), r); },
            {x, w, b});
    }
    const std::uint64_t s = 91 + static_cast<std::uint64_t>(seed);
    {
      // Keep inputs away from the kink at 0.
      auto x = leaf({3, 4}, rng);
      for (auto& v : x.data()) v = v < 0 ? v - 0.05 : v + 0.05;
      check("relu", seed, [=] { Rng r(s); return probe(relu(x), r); }, {x});
      auto z = leaf({3, 4}, rng, -4.0, 4.0);
      check("sigmoid", seed, [=] { Rng r(s); return probe(sigmoid(z), r); }, {z});
    }
    {
      auto x = leaf({3, 5}, rng), w = leaf({4, 5}, rng), b = leaf({4}, rng);
      check("linear", seed, [=] { Rng r(s); return probe(linear(x, w, b), r); }, {x, w, b});
    }
    {
      auto x = leaf({2, 3, 4, 4}, rng);
      check("global_avg_pool", seed, [=] { Rng r(s); return probe(global_avg_pool(x), r); }, {x});
      check("maxpool2", seed, [=] { Rng r(s); return probe(maxpool2(x), r); }, {x});
      check("upsample_nearest2", seed, [=] { Rng r(s); return probe(upsample_nearest2(x), r); }, {x});
      auto y = leaf({2, 2, 4, 4}, rng);
      check("concat_channels", seed, [=] { Rng r(s); return probe(concat_channels(x, y), r); }, {x, y});
      auto g = leaf({2, 3}, rng, 0.1, 0.9), beta = leaf({2, 3}, rng);
      check("channel_scale", seed, [=] { Rng r(s); return probe(channel_scale(x, g), r); }, {x, g});
      check("channel_affine", seed, [=] { Rng r(s); return probe(channel_affine(x, g, beta), r); }, {x, g, beta});
    }
    {
      auto a = leaf({2, 3}, rng), b = leaf({2, 4}, rng);
      check("concat_vec", seed, [=] { Rng r(s); return probe(concat_vec(a, b), r); }, {a, b});
      check("slice_vec", seed, [=] { Rng r(s); return probe(slice_vec(b, 1, 2), r); }, {b});
      auto c = leaf({2, 3}, rng);
      check("add", seed, [=] { Rng r(s); return probe(add(a, c), r); }, {a, c});
      check("mul", seed, [=] { Rng r(s); return probe(mul(a, c), r); }, {a, c});
      check("scale", seed, [=] { Rng r(s); return probe(scale(a, 1.7), r); }, {a});
      check("sum", seed, [=] { return sum(a); }, {a});
      check("mean", seed, [=] { return mean(a); }, {a});
    }
    {
      auto z = leaf({2, 1, 3, 3}, rng, -3.0, 3.0);
      Tensor64 t({2, 1, 3, 3});
      for (auto& v : t.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
      check("bce_with_logits", seed, [=] { return bce_with_logits(z, t); }, {z});
      check("bce_with_logits weighted", seed, [=] { return bce_with_logits(z, t, ClassWeights{0.5, 2.0}); }, {z});
    }
    {
      auto x = leaf({2, 1, 4, 4}, rng), w = leaf({2, 1, 3, 3}, rng), b = leaf({2}, rng);
      auto lw = leaf({3, 2}, rng), lb = leaf({3}, rng);
      check("conv-relu-pool-linear", seed,
            [=] {
              Rng r(s);
              return probe(linear(global_avg_pool(maxpool2(relu(conv2d(x, w, b)))), lw, lb), r);
            },
            {x, w, b, lw, lb});
    }
    for (auto kind : {ConditioningKind::SE, ConditioningKind::ME, ConditioningKind::SME, ConditioningKind::FiLM}) {
      const std::size_t c = 4, m = 3;
      Rng init(500 + static_cast<std::uint64_t>(seed));
      auto block = make_block<double>(kind, c, uses_metadata(kind) ? m : 0, init);
      if (kind == ConditioningKind::FiLM) {
        // Move off the identity start so every parameter has a non-trivial gradient.
        for (auto& v : block.fc2_weight.data()) v = init.uniform(-0.5, 0.5);
      }
      auto x = leaf({2, c, 3, 3}, rng);
      auto meta = leaf({2, m}, rng, 0.0, 1.0);
      auto wrt = block_params(block);
      wrt.push_back(x);
      if (uses_metadata(kind)) wrt.push_back(meta);
      const Tensor64 meta_in = uses_metadata(kind) ? meta : Tensor64();
      check(std::string("block ") + std::string(to_string(kind)), seed,
            [=] { Rng r(s); return probe(apply_block(block, x, meta_in), r); }, wrt);
    }
  }
  for (auto kind : {ConditioningKind::None, ConditioningKind::SE, ConditioningKind::ME, ConditioningKind::SME,
                    ConditioningKind::FiLM}) {
    for (std::uint64_t draw = 0; draw < 50; ++draw) {
      Rng init(9 + draw);
      UNetConfig cfg;
      cfg.depth = 1;
      cfg.base_channels = 4;
      cfg.conditioning = kind;
      cfg.meta_dim = uses_metadata(kind) ? 2 : 0;
      ConditionedUNet<double> net(cfg, init);
      auto image = oracle::random_tensor<double>({1, 1, 4, 4}, init, 0.0, 1.0);
      image.set_requires_grad(true);
      auto meta = oracle::random_tensor<double>({1, 2}, init, 0.0, 1.0);
      meta.set_requires_grad(true);
      std::vector<Tensor64> wrt{image};
      if (uses_metadata(kind)) wrt.push_back(meta);
      for (const auto& p : net.parameters()) wrt.push_back(p.tensor);
      const Tensor64 meta_in = uses_metadata(kind) ? meta : Tensor64();
      const auto f = [=] { Rng r(3); return probe(net.forward(image, meta_in), r); };
      if (straddles_kink(f, wrt)) continue;
      check(std::string("unet ") + std::string(to_string(kind)), static_cast<int>(draw), f, wrt);
      break;
    }
  }
  return cases;
}

}  // namespace gradsuite
