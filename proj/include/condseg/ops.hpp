#pragma once

#include <cstddef>
#include <optional>

#include "condseg/tensor.hpp"

namespace condseg {

enum class Padding { Same, Valid };

/// Per-class weights for binary cross-entropy: elements whose target is 0 are
/// scaled by `negative`, those whose target is 1 by `positive`.
struct ClassWeights {
  double negative = 1.0;
  double positive = 1.0;
};

// Every op below records itself on the tape when grad mode is on and any input
// requires grad. Shape errors throw ShapeError naming the offending dimension.

/// Cross-correlation. input [B,Cin,H,W], weight [Cout,Cin,k,k], bias [Cout].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, Padding padding = Padding::Same,
                      std::size_t stride = 1);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);

/// x [B,N], weight [M,N], bias [M] -> [B,M].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

/// [B,C,H,W] -> [B,C], spatial mean.
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

/// 2x2 stride-2 max pooling. Ties resolve to the first element in raster order.
template <typename T>
BasicTensor<T> maxpool2(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> upsample_nearest2(const BasicTensor<T>& x);

/// [B,Ca,H,W] ++ [B,Cb,H,W] along channels; `a` comes first.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// [B,Na] ++ [B,Nb]; `a` comes first.
template <typename T>
BasicTensor<T> concat_vec(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// [B,N] -> [B,count], columns [begin, begin+count).
template <typename T>
BasicTensor<T> slice_vec(const BasicTensor<T>& x, std::size_t begin, std::size_t count);

/// out[b,c,h,w] = x[b,c,h,w] * gate[b,c]
template <typename T>
BasicTensor<T> channel_scale(const BasicTensor<T>& x, const BasicTensor<T>& gate);

/// out[b,c,h,w] = gamma[b,c] * x[b,c,h,w] + beta[b,c]
template <typename T>
BasicTensor<T> channel_affine(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                              const BasicTensor<T>& beta);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);

/// Mean binary cross-entropy on logits, evaluated as
/// max(z,0) - z*t + log(1 + exp(-|z|)). Targets must be exactly 0 or 1.
template <typename T>
BasicTensor<T> bce_with_logits(const BasicTensor<T>& pred, const BasicTensor<T>& target,
                               const std::optional<ClassWeights>& class_weights = std::nullopt);

}  // namespace condseg
