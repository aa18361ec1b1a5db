#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "condseg/rng.hpp"
#include "condseg/tensor.hpp"

namespace condseg {

/// Channel-modulation variants.
///   SE   - gate from pooled feature statistics only.
///   ME   - gate from the metadata vector only (no squeeze).
///   SME  - gate from pooled statistics concatenated with metadata.
///   FiLM - per-channel affine (gamma * x + beta) predicted from metadata.
enum class ConditioningKind { None, SE, ME, SME, FiLM };

std::string_view to_string(ConditioningKind kind);
ConditioningKind parse_conditioning_kind(std::string_view name);

constexpr bool uses_metadata(ConditioningKind kind) {
  return kind == ConditioningKind::ME || kind == ConditioningKind::SME || kind == ConditioningKind::FiLM;
}

/// Bottleneck width: a quarter of the channel count, at least one unit.
constexpr std::size_t hidden_width(std::size_t channels) { return channels / 4 > 0 ? channels / 4 : 1; }

/// Input width of the first linear layer for a given kind.
std::size_t fc1_input_width(ConditioningKind kind, std::size_t channels, std::size_t meta_dim);

template <typename T>
struct ConditioningBlock {
  ConditioningKind kind = ConditioningKind::None;
  std::size_t channels = 0;
  std::size_t meta_dim = 0;
  std::size_t hidden = 0;
  // Linear layers, weight layout [out, in]. Undefined for kind None.
  BasicTensor<T> fc1_weight, fc1_bias;
  BasicTensor<T> fc2_weight, fc2_bias;

  std::vector<Parameter<T>> parameters(const std::string& prefix) const;
};

/// Kaiming-uniform fc1, Xavier-uniform fc2, zero biases. FiLM starts as identity:
/// fc2 weights are zero and the gamma half of fc2's bias is one.
template <typename T>
ConditioningBlock<T> make_block(ConditioningKind kind, std::size_t channels, std::size_t meta_dim, Rng& rng);

template <typename T>
BasicTensor<T> se_forward(const ConditioningBlock<T>& block, const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> me_forward(const ConditioningBlock<T>& block, const BasicTensor<T>& x, const BasicTensor<T>& meta);

template <typename T>
BasicTensor<T> sme_forward(const ConditioningBlock<T>& block, const BasicTensor<T>& x, const BasicTensor<T>& meta);

template <typename T>
BasicTensor<T> film_forward(const ConditioningBlock<T>& block, const BasicTensor<T>& x, const BasicTensor<T>& meta);

/// Gate in (0,1) for the gating kinds, [B,C]. Exposed for inspection and tests.
template <typename T>
BasicTensor<T> block_gate(const ConditioningBlock<T>& block, const BasicTensor<T>& x, const BasicTensor<T>& meta);

/// Dispatches on block.kind; kind None returns x unchanged. `meta` may be
/// undefined for SE and None.
template <typename T>
BasicTensor<T> apply_block(const ConditioningBlock<T>& block, const BasicTensor<T>& x, const BasicTensor<T>& meta);

}  // namespace condseg
