#pragma once

#include <cstddef>
#include <vector>

#include "condseg/conditioning.hpp"
#include "condseg/rng.hpp"
#include "condseg/tensor.hpp"

namespace condseg {

struct UNetConfig {
  std::size_t depth = 3;          // number of 2x down-samplings
  std::size_t base_channels = 16; // channels at full resolution, doubled per level
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  ConditioningKind conditioning = ConditioningKind::SE;
  std::size_t meta_dim = 0;

  /// Throws ValidationError on the first invalid field.
  void validate() const;
  std::size_t channels_at(std::size_t level) const { return base_channels << level; }
};

template <typename T>
struct ConvLayer {
  BasicTensor<T> weight;  // [Cout,Cin,k,k]
  BasicTensor<T> bias;    // [Cout]
};

template <typename T>
struct EncoderStage {
  ConvLayer<T> conv_a, conv_b;
  ConditioningBlock<T> cond;
};

template <typename T>
struct DecoderStage {
  ConvLayer<T> up;  // 3x3 conv after nearest upsampling, halves the channels
  ConvLayer<T> conv_a, conv_b;
  ConditioningBlock<T> cond;
};

/// Encoder stages: double 3x3 conv + ReLU, conditioning block, 2x2 max-pool.
/// Bottleneck: double conv + conditioning. Decoder stages: upsample + 3x3 conv,
/// skip concat, double conv + conditioning. A 1x1 conv produces logits.
/// Every conditioning block receives the same metadata batch.
template <typename T>
class ConditionedUNet {
 public:
  ConditionedUNet(UNetConfig config, Rng& rng);

  const UNetConfig& config() const noexcept { return config_; }

  /// Named parameters in registration order; names are stable across builds.
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const;

  const std::vector<EncoderStage<T>>& encoders() const noexcept { return encoders_; }
  const EncoderStage<T>& bottleneck() const noexcept { return bottleneck_; }
  /// Decoder stages indexed by resolution level (level 0 = full resolution).
  const std::vector<DecoderStage<T>>& decoders() const noexcept { return decoders_; }

  /// Logits [B,Cout,H,W]. `meta` must be defined iff the conditioning kind uses
  /// metadata; it is rejected for None and SE.
  BasicTensor<T> forward(const BasicTensor<T>& image, const BasicTensor<T>& meta = {}) const;

 private:
  void register_block(const std::string& prefix, const ConditioningBlock<T>& block);
  void register_conv(const std::string& prefix, const ConvLayer<T>& conv);

  UNetConfig config_;
  std::vector<EncoderStage<T>> encoders_;
  EncoderStage<T> bottleneck_;
  std::vector<DecoderStage<T>> decoders_;
  ConvLayer<T> head_;
  std::vector<Parameter<T>> params_;
};

template <typename T>
ConditionedUNet<T> build_unet(const UNetConfig& config, Rng& rng) {
  return ConditionedUNet<T>(config, rng);
}

/// 1 where sigmoid(logit) >= threshold, else 0; same shape as the logits.
template <typename T>
BasicTensor<T> threshold_logits(const BasicTensor<T>& logits, double threshold = 0.5);

/// Inference without recording: forward() then threshold_logits().
template <typename T>
BasicTensor<T> predict_mask(const ConditionedUNet<T>& model, const BasicTensor<T>& image,
                            const BasicTensor<T>& meta = {}, double threshold = 0.5);

}  // namespace condseg
