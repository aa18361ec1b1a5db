#include "condseg/unet.hpp"

#include <cmath>
#include <string>

#include "condseg/error.hpp"
#include "condseg/ops.hpp"

namespace condseg {

void UNetConfig::validate() const {
  if (depth < 1) throw ValidationError("unet: depth must be >= 1");
  if (depth > 8) throw ValidationError("unet: depth must be <= 8");
  if (base_channels < 4) throw ValidationError("unet: base_channels must be >= 4");
  if (in_channels < 1) throw ValidationError("unet: in_channels must be >= 1");
  if (out_channels < 1) throw ValidationError("unet: out_channels must be >= 1");
  if (uses_metadata(conditioning) && meta_dim == 0) {
    throw ValidationError("unet: conditioning " + std::string(to_string(conditioning)) + " requires meta_dim > 0");
  }
  if (!uses_metadata(conditioning) && meta_dim != 0) {
    throw ValidationError("unet: conditioning " + std::string(to_string(conditioning)) + " takes no metadata (meta_dim must be 0)");
  }
}

namespace {

template <typename T>
ConvLayer<T> make_conv(std::size_t cin, std::size_t cout, std::size_t k, double bound, Rng& rng) {
  ConvLayer<T> conv{BasicTensor<T>({cout, cin, k, k}), BasicTensor<T>::zeros({cout})};
  for (auto& v : conv.weight.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  conv.weight.set_requires_grad(true);
  conv.bias.set_requires_grad(true);
  return conv;
}

// He-uniform for convs followed by ReLU.
template <typename T>
ConvLayer<T> make_relu_conv(std::size_t cin, std::size_t cout, Rng& rng, double gain = 1.0) {
  return make_conv<T>(cin, cout, 3, gain * std::sqrt(6.0 / static_cast<double>(cin * 9)), rng);
}

template <typename T>
BasicTensor<T> conv_relu(const ConvLayer<T>& conv, const BasicTensor<T>& x) {
  return relu(conv2d(x, conv.weight, conv.bias, Padding::Same));
}

}  // namespace

template <typename T>
ConditionedUNet<T>::ConditionedUNet(UNetConfig config, Rng& rng) : config_(config) {
  config_.validate();
  const auto kind = config_.conditioning;
  const auto meta = config_.meta_dim;
  // Stages closed by a sigmoid gate draw conv_b from twice the He bound.
  const bool gated = kind == ConditioningKind::SE || kind == ConditioningKind::ME || kind == ConditioningKind::SME;
  const double gain = gated ? 2.0 : 1.0;

  std::size_t cin = config_.in_channels;
  for (std::size_t level = 0; level < config_.depth; ++level) {
    const std::size_t c = config_.channels_at(level);
    EncoderStage<T> stage;
    stage.conv_a = make_relu_conv<T>(cin, c, rng);
    stage.conv_b = make_relu_conv<T>(c, c, rng, gain);
    stage.cond = make_block<T>(kind, c, meta, rng);
    encoders_.push_back(std::move(stage));
    cin = c;
  }
  const std::size_t cb = config_.channels_at(config_.depth);
  bottleneck_.conv_a = make_relu_conv<T>(cin, cb, rng);
  bottleneck_.conv_b = make_relu_conv<T>(cb, cb, rng, gain);
  bottleneck_.cond = make_block<T>(kind, cb, meta, rng);

  decoders_.resize(config_.depth);
  for (std::size_t i = config_.depth; i-- > 0;) {
    const std::size_t c = config_.channels_at(i);
    auto& stage = decoders_[i];
    stage.up = make_relu_conv<T>(2 * c, c, rng);
    stage.conv_a = make_relu_conv<T>(2 * c, c, rng);
    stage.conv_b = make_relu_conv<T>(c, c, rng, gain);
    stage.cond = make_block<T>(kind, c, meta, rng);
  }
  const std::size_t c0 = config_.base_channels;
  head_ = make_conv<T>(c0, config_.out_channels, 1,
                       std::sqrt(6.0 / static_cast<double>(c0 + config_.out_channels)), rng);

  for (std::size_t i = 0; i < encoders_.size(); ++i) {
    const std::string p = "enc" + std::to_string(i);
    register_conv(p + ".conv_a", encoders_[i].conv_a);
    register_conv(p + ".conv_b", encoders_[i].conv_b);
    register_block(p + ".cond", encoders_[i].cond);
  }
  register_conv("bottleneck.conv_a", bottleneck_.conv_a);
  register_conv("bottleneck.conv_b", bottleneck_.conv_b);
  register_block("bottleneck.cond", bottleneck_.cond);
  for (std::size_t i = config_.depth; i-- > 0;) {
    const std::string p = "dec" + std::to_string(i);
    register_conv(p + ".up", decoders_[i].up);
    register_conv(p + ".conv_a", decoders_[i].conv_a);
    register_conv(p + ".conv_b", decoders_[i].conv_b);
    register_block(p + ".cond", decoders_[i].cond);
  }
  register_conv("head", head_);
}

template <typename T>
void ConditionedUNet<T>::register_conv(const std::string& prefix, const ConvLayer<T>& conv) {
  params_.push_back({prefix + ".weight", conv.weight});
  params_.push_back({prefix + ".bias", conv.bias});
}

template <typename T>
void ConditionedUNet<T>::register_block(const std::string& prefix, const ConditioningBlock<T>& block) {
  for (auto& p : block.parameters(prefix)) params_.push_back(std::move(p));
}

template <typename T>
std::size_t ConditionedUNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
BasicTensor<T> ConditionedUNet<T>::forward(const BasicTensor<T>& image, const BasicTensor<T>& meta) const {
  if (!image.defined() || image.rank() != 4) {
    throw ShapeError("unet.forward: image must be [B,Cin,H,W]" +
                     (image.defined() ? ", got " + shape_str(image.shape()) : std::string()));
  }
  if (image.dim(1) != config_.in_channels) {
    throw ShapeError("unet.forward: image channels (dim 1) is " + std::to_string(image.dim(1)) + ", model expects " +
                     std::to_string(config_.in_channels));
  }
  const std::size_t div = std::size_t{1} << config_.depth;
  if (image.dim(2) % div != 0 || image.dim(3) % div != 0 || image.dim(2) == 0 || image.dim(3) == 0) {
    throw ShapeError("unet.forward: spatial size " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                     " is not divisible by 2^depth = " + std::to_string(div));
  }
  if (uses_metadata(config_.conditioning)) {
    if (!meta.defined()) {
      throw ValidationError("unet.forward: conditioning " + std::string(to_string(config_.conditioning)) +
                            " requires metadata");
    }
    if (meta.rank() != 2 || meta.dim(0) != image.dim(0) || meta.dim(1) != config_.meta_dim) {
      throw ShapeError("unet.forward: metadata must be [" + std::to_string(image.dim(0)) + "," +
                       std::to_string(config_.meta_dim) + "], got " + shape_str(meta.shape()));
    }
  } else if (meta.defined()) {
    throw ValidationError("unet.forward: conditioning " + std::string(to_string(config_.conditioning)) +
                          " does not accept metadata");
  }

  std::vector<BasicTensor<T>> skips;
  skips.reserve(config_.depth);
  BasicTensor<T> h = image;
  for (const auto& stage : encoders_) {
    h = conv_relu(stage.conv_b, conv_relu(stage.conv_a, h));
    h = apply_block(stage.cond, h, meta);
    skips.push_back(h);
    h = maxpool2(h);
  }
  h = conv_relu(bottleneck_.conv_b, conv_relu(bottleneck_.conv_a, h));
  h = apply_block(bottleneck_.cond, h, meta);
  for (std::size_t i = config_.depth; i-- > 0;) {
    const auto& stage = decoders_[i];
    h = conv_relu(stage.up, upsample_nearest2(h));
    h = concat_channels(skips[i], h);
    h = conv_relu(stage.conv_b, conv_relu(stage.conv_a, h));
    h = apply_block(stage.cond, h, meta);
  }
  return conv2d(h, head_.weight, head_.bias, Padding::Same);
}

template <typename T>
BasicTensor<T> threshold_logits(const BasicTensor<T>& logits, double threshold) {
  BasicTensor<T> mask(logits.shape());
  auto in = logits.data();
  auto out = mask.data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double z = static_cast<double>(in[i]);
    const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    out[i] = p >= threshold ? T(1) : T(0);
  }
  return mask;
}

template <typename T>
BasicTensor<T> predict_mask(const ConditionedUNet<T>& model, const BasicTensor<T>& image, const BasicTensor<T>& meta,
                            double threshold) {
  NoGradGuard no_grad;
  return threshold_logits(model.forward(image, meta), threshold);
}

template class ConditionedUNet<float>;
template class ConditionedUNet<double>;
template BasicTensor<float> threshold_logits(const BasicTensor<float>&, double);
template BasicTensor<double> threshold_logits(const BasicTensor<double>&, double);
template BasicTensor<float> predict_mask(const ConditionedUNet<float>&, const BasicTensor<float>&,
                                         const BasicTensor<float>&, double);
template BasicTensor<double> predict_mask(const ConditionedUNet<double>&, const BasicTensor<double>&,
                                          const BasicTensor<double>&, double);

}  // namespace condseg
