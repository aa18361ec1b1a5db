#include "condseg/conditioning.hpp"

#include <cmath>

#include "condseg/error.hpp"
#include "condseg/ops.hpp"

namespace condseg {

std::string_view to_string(ConditioningKind kind) {
  switch (kind) {
    case ConditioningKind::None: return "None";
    case ConditioningKind::SE: return "SE";
    case ConditioningKind::ME: return "ME";
    case ConditioningKind::SME: return "SME";
    case ConditioningKind::FiLM: return "FiLM";
  }
  return "?";
}

ConditioningKind parse_conditioning_kind(std::string_view name) {
  for (auto k : {ConditioningKind::None, ConditioningKind::SE, ConditioningKind::ME, ConditioningKind::SME,
                 ConditioningKind::FiLM}) {
    if (name == to_string(k)) return k;
  }
  throw ValidationError("unknown conditioning kind '" + std::string(name) + "' (expected None|SE|ME|SME|FiLM)");
}

std::size_t fc1_input_width(ConditioningKind kind, std::size_t channels, std::size_t meta_dim) {
  switch (kind) {
    case ConditioningKind::SE: return channels;
    case ConditioningKind::ME: return meta_dim;
    case ConditioningKind::SME: return channels + meta_dim;
    case ConditioningKind::FiLM: return meta_dim;
    case ConditioningKind::None: return 0;
  }
  return 0;
}

template <typename T>
std::vector<Parameter<T>> ConditioningBlock<T>::parameters(const std::string& prefix) const {
  if (kind == ConditioningKind::None) return {};
  return {{prefix + ".fc1.weight", fc1_weight},
          {prefix + ".fc1.bias", fc1_bias},
          {prefix + ".fc2.weight", fc2_weight},
          {prefix + ".fc2.bias", fc2_bias}};
}

namespace {

template <typename T>
BasicTensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  BasicTensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
void expect_kind(const ConditioningBlock<T>& block, ConditioningKind want, const char* op) {
  if (block.kind != want) {
    throw ValidationError(std::string(op) + ": block kind is " + std::string(to_string(block.kind)));
  }
}

template <typename T>
void expect_meta(const ConditioningBlock<T>& block, const BasicTensor<T>& x, const BasicTensor<T>& meta,
                 const char* op) {
  if (!meta.defined()) throw ValidationError(std::string(op) + ": metadata required");
  if (meta.rank() != 2) throw ShapeError(std::string(op) + ": metadata must be [B,M], got " + shape_str(meta.shape()));
  if (meta.dim(1) != block.meta_dim) {
    throw ShapeError(std::string(op) + ": metadata width (dim 1) is " + std::to_string(meta.dim(1)) +
                     ", block expects " + std::to_string(block.meta_dim));
  }
  if (meta.dim(0) != x.dim(0)) {
    throw ShapeError(std::string(op) + ": metadata batch (dim 0) is " + std::to_string(meta.dim(0)) +
                     ", input batch is " + std::to_string(x.dim(0)));
  }
}

template <typename T>
void expect_channels(const ConditioningBlock<T>& block, const BasicTensor<T>& x, const char* op) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + ": input must be [B,C,H,W], got " + shape_str(x.shape()));
  if (x.dim(1) != block.channels) {
    throw ShapeError(std::string(op) + ": input channels (dim 1) is " + std::to_string(x.dim(1)) +
                     ", block expects " + std::to_string(block.channels));
  }
}

template <typename T>
BasicTensor<T> excite(const ConditioningBlock<T>& block, const BasicTensor<T>& input) {
  return sigmoid(linear(relu(linear(input, block.fc1_weight, block.fc1_bias)), block.fc2_weight, block.fc2_bias));
}

}  // namespace

template <typename T>
ConditioningBlock<T> make_block(ConditioningKind kind, std::size_t channels, std::size_t meta_dim, Rng& rng) {
  if (channels == 0) throw ValidationError("make_block: channels must be >= 1");
  if (uses_metadata(kind) && meta_dim == 0) {
    throw ValidationError("make_block: " + std::string(to_string(kind)) + " requires meta_dim > 0");
  }
  ConditioningBlock<T> block;
  block.kind = kind;
  block.channels = channels;
  block.meta_dim = uses_metadata(kind) ? meta_dim : 0;
  block.hidden = hidden_width(channels);
  if (kind == ConditioningKind::None) return block;

  const std::size_t in = fc1_input_width(kind, channels, block.meta_dim);
  const std::size_t out = kind == ConditioningKind::FiLM ? 2 * channels : channels;
  const std::size_t h = block.hidden;

  block.fc1_weight = uniform_tensor<T>({h, in}, std::sqrt(6.0 / static_cast<double>(in)), rng);
  block.fc1_bias = BasicTensor<T>::zeros({h});
  if (kind == ConditioningKind::FiLM) {
    block.fc2_weight = BasicTensor<T>::zeros({out, h});
    block.fc2_bias = BasicTensor<T>::zeros({out});
    for (std::size_t c = 0; c < channels; ++c) block.fc2_bias[c] = T(1);
  } else {
    block.fc2_weight = uniform_tensor<T>({out, h}, std::sqrt(6.0 / static_cast<double>(h + out)), rng);
    block.fc2_bias = BasicTensor<T>::zeros({out});
  }
  for (auto* p : {&block.fc1_weight, &block.fc1_bias, &block.fc2_weight, &block.fc2_bias}) {
    p->set_requires_grad(true);
  }
  return block;
}

template <typename T>
BasicTensor<T> se_forward(const ConditioningBlock<T>& block, const BasicTensor<T>& x) {
  expect_kind(block, ConditioningKind::SE, "se_forward");
  expect_channels(block, x, "se_forward");
  return channel_scale(x, excite(block, global_avg_pool(x)));
}

template <typename T>
BasicTensor<T> me_forward(const ConditioningBlock<T>& block, const BasicTensor<T>& x, const BasicTensor<T>& meta) {
  expect_kind(block, ConditioningKind::ME, "me_forward");
  expect_channels(block, x, "me_forward");
  expect_meta(block, x, meta, "me_forward");
  return channel_scale(x, excite(block, meta));
}

template <typename T>
BasicTensor<T> sme_forward(const ConditioningBlock<T>& block, const BasicTensor<T>& x, const BasicTensor<T>& meta) {
  expect_kind(block, ConditioningKind::SME, "sme_forward");
  expect_channels(block, x, "sme_forward");
  expect_meta(block, x, meta, "sme_forward");
  return channel_scale(x, excite(block, concat_vec(global_avg_pool(x), meta)));
}

template <typename T>
BasicTensor<T> film_forward(const ConditioningBlock<T>& block, const BasicTensor<T>& x, const BasicTensor<T>& meta) {
  expect_kind(block, ConditioningKind::FiLM, "film_forward");
  expect_channels(block, x, "film_forward");
  expect_meta(block, x, meta, "film_forward");
  const auto params = linear(relu(linear(meta, block.fc1_weight, block.fc1_bias)), block.fc2_weight, block.fc2_bias);
  const auto gamma = slice_vec(params, 0, block.channels);
  const auto beta = slice_vec(params, block.channels, block.channels);
  return channel_affine(x, gamma, beta);
}

template <typename T>
BasicTensor<T> block_gate(const ConditioningBlock<T>& block, const BasicTensor<T>& x, const BasicTensor<T>& meta) {
  switch (block.kind) {
    case ConditioningKind::SE:
      expect_channels(block, x, "block_gate");
      return excite(block, global_avg_pool(x));
    case ConditioningKind::ME:
      expect_meta(block, x, meta, "block_gate");
      return excite(block, meta);
    case ConditioningKind::SME:
      expect_channels(block, x, "block_gate");
      expect_meta(block, x, meta, "block_gate");
      return excite(block, concat_vec(global_avg_pool(x), meta));
    default:
      throw ValidationError("block_gate: kind " + std::string(to_string(block.kind)) + " has no gate");
  }
}

template <typename T>
BasicTensor<T> apply_block(const ConditioningBlock<T>& block, const BasicTensor<T>& x, const BasicTensor<T>& meta) {
  switch (block.kind) {
    case ConditioningKind::None: return x;
    case ConditioningKind::SE: return se_forward(block, x);
    case ConditioningKind::ME: return me_forward(block, x, meta);
    case ConditioningKind::SME: return sme_forward(block, x, meta);
    case ConditioningKind::FiLM: return film_forward(block, x, meta);
  }
  return x;
}

#define CONDSEG_INSTANTIATE_COND(T)                                                                              \
  template struct ConditioningBlock<T>;                                                                          \
  template ConditioningBlock<T> make_block<T>(ConditioningKind, std::size_t, std::size_t, Rng&);                 \
  template BasicTensor<T> se_forward(const ConditioningBlock<T>&, const BasicTensor<T>&);                        \
  template BasicTensor<T> me_forward(const ConditioningBlock<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> sme_forward(const ConditioningBlock<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> film_forward(const ConditioningBlock<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> block_gate(const ConditioningBlock<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> apply_block(const ConditioningBlock<T>&, const BasicTensor<T>&, const BasicTensor<T>&);

CONDSEG_INSTANTIATE_COND(float)
CONDSEG_INSTANTIATE_COND(double)

#undef CONDSEG_INSTANTIATE_COND

}  // namespace condseg
