#include "condseg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>

#include "condseg/error.hpp"

namespace condseg {

namespace {

template <typename T>
using Impl = detail::TensorImpl<T>;
template <typename T>
using ImplPtr = std::shared_ptr<Impl<T>>;
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

[[noreturn]] void shape_fail(const std::string& op, const std::string& what) {
  throw ShapeError(op + ": " + what);
}

void expect_rank(const std::string& op, const std::string& arg, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    shape_fail(op, arg + " must have rank " + std::to_string(rank) + ", got shape " + shape_str(s));
  }
}

void expect_dim(const std::string& op, const std::string& what, std::size_t got, std::size_t want) {
  if (got != want) {
    shape_fail(op, what + " is " + std::to_string(got) + ", expected " + std::to_string(want));
  }
}

template <typename T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

/// Allocates the output and, when recording, links it to its inputs on the tape.
/// The caller installs backward_fn only if the returned flag is true.
template <typename T>
std::pair<BasicTensor<T>, bool> make_output(Shape shape,
                                            std::initializer_list<const BasicTensor<T>*> inputs) {
  BasicTensor<T> out(std::move(shape));
  bool track = false;
  if (detail::grad_mode_enabled()) {
    for (const auto* in : inputs) track = track || in->requires_grad();
  }
  if (track) {
    out.set_requires_grad(true);
    auto& impl = *out.impl();
    impl.seq = detail::next_tape_seq();
    for (const auto* in : inputs) impl.parents.push_back(in->impl());
  }
  return {std::move(out), track};
}

template <typename T>
void debug_check(const BasicTensor<T>& out, const char* op,
                 std::initializer_list<const BasicTensor<T>*> inputs) {
#ifndef NDEBUG
  for (const auto* in : inputs) {
    if (!all_finite<T>(in->data())) return;
  }
  if (!all_finite<T>(out.data())) {
    throw NumericalError(std::string(op) + ": non-finite output from finite inputs");
  }
#else
  (void)out;
  (void)op;
  (void)inputs;
#endif
}

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, k, pad, stride, ho, wo;
  std::size_t rows() const { return cin * k * k; }
  std::size_t cols() const { return batch * ho * wo; }
};

/// col[(c*k+ki)*k+kj][b*ho*wo + oh*wo + ow] = x[b][c][oh*s+ki-p][ow*s+kj-p], zero outside.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t ld = g.cols();
  const std::size_t plane = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* row = col + ((c * g.k + ki) * g.k + kj) * ld;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const T* src = x + (b * g.cin + c) * g.h * g.w;
          T* dst = row + b * plane;
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
            T* drow = dst + oh * g.wo;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill(drow, drow + g.wo, T(0));
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(ih) * g.w;
            for (std::size_t ow = 0; ow < g.wo; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
              drow[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) ? T(0) : srow[iw];
            }
          }
        }
      }
    }
  }
}

/// Scatter-add inverse of im2col.
template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const std::size_t ld = g.cols();
  const std::size_t plane = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* row = col + ((c * g.k + ki) * g.k + kj) * ld;
        for (std::size_t b = 0; b < g.batch; ++b) {
          T* dst = dx + (b * g.cin + c) * g.h * g.w;
          const T* src = row + b * plane;
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
            T* drow = dst + static_cast<std::size_t>(ih) * g.w;
            const T* srow = src + oh * g.wo;
            for (std::size_t ow = 0; ow < g.wo; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
              if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.w)) drow[iw] += srow[ow];
            }
          }
        }
      }
    }
  }
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
void expect_same_shape(const std::string& op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    if (a.rank() != b.rank()) shape_fail(op, "rank mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    for (std::size_t i = 0; i < a.rank(); ++i) {
      expect_dim(op, "dimension " + std::to_string(i) + " of second operand", b.dim(i), a.dim(i));
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, Padding padding, std::size_t stride) {
  const std::string op = "conv2d";
  expect_rank(op, "input", input.shape(), 4);
  expect_rank(op, "weight", weight.shape(), 4);
  expect_rank(op, "bias", bias.shape(), 1);
  if (stride == 0) throw ValidationError("conv2d: stride must be >= 1");
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.k = weight.dim(2);
  expect_dim(op, "weight input channels (dim 1)", weight.dim(1), g.cin);
  expect_dim(op, "weight kernel width (dim 3)", weight.dim(3), g.k);
  expect_dim(op, "bias length (dim 0)", bias.dim(0), g.cout);
  if (padding == Padding::Same) {
    if (g.k % 2 == 0) shape_fail(op, "same padding needs an odd kernel, got k=" + std::to_string(g.k));
    g.pad = g.k / 2;
  } else {
    g.pad = 0;
    if (g.h < g.k || g.w < g.k) shape_fail(op, "valid padding: input spatial size smaller than kernel");
  }
  g.stride = stride;
  g.ho = (g.h + 2 * g.pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / stride + 1;

  auto [out, track] = make_output<T>({g.batch, g.cout, g.ho, g.wo}, {&input, &weight, &bias});

  std::vector<T> col(g.rows() * g.cols());
  im2col(input.data().data(), g, col.data());
  RowMat<T> result(g.cout, g.cols());
  ConstMatMap<T> w_mat(weight.data().data(), g.cout, g.rows());
  ConstMatMap<T> col_mat(col.data(), g.rows(), g.cols());
  result.noalias() = w_mat * col_mat;

  const std::size_t plane = g.ho * g.wo;
  auto o = out.data();
  auto bdata = bias.data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const T* src = result.data() + co * g.cols() + b * plane;
      T* dst = o.data() + (b * g.cout + co) * plane;
      const T bv = bdata[co];
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + bv;
    }
  }

  if (track) {
    out.impl()->backward_fn = [x = input.impl(), w = weight.impl(), bi = bias.impl(), g](Impl<T>& self) {
      const std::size_t plane = g.ho * g.wo;
      RowMat<T> dy(g.cout, g.cols());
      for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t co = 0; co < g.cout; ++co) {
          const T* src = self.grad.data() + (b * g.cout + co) * plane;
          std::copy(src, src + plane, dy.data() + co * g.cols() + b * plane);
        }
      }
      if (!bi->grad.empty()) {
        for (std::size_t co = 0; co < g.cout; ++co) bi->grad[co] += dy.row(co).sum();
      }
      if (!w->grad.empty()) {
        std::vector<T> col(g.rows() * g.cols());
        im2col(x->data.data(), g, col.data());
        ConstMatMap<T> col_mat(col.data(), g.rows(), g.cols());
        MatMap<T> dw(w->grad.data(), g.cout, g.rows());
        dw.noalias() += dy * col_mat.transpose();
      }
      if (!x->grad.empty()) {
        ConstMatMap<T> w_mat(w->data.data(), g.cout, g.rows());
        RowMat<T> dcol(g.rows(), g.cols());
        dcol.noalias() = w_mat.transpose() * dy;
        col2im_add(dcol.data(), g, x->grad.data());
      }
    };
  }
  debug_check(out, "conv2d", {&input, &weight, &bias});
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  auto [out, track] = make_output<T>(x.shape(), {&x});
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
  if (track) {
    out.impl()->backward_fn = [xi = x.impl()](Impl<T>& self) {
      if (xi->grad.empty()) return;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (xi->data[i] > T(0)) xi->grad[i] += self.grad[i];
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  auto [out, track] = make_output<T>(x.shape(), {&x});
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = stable_sigmoid(in[i]);
  if (track) {
    out.impl()->backward_fn = [xi = x.impl()](Impl<T>& self) {
      if (xi->grad.empty()) return;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T s = self.data[i];
        xi->grad[i] += self.grad[i] * s * (T(1) - s);
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  const std::string op = "linear";
  expect_rank(op, "input", x.shape(), 2);
  expect_rank(op, "weight", weight.shape(), 2);
  expect_rank(op, "bias", bias.shape(), 1);
  const std::size_t batch = x.dim(0), n = x.dim(1), m = weight.dim(0);
  expect_dim(op, "weight input width (dim 1)", weight.dim(1), n);
  expect_dim(op, "bias length (dim 0)", bias.dim(0), m);

  auto [out, track] = make_output<T>({batch, m}, {&x, &weight, &bias});
  auto xd = x.data();
  auto wd = weight.data();
  auto bd = bias.data();
  auto o = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < m; ++j) {
      T acc = bd[j];
      for (std::size_t i = 0; i < n; ++i) acc += wd[j * n + i] * xd[b * n + i];
      o[b * m + j] = acc;
    }
  }
  if (track) {
    out.impl()->backward_fn = [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), batch, n, m](Impl<T>& self) {
      const auto& dy = self.grad;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < m; ++j) {
          const T g = dy[b * m + j];
          if (!bi->grad.empty()) bi->grad[j] += g;
          for (std::size_t i = 0; i < n; ++i) {
            if (!wi->grad.empty()) wi->grad[j * n + i] += g * xi->data[b * n + i];
            if (!xi->grad.empty()) xi->grad[b * n + i] += g * wi->data[j * n + i];
          }
        }
      }
    };
  }
  debug_check(out, "linear", {&x, &weight, &bias});
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  expect_rank("global_avg_pool", "input", x.shape(), 4);
  const std::size_t bc = x.dim(0) * x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  if (plane == 0) shape_fail("global_avg_pool", "spatial extent must be >= 1");
  auto [out, track] = make_output<T>({x.dim(0), x.dim(1)}, {&x});
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < bc; ++i) {
    T acc = T(0);
    for (std::size_t p = 0; p < plane; ++p) acc += in[i * plane + p];
    o[i] = acc / static_cast<T>(plane);
  }
  if (track) {
    out.impl()->backward_fn = [xi = x.impl(), bc, plane](Impl<T>& self) {
      if (xi->grad.empty()) return;
      for (std::size_t i = 0; i < bc; ++i) {
        const T g = self.grad[i] / static_cast<T>(plane);
        for (std::size_t p = 0; p < plane; ++p) xi->grad[i * plane + p] += g;
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> maxpool2(const BasicTensor<T>& x) {
  expect_rank("maxpool2", "input", x.shape(), 4);
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0) shape_fail("maxpool2", "height (dim 2) must be even, got " + std::to_string(h));
  if (w % 2 != 0) shape_fail("maxpool2", "width (dim 3) must be even, got " + std::to_string(w));
  const std::size_t bc = x.dim(0) * x.dim(1), ho = h / 2, wo = w / 2;
  auto [out, track] = make_output<T>({x.dim(0), x.dim(1), ho, wo}, {&x});
  auto in = x.data();
  auto o = out.data();
  std::vector<std::uint32_t> argmax(out.numel());
  for (std::size_t c = 0; c < bc; ++c) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t best = c * h * w + (2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = c * h * w + (2 * i + di) * w + 2 * j + dj;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t oi = (c * ho + i) * wo + j;
        o[oi] = in[best];
        argmax[oi] = static_cast<std::uint32_t>(best);
      }
    }
  }
  if (track) {
    out.impl()->backward_fn = [xi = x.impl(), argmax = std::move(argmax)](Impl<T>& self) {
      if (xi->grad.empty()) return;
      for (std::size_t i = 0; i < self.grad.size(); ++i) xi->grad[argmax[i]] += self.grad[i];
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> upsample_nearest2(const BasicTensor<T>& x) {
  expect_rank("upsample_nearest2", "input", x.shape(), 4);
  const std::size_t bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  auto [out, track] = make_output<T>({x.dim(0), x.dim(1), 2 * h, 2 * w}, {&x});
  auto in = x.data();
  auto o = out.data();
  for (std::size_t c = 0; c < bc; ++c) {
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) {
        o[(c * 2 * h + i) * 2 * w + j] = in[(c * h + i / 2) * w + j / 2];
      }
    }
  }
  if (track) {
    out.impl()->backward_fn = [xi = x.impl(), bc, h, w](Impl<T>& self) {
      if (xi->grad.empty()) return;
      for (std::size_t c = 0; c < bc; ++c) {
        for (std::size_t i = 0; i < 2 * h; ++i) {
          for (std::size_t j = 0; j < 2 * w; ++j) {
            xi->grad[(c * h + i / 2) * w + j / 2] += self.grad[(c * 2 * h + i) * 2 * w + j];
          }
        }
      }
    };
  }
  return out;
}

namespace {

/// Shared body of the two concat ops: both are "outer x (inner_a ++ inner_b)".
template <typename T>
BasicTensor<T> concat_blocks(const BasicTensor<T>& a, const BasicTensor<T>& b, std::size_t outer,
                             std::size_t inner_a, std::size_t inner_b, Shape out_shape) {
  auto [out, track] = make_output<T>(std::move(out_shape), {&a, &b});
  auto ad = a.data();
  auto bd = b.data();
  auto o = out.data();
  const std::size_t inner = inner_a + inner_b;
  for (std::size_t i = 0; i < outer; ++i) {
    std::copy_n(ad.data() + i * inner_a, inner_a, o.data() + i * inner);
    std::copy_n(bd.data() + i * inner_b, inner_b, o.data() + i * inner + inner_a);
  }
  if (track) {
    out.impl()->backward_fn = [ai = a.impl(), bi = b.impl(), outer, inner_a, inner_b](Impl<T>& self) {
      const std::size_t inner = inner_a + inner_b;
      for (std::size_t i = 0; i < outer; ++i) {
        const T* g = self.grad.data() + i * inner;
        if (!ai->grad.empty()) {
          for (std::size_t k = 0; k < inner_a; ++k) ai->grad[i * inner_a + k] += g[k];
        }
        if (!bi->grad.empty()) {
          for (std::size_t k = 0; k < inner_b; ++k) bi->grad[i * inner_b + k] += g[inner_a + k];
        }
      }
    };
  }
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const std::string op = "concat_channels";
  expect_rank(op, "first operand", a.shape(), 4);
  expect_rank(op, "second operand", b.shape(), 4);
  expect_dim(op, "batch (dim 0) of second operand", b.dim(0), a.dim(0));
  expect_dim(op, "height (dim 2) of second operand", b.dim(2), a.dim(2));
  expect_dim(op, "width (dim 3) of second operand", b.dim(3), a.dim(3));
  const std::size_t plane = a.dim(2) * a.dim(3);
  return concat_blocks(a, b, a.dim(0), a.dim(1) * plane, b.dim(1) * plane,
                       {a.dim(0), a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
}

template <typename T>
BasicTensor<T> concat_vec(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const std::string op = "concat_vec";
  expect_rank(op, "first operand", a.shape(), 2);
  expect_rank(op, "second operand", b.shape(), 2);
  expect_dim(op, "batch (dim 0) of second operand", b.dim(0), a.dim(0));
  return concat_blocks(a, b, a.dim(0), a.dim(1), b.dim(1), {a.dim(0), a.dim(1) + b.dim(1)});
}

template <typename T>
BasicTensor<T> slice_vec(const BasicTensor<T>& x, std::size_t begin, std::size_t count) {
  expect_rank("slice_vec", "input", x.shape(), 2);
  const std::size_t batch = x.dim(0), n = x.dim(1);
  if (begin + count > n) {
    shape_fail("slice_vec", "columns [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                                ") exceed width (dim 1) " + std::to_string(n));
  }
  auto [out, track] = make_output<T>({batch, count}, {&x});
  auto in = x.data();
  auto o = out.data();
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(in.data() + b * n + begin, count, o.data() + b * count);
  if (track) {
    out.impl()->backward_fn = [xi = x.impl(), batch, n, begin, count](Impl<T>& self) {
      if (xi->grad.empty()) return;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t k = 0; k < count; ++k) xi->grad[b * n + begin + k] += self.grad[b * count + k];
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> channel_scale(const BasicTensor<T>& x, const BasicTensor<T>& gate) {
  const std::string op = "channel_scale";
  expect_rank(op, "input", x.shape(), 4);
  expect_rank(op, "gate", gate.shape(), 2);
  expect_dim(op, "gate batch (dim 0)", gate.dim(0), x.dim(0));
  expect_dim(op, "gate channels (dim 1)", gate.dim(1), x.dim(1));
  const std::size_t bc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  auto [out, track] = make_output<T>(x.shape(), {&x, &gate});
  auto in = x.data();
  auto gd = gate.data();
  auto o = out.data();
  for (std::size_t i = 0; i < bc; ++i) {
    for (std::size_t p = 0; p < plane; ++p) o[i * plane + p] = in[i * plane + p] * gd[i];
  }
  if (track) {
    out.impl()->backward_fn = [xi = x.impl(), gi = gate.impl(), bc, plane](Impl<T>& self) {
      for (std::size_t i = 0; i < bc; ++i) {
        const T* g = self.grad.data() + i * plane;
        if (!gi->grad.empty()) {
          T acc = T(0);
          for (std::size_t p = 0; p < plane; ++p) acc += g[p] * xi->data[i * plane + p];
          gi->grad[i] += acc;
        }
        if (!xi->grad.empty()) {
          const T s = gi->data[i];
          for (std::size_t p = 0; p < plane; ++p) xi->grad[i * plane + p] += g[p] * s;
        }
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> channel_affine(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta) {
  const std::string op = "channel_affine";
  expect_rank(op, "input", x.shape(), 4);
  expect_rank(op, "gamma", gamma.shape(), 2);
  expect_rank(op, "beta", beta.shape(), 2);
  expect_dim(op, "gamma batch (dim 0)", gamma.dim(0), x.dim(0));
  expect_dim(op, "gamma channels (dim 1)", gamma.dim(1), x.dim(1));
  expect_dim(op, "beta batch (dim 0)", beta.dim(0), x.dim(0));
  expect_dim(op, "beta channels (dim 1)", beta.dim(1), x.dim(1));
  const std::size_t bc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  auto [out, track] = make_output<T>(x.shape(), {&x, &gamma, &beta});
  auto in = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  auto o = out.data();
  for (std::size_t i = 0; i < bc; ++i) {
    for (std::size_t p = 0; p < plane; ++p) o[i * plane + p] = gd[i] * in[i * plane + p] + bd[i];
  }
  if (track) {
    out.impl()->backward_fn = [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), bc, plane](Impl<T>& self) {
      for (std::size_t i = 0; i < bc; ++i) {
        const T* g = self.grad.data() + i * plane;
        T gsum = T(0), gx = T(0);
        for (std::size_t p = 0; p < plane; ++p) {
          gsum += g[p];
          gx += g[p] * xi->data[i * plane + p];
        }
        if (!gi->grad.empty()) gi->grad[i] += gx;
        if (!bi->grad.empty()) bi->grad[i] += gsum;
        if (!xi->grad.empty()) {
          const T s = gi->data[i];
          for (std::size_t p = 0; p < plane; ++p) xi->grad[i * plane + p] += g[p] * s;
        }
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  expect_same_shape("add", a, b);
  auto [out, track] = make_output<T>(a.shape(), {&a, &b});
  auto ad = a.data();
  auto bd = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] + bd[i];
  if (track) {
    out.impl()->backward_fn = [ai = a.impl(), bi = b.impl()](Impl<T>& self) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (!ai->grad.empty()) ai->grad[i] += self.grad[i];
        if (!bi->grad.empty()) bi->grad[i] += self.grad[i];
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  expect_same_shape("mul", a, b);
  auto [out, track] = make_output<T>(a.shape(), {&a, &b});
  auto ad = a.data();
  auto bd = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] * bd[i];
  if (track) {
    out.impl()->backward_fn = [ai = a.impl(), bi = b.impl()](Impl<T>& self) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T g = self.grad[i];
        const T av = ai->data[i], bv = bi->data[i];
        if (!ai->grad.empty()) ai->grad[i] += g * bv;
        if (!bi->grad.empty()) bi->grad[i] += g * av;
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  auto [out, track] = make_output<T>(x.shape(), {&x});
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * factor;
  if (track) {
    out.impl()->backward_fn = [xi = x.impl(), factor](Impl<T>& self) {
      if (xi->grad.empty()) return;
      for (std::size_t i = 0; i < self.grad.size(); ++i) xi->grad[i] += self.grad[i] * factor;
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  auto [out, track] = make_output<T>({1}, {&x});
  T acc = T(0);
  for (T v : x.data()) acc += v;
  out[0] = acc;
  if (track) {
    out.impl()->backward_fn = [xi = x.impl()](Impl<T>& self) {
      if (xi->grad.empty()) return;
      for (auto& g : xi->grad) g += self.grad[0];
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  if (x.numel() == 0) shape_fail("mean", "empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
BasicTensor<T> bce_with_logits(const BasicTensor<T>& pred, const BasicTensor<T>& target,
                               const std::optional<ClassWeights>& class_weights) {
  expect_same_shape("bce_with_logits", pred, target);
  if (pred.numel() == 0) shape_fail("bce_with_logits", "empty prediction");
  auto td = target.data();
  for (std::size_t i = 0; i < td.size(); ++i) {
    if (td[i] != T(0) && td[i] != T(1)) {
      throw ValidationError("bce_with_logits: target value " + std::to_string(td[i]) + " at index " +
                            std::to_string(i) + " is not 0 or 1");
    }
  }
  const ClassWeights cw = class_weights.value_or(ClassWeights{});
  const T w_neg = static_cast<T>(cw.negative), w_pos = static_cast<T>(cw.positive);
  auto [out, track] = make_output<T>({1}, {&pred});
  auto z = pred.data();
  const T inv_n = T(1) / static_cast<T>(z.size());
  T acc = T(0);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const T l = std::max(z[i], T(0)) - z[i] * td[i] + std::log1p(std::exp(-std::abs(z[i])));
    acc += (td[i] == T(1) ? w_pos : w_neg) * l;
  }
  out[0] = acc * inv_n;
  if (track) {
    out.impl()->backward_fn = [pi = pred.impl(), ti = target.impl(), w_neg, w_pos, inv_n](Impl<T>& self) {
      if (pi->grad.empty()) return;
      const T g = self.grad[0] * inv_n;
      for (std::size_t i = 0; i < pi->data.size(); ++i) {
        const T t = ti->data[i];
        pi->grad[i] += g * (t == T(1) ? w_pos : w_neg) * (stable_sigmoid(pi->data[i]) - t);
      }
    };
  }
  debug_check(out, "bce_with_logits", {&pred, &target});
  return out;
}

#define CONDSEG_INSTANTIATE_OPS(T)                                                                           \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, Padding, \
                                 std::size_t);                                                               \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                       \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);       \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                            \
  template BasicTensor<T> maxpool2(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> upsample_nearest2(const BasicTensor<T>&);                                          \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> concat_vec(const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template BasicTensor<T> slice_vec(const BasicTensor<T>&, std::size_t, std::size_t);                        \
  template BasicTensor<T> channel_scale(const BasicTensor<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> channel_affine(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                   \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                        \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                       \
  template BasicTensor<T> bce_with_logits(const BasicTensor<T>&, const BasicTensor<T>&,                      \
                                          const std::optional<ClassWeights>&);

CONDSEG_INSTANTIATE_OPS(float)
CONDSEG_INSTANTIATE_OPS(double)

#undef CONDSEG_INSTANTIATE_OPS

}  // namespace condseg
