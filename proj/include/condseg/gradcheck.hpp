#pragma once

#include <functional>
#include <vector>

#include "condseg/tensor.hpp"

namespace condseg {

/// Max over all coordinates of |analytic - central difference| / max(1, |analytic|).
/// `f` must be scalar-valued and read the current contents of `wrt` on every call.
/// Intended for 64-bit tensors; the data of `wrt` is restored before returning.
double finite_diff_check(const std::function<Tensor64()>& f, std::vector<Tensor64> wrt,
                         double eps = 1e-4);

/// Single-input form: f(x).
double finite_diff_check(const std::function<Tensor64(const Tensor64&)>& f, Tensor64 x,
                         double eps = 1e-4);

}  // namespace condseg
