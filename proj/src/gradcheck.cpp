#include "condseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "condseg/error.hpp"

namespace condseg {

double finite_diff_check(const std::function<Tensor64()>& f, std::vector<Tensor64> wrt, double eps) {
  for (auto& t : wrt) {
    if (!t.requires_grad()) {
      t.set_requires_grad(true);
    } else {
      t.zero_grad();
    }
  }
  backward(f());

  std::vector<std::vector<double>> analytic;
  analytic.reserve(wrt.size());
  for (auto& t : wrt) analytic.emplace_back(t.grad().begin(), t.grad().end());

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto values = wrt[k].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = f().item();
      values[i] = saved - eps;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

double finite_diff_check(const std::function<Tensor64(const Tensor64&)>& f, Tensor64 x, double eps) {
  return finite_diff_check([&f, x] { return f(x); }, std::vector<Tensor64>{x}, eps);
}

}  // namespace condseg
