#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "grain/autodiff.hpp"

namespace grain {

/// Scalar-valued function recorded on a fresh tape for each evaluation.
using ScalarFn = std::function<Var(Tape&, Var)>;

/// Max over coordinates of |analytic - central| / max(1, |analytic|, |central|).
inline double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  Tensor analytic;
  {
    Tape tape;
    Var in = tape.variable(x);
    Var out = f(tape, in);
    if (out.value().size() != 1) {
      throw ShapeError("grad_check: function output has shape " + out.value().shape_string() +
                       ", expected a scalar");
    }
    tape.backward(out);
    analytic = tape.grad(in);
  }
  auto eval = [&](const Tensor& point) {
    Tape tape;
    return f(tape, tape.constant(point)).value().item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval(probe);
    probe[i] = orig - eps;
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace grain
