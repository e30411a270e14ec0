#pragma once

#include <cstddef>

namespace dva {

// Classic fourth-order Runge-Kutta for autonomous scalar dynamics.
template <class F>
double rk4_step(F&& f, double x, double h) {
  const double k1 = f(x);
  const double k2 = f(x + 0.5 * h * k1);
  const double k3 = f(x + 0.5 * h * k2);
  const double k4 = f(x + h * k3);
  return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <class F>
double rk4_integrate(F&& f, double x, double t_span, std::size_t substeps) {
  const double h = t_span / double(substeps);
  for (std::size_t i = 0; i < substeps; ++i) x = rk4_step(f, x, h);
  return x;
}

}  // namespace dva
