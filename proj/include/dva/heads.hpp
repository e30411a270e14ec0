#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>

#include "dva/mlp.hpp"
#include "dva/tape.hpp"

namespace dva {

// Trainable variance model, parameterized as log-variance so the realized
// variance is positive by construction. Either one scalar (homoscedastic) or
// a small net mapping x to log-variance (heteroscedastic).
struct VarianceHead {
  enum class Kind { Scalar, Network };
  Kind kind = Kind::Scalar;
  double log_var = 0.0;
  Mlp net;

  static constexpr double kLogVarMin = -20.0;
  static constexpr double kLogVarMax = 20.0;

  static VarianceHead scalar(double init_log_var = 0.0) {
    VarianceHead h;
    h.kind = Kind::Scalar;
    h.log_var = init_log_var;
    return h;
  }

  static VarianceHead network(std::uint64_t seed, std::size_t hidden = 100) {
    VarianceHead h;
    h.kind = Kind::Network;
    h.net = Mlp::init({1, hidden, 1}, seed);
    return h;
  }

  std::span<double> params() {
    return kind == Kind::Scalar ? std::span<double>(&log_var, 1) : std::span<double>(net.theta);
  }
  std::span<const double> params() const {
    return kind == Kind::Scalar ? std::span<const double>(&log_var, 1)
                                : std::span<const double>(net.theta);
  }

  double log_var_at(double x) const {
    const double lv = kind == Kind::Scalar ? log_var : net.forward1(x);
    return std::clamp(lv, kLogVarMin, kLogVarMax);
  }
  double variance_at(double x) const { return std::exp(log_var_at(x)); }
  double sigma_at(double x) const { return std::exp(0.5 * log_var_at(x)); }

  // The scalar parameter is projected back into the clamp range after each
  // optimizer step; network outputs are clamped at realization instead.
  void clamp_params() {
    if (kind == Kind::Scalar) log_var = std::clamp(log_var, kLogVarMin, kLogVarMax);
  }
};

struct HeadTapeNodes {
  bool is_scalar = true;
  NodeId scalar_leaf = 0;
  MlpTapeNodes net;
};

inline HeadTapeNodes head_emit_leaves(Tape& t, const VarianceHead& h, bool needs_grad) {
  HeadTapeNodes n;
  if (h.kind == VarianceHead::Kind::Scalar) {
    n.is_scalar = true;
    n.scalar_leaf = t.leaf(h.log_var, needs_grad);
  } else {
    n.is_scalar = false;
    n.net = mlp_emit_leaves(t, h.net.widths, h.net.theta, needs_grad);
  }
  return n;
}

// Log-variance node at x (x is a length-1 node; ignored by scalar heads).
inline NodeId head_log_var(Tape& t, const HeadTapeNodes& n, NodeId x) {
  return n.is_scalar ? n.scalar_leaf : mlp_emit_forward(t, n.net, x);
}

inline void head_gather_grads(const Tape& t, const HeadTapeNodes& n, std::span<double> grad) {
  if (n.is_scalar) {
    grad[0] = t.grad(n.scalar_leaf);
    return;
  }
  std::size_t off = 0;
  for (std::size_t l = 0; l < n.net.weights.size(); ++l) {
    for (double g : t.grad_span(n.net.weights[l])) grad[off++] = g;
    for (double g : t.grad_span(n.net.biases[l])) grad[off++] = g;
  }
}

}  // namespace dva
