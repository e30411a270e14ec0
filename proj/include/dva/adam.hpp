#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace dva {

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction over one flat parameter vector.
class Adam {
 public:
  explicit Adam(std::size_t n, AdamConfig cfg = {}) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }

  void step(std::span<double> theta, std::span<const double> grad) {
    if (theta.size() != m_.size() || grad.size() != m_.size())
      throw std::invalid_argument("adam: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const double g = grad[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
      theta[i] -= cfg_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.eps);
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::int64_t t_ = 0;
};

// Adam over a long parameter bank where each step touches a subset of
// entries (the minibatch's noise estimates). Each entry keeps its own step
// counter so bias correction stays per-coordinate.
class SparseAdam {
 public:
  explicit SparseAdam(std::size_t n, AdamConfig cfg = {})
      : cfg_(cfg), m_(n, 0.0), v_(n, 0.0), t_(n, 0) {}

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }

  void step(std::span<const std::size_t> idx, std::span<double> theta,
            std::span<const double> grad) {
    if (idx.size() != grad.size()) throw std::invalid_argument("sparse adam: size mismatch");
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::size_t i = idx[k];
      const double g = grad[k];
      const double c1 = 1.0 - std::pow(cfg_.beta1, double(++t_[i]));
      const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_[i]));
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
      theta[i] -= cfg_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.eps);
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::vector<std::int64_t> t_;
};

}  // namespace dva
