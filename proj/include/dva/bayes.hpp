#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "dva/mlp.hpp"
#include "dva/rng.hpp"
#include "dva/tape.hpp"

namespace dva {

// Mean-field variational net (Bayes by backprop). Each weight has a Gaussian
// posterior N(mu, softplus(rho)^2); the prior is a scale mixture of two
// zero-mean Gaussians. Flat layout matches Mlp.
struct BayesMlp {
  std::vector<std::size_t> widths;
  std::vector<double> mu;
  std::vector<double> rho;
  double pi = 0.5;
  double s1 = 1.0;
  double s2 = std::exp(-6.0);

  static BayesMlp init(std::vector<std::size_t> widths, std::uint64_t seed) {
    BayesMlp net;
    net.widths = std::move(widths);
    const std::size_t n = mlp_param_count(net.widths);
    net.mu.resize(n);
    net.rho.resize(n);
    Rng rng(seed);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < net.widths.size(); ++l) {
      const std::size_t ni = net.widths[l], no = net.widths[l + 1];
      const double scale = 1.0 / std::sqrt(double(ni));
      for (std::size_t k = 0; k < no * (ni + 1); ++k) net.mu[off + k] = scale * rng.gaussian();
      off += no * (ni + 1);
    }
    for (double& r : net.rho) r = rng.uniform(-5.0, -4.0);
    return net;
  }

  std::size_t param_count() const { return mu.size(); }

  static double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

  // One weight draw, off tape.
  void sample_flat(Rng& rng, std::vector<double>& w) const {
    w.resize(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i)
      w[i] = mu[i] + softplus(rho[i]) * rng.gaussian();
  }

  // The posterior mean network.
  MlpView mean_view() const { return {widths, mu}; }
  MlpView view_of(const std::vector<double>& w) const { return {widths, w}; }
};

// One reparameterized weight sample emitted on tape, plus the Monte-Carlo
// KL term log q(w|mu,rho) - log p(w) evaluated at that sample. The
// (w-mu)^2/(2 sigma^2) part of log q is identically eps^2/2, so it carries
// no gradient and is folded into the constant.
struct BayesSampleNodes {
  MlpTapeNodes net;
  NodeId kl;
  std::vector<NodeId> mu_leaves;   // section order W0,b0,W1,b1,...
  std::vector<NodeId> rho_leaves;
};

inline BayesSampleNodes bayes_emit_sample(Tape& t, const BayesMlp& net, Rng& rng) {
  BayesSampleNodes out;
  const double ln2pi = std::log(2.0 * std::numbers::pi);
  const double c1 = 1.0 / (net.s1 * std::sqrt(2.0 * std::numbers::pi));
  const double c2 = 1.0 / (net.s2 * std::sqrt(2.0 * std::numbers::pi));
  NodeId kl = t.leaf(0.0);
  double constant = 0.0;
  std::vector<double> eps;
  std::size_t off = 0;

  auto emit_section = [&](std::size_t count, std::uint32_t cols) -> NodeId {
    NodeId mu = t.leaf(std::span<const double>(net.mu.data() + off, count), true, cols);
    NodeId rho = t.leaf(std::span<const double>(net.rho.data() + off, count), true, cols);
    out.mu_leaves.push_back(mu);
    out.rho_leaves.push_back(rho);
    eps.resize(count);
    rng.fill_gaussian(eps);
    for (double e : eps) constant -= 0.5 * (e * e + ln2pi);
    NodeId epsn = t.leaf(eps, false, cols);
    // sigma = softplus(rho) = ln(1 + exp(rho))
    NodeId sigma = t.ln(t.add(t.leaf(1.0), t.exp(rho)));
    NodeId w = t.add(mu, t.mul(sigma, epsn));
    // log q contribution with gradient: -sum ln sigma
    kl = t.sub(kl, t.sum(t.ln(sigma)));
    // log p(w): scale mixture of two zero-mean Gaussians
    NodeId wsq = t.square(w);
    NodeId p1 = t.exp(t.mul(wsq, t.leaf(-0.5 / (net.s1 * net.s1))));
    NodeId p2 = t.exp(t.mul(wsq, t.leaf(-0.5 / (net.s2 * net.s2))));
    NodeId mix = t.add(t.mul(p1, t.leaf(net.pi * c1)), t.mul(p2, t.leaf((1.0 - net.pi) * c2)));
    kl = t.sub(kl, t.sum(t.ln(mix)));
    off += count;
    return w;
  };

  for (std::size_t l = 0; l + 1 < net.widths.size(); ++l) {
    const std::size_t ni = net.widths[l], no = net.widths[l + 1];
    out.net.weights.push_back(emit_section(no * ni, static_cast<std::uint32_t>(ni)));
    out.net.biases.push_back(emit_section(no, 1));
  }
  out.kl = t.add(kl, t.leaf(constant));
  return out;
}

// Copies section-leaf gradients back into flat (mu, rho) gradient vectors.
inline void bayes_gather_grads(const Tape& t, const BayesSampleNodes& s, std::span<double> gmu,
                               std::span<double> grho) {
  std::size_t off = 0;
  for (std::size_t k = 0; k < s.mu_leaves.size(); ++k) {
    auto a = t.grad_span(s.mu_leaves[k]);
    auto b = t.grad_span(s.rho_leaves[k]);
    for (std::size_t i = 0; i < a.size(); ++i) {
      gmu[off + i] = a[i];
      grho[off + i] = b[i];
    }
    off += a.size();
  }
}

}  // namespace dva
