#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "dva/rng.hpp"
#include "dva/tape.hpp"

namespace dva {

// Fully connected net, tanh on hidden layers, identity output. Parameters
// live in one flat vector laid out layer by layer: weight matrix (out x in,
// row-major), then bias. widths = {in, hidden..., out}.
inline std::size_t mlp_param_count(std::span<const std::size_t> widths) {
  if (widths.size() < 2) throw std::invalid_argument("mlp: need at least two widths");
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l + 1] * (widths[l] + 1);
  return n;
}

// Non-owning view over flat parameters; also interprets weight draws from
// the Bayesian posterior or any other flat source.
struct MlpView {
  std::span<const std::size_t> widths;
  std::span<const double> theta;

  void forward(std::span<const double> in, std::span<double> out) const {
    thread_local std::vector<double> h, a;
    h.assign(in.begin(), in.end());
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const std::size_t ni = widths[l], no = widths[l + 1];
      a.resize(no);
      for (std::size_t i = 0; i < no; ++i) {
        const double* row = theta.data() + off + i * ni;
        double acc = theta[off + no * ni + i];  // bias
        for (std::size_t j = 0; j < ni; ++j) acc += row[j] * h[j];
        a[i] = l + 2 < widths.size() ? std::tanh(acc) : acc;
      }
      off += no * (ni + 1);
      std::swap(h, a);
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = h[i];
  }

  double forward1(double x) const {
    double y;
    forward({&x, 1}, {&y, 1});
    return y;
  }
};

struct Mlp {
  std::vector<std::size_t> widths;
  std::vector<double> theta;

  static Mlp init(std::vector<std::size_t> widths, std::uint64_t seed) {
    Mlp net;
    net.widths = std::move(widths);
    net.theta.resize(mlp_param_count(net.widths));
    Rng rng(seed);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < net.widths.size(); ++l) {
      const std::size_t ni = net.widths[l], no = net.widths[l + 1];
      const double scale = 1.0 / std::sqrt(double(ni));
      for (std::size_t k = 0; k < no * (ni + 1); ++k) net.theta[off + k] = scale * rng.gaussian();
      off += no * (ni + 1);
    }
    return net;
  }

  MlpView view() const { return {widths, theta}; }
  double forward1(double x) const { return view().forward1(x); }
  std::size_t param_count() const { return theta.size(); }
};

// On-tape forward pass. Weight/bias nodes may be leaves or derived nodes
// (sampled Bayesian weights); weight nodes must carry the matrix column
// count, which leaf() and elementwise ops preserve.
struct MlpTapeNodes {
  std::vector<NodeId> weights;
  std::vector<NodeId> biases;
};

inline MlpTapeNodes mlp_emit_leaves(Tape& t, std::span<const std::size_t> widths,
                                    std::span<const double> theta, bool needs_grad) {
  MlpTapeNodes nodes;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t ni = widths[l], no = widths[l + 1];
    nodes.weights.push_back(
        t.leaf(theta.subspan(off, no * ni), needs_grad, static_cast<std::uint32_t>(ni)));
    nodes.biases.push_back(t.leaf(theta.subspan(off + no * ni, no), needs_grad));
    off += no * (ni + 1);
  }
  return nodes;
}

inline NodeId mlp_emit_forward(Tape& t, const MlpTapeNodes& nodes, NodeId x) {
  NodeId h = x;
  for (std::size_t l = 0; l < nodes.weights.size(); ++l) {
    h = t.add(t.matvec(nodes.weights[l], h), nodes.biases[l]);
    if (l + 1 < nodes.weights.size()) h = t.tanh(h);
  }
  return h;
}

// Collects leaf gradients back into flat theta order.
inline void mlp_gather_grads(const Tape& t, const MlpTapeNodes& nodes, std::span<double> grad) {
  std::size_t off = 0;
  for (std::size_t l = 0; l < nodes.weights.size(); ++l) {
    for (double g : t.grad_span(nodes.weights[l])) grad[off++] = g;
    for (double g : t.grad_span(nodes.biases[l])) grad[off++] = g;
  }
}

}  // namespace dva
