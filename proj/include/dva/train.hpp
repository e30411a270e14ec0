#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dva/adam.hpp"
#include "dva/bayes.hpp"
#include "dva/data_view.hpp"
#include "dva/mlp.hpp"
#include "dva/rng.hpp"
#include "dva/tape.hpp"

namespace dva {

struct LrStage {
  int epochs;
  double lr;
};

struct FitConfig {
  double lr = 0.01;
  int epochs = 200;
  std::size_t batch = 100;
  std::uint64_t seed = 0;
  std::vector<LrStage> stages;  // when nonempty, replaces (epochs, lr)

  std::vector<LrStage> schedule() const {
    return stages.empty() ? std::vector<LrStage>{{epochs, lr}} : stages;
  }
};

namespace detail {

inline void check_finite_loss(double v, const char* who) {
  if (!std::isfinite(v)) throw std::runtime_error(std::string(who) + ": non-finite loss");
}

template <class StepFn>
void epoch_batches(std::vector<std::size_t>& idx, std::size_t batch, Rng& rng, StepFn&& step) {
  rng.shuffle(idx);
  for (std::size_t at = 0; at < idx.size(); at += batch) {
    const std::size_t n = std::min(batch, idx.size() - at);
    step(std::span<const std::size_t>(idx.data() + at, n));
  }
}

}  // namespace detail

// Minibatch MSE pretraining of a deterministic net.
inline void train_mse(Mlp& net, DataView data, const FitConfig& cfg) {
  if (data.size() == 0) throw std::invalid_argument("train_mse: empty dataset");
  Rng rng(derive_seed(cfg.seed, 0x7261696e));
  Adam adam(net.theta.size(), {.lr = cfg.lr});
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> grad(net.theta.size());
  Tape t;

  for (const LrStage& stage : cfg.schedule()) {
    adam.set_lr(stage.lr);
    for (int e = 0; e < stage.epochs; ++e) {
      detail::epoch_batches(idx, cfg.batch, rng, [&](std::span<const std::size_t> b) {
        t.reset();
        MlpTapeNodes nodes = mlp_emit_leaves(t, net.widths, net.theta, true);
        NodeId acc = t.leaf(0.0);
        for (std::size_t i : b) {
          NodeId f = mlp_emit_forward(t, nodes, t.leaf(std::span(&data.x[i], 1)));
          acc = t.add(acc, t.square(t.sub(f, t.leaf(data.y[i]))));
        }
        NodeId loss = t.mul(acc, t.leaf(1.0 / double(b.size())));
        detail::check_finite_loss(t.value(loss), "train_mse");
        t.backward(loss);
        mlp_gather_grads(t, nodes, grad);
        adam.step(net.theta, grad);
      });
    }
  }
}

// Each member trains independently on its own shuffle stream.
inline void train_ensemble(std::vector<Mlp>& members, DataView data, const FitConfig& cfg) {
  for (std::size_t m = 0; m < members.size(); ++m) {
    FitConfig mine = cfg;
    mine.seed = derive_seed(cfg.seed, 0x656e73, m);
    train_mse(members[m], data, mine);
  }
}

// Bayes-by-backprop: per minibatch, one reparameterized weight draw; loss is
// KL(q||prior)/num_batches plus the unit-variance Gaussian NLL of the batch.
inline void train_elbo(BayesMlp& net, DataView data, const FitConfig& cfg) {
  if (data.size() == 0) throw std::invalid_argument("train_elbo: empty dataset");
  Rng rng(derive_seed(cfg.seed, 0x656c626f));
  const std::size_t n = net.param_count();
  Adam adam_mu(n, {.lr = cfg.lr});
  Adam adam_rho(n, {.lr = cfg.lr});
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  const double num_batches = std::ceil(double(data.size()) / double(cfg.batch));
  std::vector<double> gmu(n), grho(n);
  Tape t;

  for (const LrStage& stage : cfg.schedule()) {
    adam_mu.set_lr(stage.lr);
    adam_rho.set_lr(stage.lr);
    for (int e = 0; e < stage.epochs; ++e) {
      detail::epoch_batches(idx, cfg.batch, rng, [&](std::span<const std::size_t> b) {
        t.reset();
        BayesSampleNodes s = bayes_emit_sample(t, net, rng);
        NodeId acc = t.leaf(0.5 * std::log(2.0 * std::numbers::pi) * double(b.size()));
        for (std::size_t i : b) {
          NodeId f = mlp_emit_forward(t, s.net, t.leaf(std::span(&data.x[i], 1)));
          NodeId r2 = t.square(t.sub(f, t.leaf(data.y[i])));
          acc = t.add(acc, t.mul(r2, t.leaf(0.5)));
        }
        NodeId loss = t.add(t.mul(s.kl, t.leaf(1.0 / num_batches)), acc);
        detail::check_finite_loss(t.value(loss), "train_elbo");
        t.backward(loss);
        bayes_gather_grads(t, s, gmu, grho);
        adam_mu.step(net.mu, gmu);
        adam_rho.step(net.rho, grho);
      });
    }
  }
}

}  // namespace dva
