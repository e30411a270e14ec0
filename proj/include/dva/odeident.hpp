#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "dva/adam.hpp"
#include "dva/bayes.hpp"
#include "dva/dva.hpp"
#include "dva/heads.hpp"
#include "dva/mlp.hpp"
#include "dva/predictor.hpp"
#include "dva/rk4.hpp"
#include "dva/rng.hpp"
#include "dva/segmentation.hpp"
#include "dva/synthdata.hpp"
#include "dva/tape.hpp"
#include "dva/train.hpp"

namespace dva {

// Bridges one observation gap by composing fixed-size RK4 steps.
template <class F>
double one_step_flow(F&& f, double x, double dt_obs = 0.1, int substeps = 10) {
  if (substeps < 1) throw std::invalid_argument("one_step_flow: substeps must be >= 1");
  return rk4_integrate(f, x, dt_obs, std::size_t(substeps));
}

// A field realization emits its computation for one state node; realizing
// again may draw fresh weights (Bayesian fields sample once per batch).
using FieldEmit = std::function<NodeId(Tape&, NodeId)>;
using FieldRealize = std::function<FieldEmit(Tape&, Rng&)>;

inline FieldRealize field_from_predictor(const Predictor& pred) {
  return [&pred](Tape& t, Rng& rng) -> FieldEmit {
    std::vector<double> buf;
    MlpView view;
    if (!pred.realize_mlp(rng, buf, view))
      throw std::invalid_argument("field_from_predictor: predictor has no sampled network form");
    MlpTapeNodes nodes = mlp_emit_leaves(t, view.widths, view.theta, false);
    return [nodes](Tape& t2, NodeId x) { return mlp_emit_forward(t2, nodes, x); };
  };
}

// The benchmark dynamics x' = x(1 + sin x), for oracle runs that remove
// model error from the pipeline.
inline FieldRealize field_true() {
  return [](Tape&, Rng&) -> FieldEmit {
    return [](Tape& t, NodeId x) { return t.add(x, t.mul(x, t.sin(x))); };
  };
}

inline NodeId emit_flow(Tape& t, const FieldEmit& f, NodeId x, double dt_obs, int substeps) {
  if (substeps < 1) throw std::invalid_argument("emit_flow: substeps must be >= 1");
  const double h = dt_obs / double(substeps);
  const NodeId nh = t.leaf(h);
  const NodeId nh2 = t.leaf(0.5 * h);
  const NodeId nh6 = t.leaf(h / 6.0);
  const NodeId two = t.leaf(2.0);
  for (int s = 0; s < substeps; ++s) {
    const NodeId k1 = f(t, x);
    const NodeId k2 = f(t, t.add(x, t.mul(k1, nh2)));
    const NodeId k3 = f(t, t.add(x, t.mul(k2, nh2)));
    const NodeId k4 = f(t, t.add(x, t.mul(k3, nh)));
    const NodeId sum = t.add(t.add(k1, k4), t.mul(t.add(k2, k3), two));
    x = t.add(x, t.mul(sum, nh6));
  }
  return x;
}

struct PairList {
  std::vector<double> x;                 // all observed states, flattened
  std::vector<std::size_t> offsets;      // first flat index per trajectory
  std::vector<std::size_t> start, target;

  std::size_t n_points() const { return x.size(); }
  std::size_t n_pairs() const { return start.size(); }
};

inline PairList build_pairs(const TrajectorySet& set) {
  PairList p;
  for (const Trajectory& tr : set.trajectories) {
    p.offsets.push_back(p.x.size());
    for (std::size_t k = 0; k < tr.x_obs.size(); ++k) {
      p.x.push_back(tr.x_obs[k]);
      if (k > 0) {
        p.start.push_back(p.x.size() - 2);
        p.target.push_back(p.x.size() - 1);
      }
    }
  }
  if (p.n_pairs() == 0) throw std::invalid_argument("build_pairs: no consecutive observations");
  return p;
}

// One-step residual energy of the field's mean: the baseline estimator that
// conflates start-state noise, target noise, and model error.
inline double mse_noise_estimate(const std::function<double(double)>& field_mean,
                                 const TrajectorySet& set, int substeps = 10) {
  const PairList p = build_pairs(set);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.n_pairs(); ++i) {
    const double pred = one_step_flow(field_mean, p.x[p.start[i]], set.dt_obs, substeps);
    const double r = p.x[p.target[i]] - pred;
    acc += r * r;
  }
  return acc / double(p.n_pairs());
}

// Fits the field to consecutive observation pairs with squared loss.
inline void node_train(Mlp& field, const TrajectorySet& set, const FitConfig& cfg,
                       int substeps = 10) {
  const PairList p = build_pairs(set);
  Rng rng(derive_seed(cfg.seed, 0x6e6f6465));
  Adam adam(field.theta.size(), {.lr = cfg.lr});
  std::vector<std::size_t> idx(p.n_pairs());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> grad(field.theta.size());
  Tape t;

  for (const LrStage& stage : cfg.schedule()) {
    adam.set_lr(stage.lr);
    for (int e = 0; e < stage.epochs; ++e) {
      detail::epoch_batches(idx, cfg.batch, rng, [&](std::span<const std::size_t> b) {
        t.reset();
        MlpTapeNodes nodes = mlp_emit_leaves(t, field.widths, field.theta, true);
        FieldEmit f = [&nodes](Tape& t2, NodeId x) { return mlp_emit_forward(t2, nodes, x); };
        NodeId acc = t.leaf(0.0);
        for (std::size_t k : b) {
          NodeId pred = emit_flow(t, f, t.leaf(p.x[p.start[k]]), set.dt_obs, substeps);
          acc = t.add(acc, t.square(t.sub(t.leaf(p.x[p.target[k]]), pred)));
        }
        NodeId loss = t.mul(acc, t.leaf(1.0 / double(b.size())));
        detail::check_finite_loss(t.value(loss), "node_train");
        t.backward(loss);
        mlp_gather_grads(t, nodes, grad);
        adam.step(field.theta, grad);
      });
    }
  }
}

// Bayesian variant: one weight draw per minibatch, KL spread over batches.
inline void node_train(BayesMlp& field, const TrajectorySet& set, const FitConfig& cfg,
                       int substeps = 10) {
  const PairList p = build_pairs(set);
  Rng rng(derive_seed(cfg.seed, 0x6e6f6462));
  const std::size_t np = field.mu.size();
  Adam adam_mu(np, {.lr = cfg.lr}), adam_rho(np, {.lr = cfg.lr});
  const double num_batches = std::ceil(double(p.n_pairs()) / double(cfg.batch));
  std::vector<std::size_t> idx(p.n_pairs());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> gmu(np), grho(np);
  Tape t;

  for (const LrStage& stage : cfg.schedule()) {
    adam_mu.set_lr(stage.lr);
    adam_rho.set_lr(stage.lr);
    for (int e = 0; e < stage.epochs; ++e) {
      detail::epoch_batches(idx, cfg.batch, rng, [&](std::span<const std::size_t> b) {
        t.reset();
        BayesSampleNodes s = bayes_emit_sample(t, field, rng);
        FieldEmit f = [&s](Tape& t2, NodeId x) { return mlp_emit_forward(t2, s.net, x); };
        NodeId acc = t.leaf(0.5 * std::log(2.0 * std::numbers::pi) * double(b.size()));
        NodeId half = t.leaf(0.5);
        for (std::size_t k : b) {
          NodeId pred = emit_flow(t, f, t.leaf(p.x[p.start[k]]), set.dt_obs, substeps);
          acc = t.add(acc, t.mul(t.square(t.sub(t.leaf(p.x[p.target[k]]), pred)), half));
        }
        NodeId loss = t.add(t.mul(s.kl, t.leaf(1.0 / num_batches)), acc);
        detail::check_finite_loss(t.value(loss), "node_train");
        t.backward(loss);
        bayes_gather_grads(t, s, gmu, grho);
        adam_mu.step(field.mu, gmu);
        adam_rho.step(field.rho, grho);
      });
    }
  }
}

struct OdeDvaState {
  std::vector<double> eps_hat;       // one per stored observation point
  std::vector<std::size_t> offsets;  // first flat index per trajectory
  VarianceHead sigma_head;
  VarianceHead va_head;
  Segmentation seg;

  double noise_variance() const { return sigma_head.variance_at(0.0); }
};

struct OdeBatchNodes {
  std::vector<std::size_t> ids;      // distinct flat point ids, emission order
  std::vector<NodeId> eps_leaves;    // parallel to ids
  NodeId loss = 0;
};

// Pairwise denoising loss: both endpoints of a pair are corrected by their
// shared eps entries before the flow bridges them. An observation used by
// two pairs in the batch gets a single leaf, so its gradient accumulates
// both contributions.
inline OdeBatchNodes emit_ode_dva_loss(Tape& t, const HeadTapeNodes& va,
                                       const HeadTapeNodes& sigma, const FieldEmit& f,
                                       std::span<const double> xs,
                                       std::span<const std::size_t> starts,
                                       std::span<const std::size_t> targets,
                                       std::span<const double> eps_values, double dt_obs,
                                       int substeps) {
  if (!va.is_scalar || !sigma.is_scalar)
    throw std::invalid_argument("ode denoising uses scalar heads");
  OdeBatchNodes out;
  std::unordered_map<std::size_t, std::size_t> local;
  auto eps_leaf = [&](std::size_t id) {
    auto it = local.find(id);
    if (it != local.end()) return out.eps_leaves[it->second];
    NodeId leaf = t.leaf(eps_values[id], true);
    local.emplace(id, out.ids.size());
    out.ids.push_back(id);
    out.eps_leaves.push_back(leaf);
    return leaf;
  };

  NodeId half = t.leaf(0.5);
  NodeId sig_eps = t.exp(t.mul(sigma.scalar_leaf, half));
  NodeId inv_v = t.exp(t.neg(va.scalar_leaf));
  NodeId acc = t.leaf(0.0);
  for (std::size_t i = 0; i < starts.size(); ++i) {
    NodeId x0 = t.sub(t.leaf(xs[starts[i]]), t.mul(eps_leaf(starts[i]), sig_eps));
    NodeId x1 = t.sub(t.leaf(xs[targets[i]]), t.mul(eps_leaf(targets[i]), sig_eps));
    NodeId d = t.sub(x1, emit_flow(t, f, x0, dt_obs, substeps));
    acc = t.add(acc, t.add(t.mul(t.mul(t.square(d), half), inv_v),
                           t.mul(va.scalar_leaf, half)));
  }
  out.loss = t.mul(acc, t.leaf(1.0 / double(starts.size())));
  return out;
}

inline OdeDvaState ode_dva(const FieldRealize& realize, const TrajectorySet& set,
                           const UqConfig& cfg, int substeps = 10) {
  const PairList p = build_pairs(set);
  const std::size_t m = p.n_points();
  Rng rng(derive_seed(cfg.seed, 0x6f646476));

  OdeDvaState st;
  st.offsets = p.offsets;
  st.seg = Segmentation::build(p.x, 1);
  st.eps_hat.resize(m);
  rng.fill_gaussian(st.eps_hat);
  normalize(st.eps_hat, st.seg);
  check_normalized(st.eps_hat, st.seg);
  st.sigma_head = VarianceHead::scalar();
  st.va_head = VarianceHead::scalar();

  Adam adam_va(1, {.lr = cfg.lr}), adam_sig(1, {.lr = cfg.lr});
  SparseAdam adam_eps(m, {.lr = cfg.lr});
  std::vector<std::size_t> idx(p.n_pairs());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> gva(1), gsig(1), geps;
  std::vector<std::size_t> bs, bt;
  Tape t;

  for (const LrStage& stage : cfg.schedule()) {
    adam_va.set_lr(stage.lr);
    adam_sig.set_lr(stage.lr);
    adam_eps.set_lr(stage.lr);
    for (int e = 0; e < stage.epochs; ++e) {
      detail::epoch_batches(idx, cfg.batch, rng, [&](std::span<const std::size_t> b) {
        bs.clear();
        bt.clear();
        for (std::size_t k : b) {
          bs.push_back(p.start[k]);
          bt.push_back(p.target[k]);
        }
        t.reset();
        HeadTapeNodes hv = head_emit_leaves(t, st.va_head, true);
        HeadTapeNodes hs = head_emit_leaves(t, st.sigma_head, true);
        FieldEmit f = realize(t, rng);
        OdeBatchNodes bn =
            emit_ode_dva_loss(t, hv, hs, f, p.x, bs, bt, st.eps_hat, set.dt_obs, substeps);
        detail::check_finite_loss(t.value(bn.loss), "ode_dva");
        t.backward(bn.loss);
        gva[0] = t.grad(hv.scalar_leaf);
        gsig[0] = t.grad(hs.scalar_leaf);
        geps.resize(bn.ids.size());
        for (std::size_t k = 0; k < bn.ids.size(); ++k) geps[k] = t.grad(bn.eps_leaves[k]);
        if (cfg.optimizer == UqConfig::Opt::Gd) {
          detail::gd_step(adam_va.lr(), st.va_head.params(), gva);
          detail::gd_step(adam_sig.lr(), st.sigma_head.params(), gsig);
          detail::gd_step_eps(adam_eps.lr(), bn.ids, st.eps_hat, geps);
        } else {
          adam_va.step(st.va_head.params(), gva);
          adam_sig.step(st.sigma_head.params(), gsig);
          adam_eps.step(bn.ids, st.eps_hat, geps);
        }
        st.va_head.clamp_params();
        st.sigma_head.clamp_params();
      });
      normalize(st.eps_hat, st.seg);
      check_normalized(st.eps_hat, st.seg);
    }
  }
  return st;
}

}  // namespace dva
