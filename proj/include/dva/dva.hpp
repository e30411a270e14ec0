#pragma once

#include <cmath>
#include <cstdint>
#include <mutex>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "dva/adam.hpp"
#include "dva/data_view.hpp"
#include "dva/heads.hpp"
#include "dva/predictor.hpp"
#include "dva/rng.hpp"
#include "dva/segmentation.hpp"
#include "dva/tape.hpp"
#include "dva/train.hpp"

namespace dva {

struct UqConfig {
  // Plain gradient descent is the reference mode for stationarity checks;
  // Adam's per-coordinate step normalization can stall the eps bank short of
  // the constrained optimum when the mean residual is large relative to its
  // spread, while descent with true magnitudes converges to it.
  enum class Opt { Adam, Gd };

  double lr = 0.01;
  int epochs = 200;
  std::size_t batch = 100;
  std::size_t segments = 1;   // G; 1 = global normalization
  bool network_heads = false; // x-dependent heads for heteroscedastic noise
  int n_model_samples = 0;    // input-noise variant; 0 = predictor default
  Opt optimizer = Opt::Adam;
  std::uint64_t seed = 0;
  std::vector<LrStage> stages;

  std::vector<LrStage> schedule() const {
    return stages.empty() ? std::vector<LrStage>{{epochs, lr}} : stages;
  }
};

// Trained denoising state: one normalized noise estimate per example, the
// noise-scale head (theta3) and the residual-variance head (theta2).
struct DvaState {
  std::vector<double> eps_hat;
  VarianceHead sigma_head;
  VarianceHead va_head;
  Segmentation seg;

  double noise_variance() const { return sigma_head.variance_at(0.0); }
  double noise_variance_at(double x) const { return sigma_head.variance_at(x); }
};

// Running record of the post-normalization constraint checks. Violations
// indicate a broken projection, so they also abort the offending run.
struct NormAudit {
  long checks = 0;
  long violations = 0;
  double worst_mean = 0.0;
  double worst_var_dev = 0.0;
};

inline NormAudit& norm_audit() {
  static NormAudit a;
  return a;
}

inline void check_normalized(std::span<const double> eps, const Segmentation& seg) {
  const SegmentMoments m = segment_moments(eps, seg);
  static std::mutex audit_mutex;
  std::lock_guard<std::mutex> lock(audit_mutex);
  NormAudit& a = norm_audit();
  ++a.checks;
  for (std::size_t g = 0; g < seg.G; ++g) {
    const double mean_dev = std::fabs(m.mean[g]);
    const double var_dev = std::fabs(m.var[g] - 1.0);
    a.worst_mean = std::max(a.worst_mean, mean_dev);
    a.worst_var_dev = std::max(a.worst_var_dev, var_dev);
    if (mean_dev > 1e-9 || var_dev > 1e-9) {
      ++a.violations;
      throw std::logic_error("normalization constraint violated after projection");
    }
  }
}

// Mean over the batch of r^2/(2 sigma2(x)) + ln(sigma2(x))/2 with the
// residuals held constant.
inline NodeId emit_va_loss(Tape& t, const HeadTapeNodes& va, std::span<const double> xs,
                           std::span<const double> residuals) {
  NodeId half = t.leaf(0.5);
  NodeId acc = t.leaf(0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    NodeId lv = head_log_var(t, va, t.leaf(std::span(&xs[i], 1)));
    NodeId fit = t.mul(t.leaf(0.5 * residuals[i] * residuals[i]), t.exp(t.neg(lv)));
    acc = t.add(acc, t.add(fit, t.mul(lv, half)));
  }
  return t.mul(acc, t.leaf(1.0 / double(xs.size())));
}

struct DvaBatchNodes {
  std::vector<NodeId> eps_leaves;
  NodeId loss;
};

// Mean over the batch of (y - eps*sigma_eps(x) - mu)^2/(2 sigma2(x)) +
// ln(sigma2(x))/2. The eps leaves are returned so the caller can read their
// gradients; everything else about the batch is constant.
inline DvaBatchNodes emit_dva_label_loss(Tape& t, const HeadTapeNodes& va,
                                         const HeadTapeNodes& sigma,
                                         std::span<const double> xs, std::span<const double> ys,
                                         std::span<const double> mus,
                                         std::span<const double> eps_values) {
  DvaBatchNodes out;
  NodeId half = t.leaf(0.5);
  NodeId acc = t.leaf(0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    NodeId x = t.leaf(std::span(&xs[i], 1));
    NodeId eps = t.leaf(eps_values[i], true);
    out.eps_leaves.push_back(eps);
    NodeId sig_eps = t.exp(t.mul(head_log_var(t, sigma, x), half));
    NodeId d = t.sub(t.leaf(ys[i] - mus[i]), t.mul(eps, sig_eps));
    NodeId lv2 = head_log_var(t, va, x);
    NodeId fit = t.mul(t.mul(t.square(d), half), t.exp(t.neg(lv2)));
    acc = t.add(acc, t.add(fit, t.mul(lv2, half)));
  }
  out.loss = t.mul(acc, t.leaf(1.0 / double(xs.size())));
  return out;
}

inline double va_loss_value(std::span<const double> residuals, std::span<const double> xs,
                            const VarianceHead& head) {
  Tape t;
  HeadTapeNodes n = head_emit_leaves(t, head, false);
  return t.value(emit_va_loss(t, n, xs, residuals));
}

inline double dva_loss_value(std::span<const double> xs, std::span<const double> ys,
                             std::span<const double> mus, std::span<const double> eps,
                             const VarianceHead& va, const VarianceHead& sigma) {
  Tape t;
  HeadTapeNodes nv = head_emit_leaves(t, va, false);
  HeadTapeNodes ns = head_emit_leaves(t, sigma, false);
  return t.value(emit_dva_label_loss(t, nv, ns, xs, ys, mus, eps).loss);
}

namespace detail {

struct BatchScratch {
  std::vector<double> x, y, mu, eps, head_grad;
  std::vector<std::size_t> ids;
};

inline void gather_batch(DataView data, std::span<const std::size_t> b, BatchScratch& s) {
  s.x.resize(b.size());
  s.y.resize(b.size());
  s.mu.resize(b.size());
  s.ids.assign(b.begin(), b.end());
  for (std::size_t k = 0; k < b.size(); ++k) {
    s.x[k] = data.x[b[k]];
    s.y[k] = data.y[b[k]];
  }
}

inline void gd_step(double lr, std::span<double> theta, std::span<const double> grad) {
  for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= lr * grad[j];
}

// The loss averages over the batch, so each eps entry's gradient carries a
// 1/B factor; undoing it keeps the entry step size batch-size independent.
inline void gd_step_eps(double lr, std::span<const std::size_t> ids, std::vector<double>& eps,
                        std::span<const double> grad) {
  const double scale = lr * double(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) eps[ids[k]] -= scale * grad[k];
}

}  // namespace detail

// Fits the residual-variance head against a frozen predictor; one fresh
// predictor realization per minibatch.
inline VarianceHead va_train(const Predictor& pred, DataView data, const UqConfig& cfg) {
  if (data.size() == 0) throw std::invalid_argument("va_train: empty dataset");
  Rng rng(derive_seed(cfg.seed, 0x76615f74));
  VarianceHead head = cfg.network_heads ? VarianceHead::network(derive_seed(cfg.seed, 0x686432))
                                        : VarianceHead::scalar();
  Adam adam(head.params().size(), {.lr = cfg.lr});
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  detail::BatchScratch s;
  s.head_grad.resize(head.params().size());
  std::vector<double> resid;
  Tape t;

  for (const LrStage& stage : cfg.schedule()) {
    adam.set_lr(stage.lr);
    for (int e = 0; e < stage.epochs; ++e) {
      detail::epoch_batches(idx, cfg.batch, rng, [&](std::span<const std::size_t> b) {
        detail::gather_batch(data, b, s);
        pred.sample_mu(rng, s.x, s.mu);
        resid.resize(b.size());
        for (std::size_t k = 0; k < b.size(); ++k) resid[k] = s.y[k] - s.mu[k];
        t.reset();
        HeadTapeNodes hn = head_emit_leaves(t, head, true);
        NodeId loss = emit_va_loss(t, hn, s.x, resid);
        detail::check_finite_loss(t.value(loss), "va_train");
        t.backward(loss);
        head_gather_grads(t, hn, s.head_grad);
        if (cfg.optimizer == UqConfig::Opt::Gd)
          detail::gd_step(adam.lr(), head.params(), s.head_grad);
        else
          adam.step(head.params(), s.head_grad);
        head.clamp_params();
      });
    }
  }
  return head;
}

// Label-noise denoising: alternates minibatch Adam steps on theta2, theta3
// and the batch's eps entries with a per-epoch normalization projection.
inline DvaState dva_train_label(const Predictor& pred, DataView data, const UqConfig& cfg) {
  const std::size_t m = data.size();
  if (m == 0) throw std::invalid_argument("dva_train_label: empty dataset");
  Rng rng(derive_seed(cfg.seed, 0x6476615f));

  DvaState st;
  st.seg = Segmentation::build(data.x, cfg.segments);
  st.eps_hat.resize(m);
  rng.fill_gaussian(st.eps_hat);
  normalize(st.eps_hat, st.seg);
  check_normalized(st.eps_hat, st.seg);
  st.va_head = cfg.network_heads ? VarianceHead::network(derive_seed(cfg.seed, 0x683261))
                                 : VarianceHead::scalar();
  st.sigma_head = cfg.network_heads ? VarianceHead::network(derive_seed(cfg.seed, 0x683361))
                                    : VarianceHead::scalar();

  Adam adam_va(st.va_head.params().size(), {.lr = cfg.lr});
  Adam adam_sig(st.sigma_head.params().size(), {.lr = cfg.lr});
  SparseAdam adam_eps(m, {.lr = cfg.lr});
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  detail::BatchScratch s;
  std::vector<double> gva(st.va_head.params().size()), gsig(st.sigma_head.params().size());
  std::vector<double> geps;
  Tape t;

  for (const LrStage& stage : cfg.schedule()) {
    adam_va.set_lr(stage.lr);
    adam_sig.set_lr(stage.lr);
    adam_eps.set_lr(stage.lr);
    for (int e = 0; e < stage.epochs; ++e) {
      detail::epoch_batches(idx, cfg.batch, rng, [&](std::span<const std::size_t> b) {
        detail::gather_batch(data, b, s);
        pred.sample_mu(rng, s.x, s.mu);
        s.eps.resize(b.size());
        for (std::size_t k = 0; k < b.size(); ++k) s.eps[k] = st.eps_hat[b[k]];
        t.reset();
        HeadTapeNodes hv = head_emit_leaves(t, st.va_head, true);
        HeadTapeNodes hs = head_emit_leaves(t, st.sigma_head, true);
        DvaBatchNodes batch = emit_dva_label_loss(t, hv, hs, s.x, s.y, s.mu, s.eps);
        detail::check_finite_loss(t.value(batch.loss), "dva_train_label");
        t.backward(batch.loss);
        head_gather_grads(t, hv, gva);
        head_gather_grads(t, hs, gsig);
        geps.resize(b.size());
        for (std::size_t k = 0; k < b.size(); ++k) geps[k] = t.grad(batch.eps_leaves[k]);
        if (cfg.optimizer == UqConfig::Opt::Gd) {
          detail::gd_step(adam_va.lr(), st.va_head.params(), gva);
          detail::gd_step(adam_sig.lr(), st.sigma_head.params(), gsig);
          detail::gd_step_eps(adam_eps.lr(), s.ids, st.eps_hat, geps);
        } else {
          adam_va.step(st.va_head.params(), gva);
          adam_sig.step(st.sigma_head.params(), gsig);
          adam_eps.step(s.ids, st.eps_hat, geps);
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

// Input-noise denoising: labels treated as clean, the model is sampled
// n times per batch and evaluated at the denoised inputs; plain squared
// error, global normalization, scalar noise head, no residual-variance head.
inline DvaState dva_train_input(const Predictor& pred, DataView data, const UqConfig& cfg) {
  const std::size_t m = data.size();
  if (m == 0) throw std::invalid_argument("dva_train_input: empty dataset");
  Rng rng(derive_seed(cfg.seed, 0x696e7075));

  DvaState st;
  st.seg = Segmentation::build(data.x, 1);
  st.eps_hat.resize(m);
  rng.fill_gaussian(st.eps_hat);
  normalize(st.eps_hat, st.seg);
  check_normalized(st.eps_hat, st.seg);
  st.sigma_head = VarianceHead::scalar();
  st.va_head = VarianceHead::scalar();

  const int n_samples = cfg.n_model_samples > 0 ? cfg.n_model_samples : pred.default_samples();
  Adam adam_sig(1, {.lr = cfg.lr});
  SparseAdam adam_eps(m, {.lr = cfg.lr});
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  detail::BatchScratch s;
  std::vector<double> gsig(1);
  std::vector<double> geps;
  std::vector<std::vector<double>> wbufs(n_samples);
  Tape t;

  for (const LrStage& stage : cfg.schedule()) {
    adam_sig.set_lr(stage.lr);
    adam_eps.set_lr(stage.lr);
    for (int e = 0; e < stage.epochs; ++e) {
      detail::epoch_batches(idx, cfg.batch, rng, [&](std::span<const std::size_t> b) {
        detail::gather_batch(data, b, s);
        s.eps.resize(b.size());
        for (std::size_t k = 0; k < b.size(); ++k) s.eps[k] = st.eps_hat[b[k]];
        t.reset();
        HeadTapeNodes hs = head_emit_leaves(t, st.sigma_head, true);
        NodeId sig_eps = t.exp(t.mul(hs.scalar_leaf, t.leaf(0.5)));
        std::vector<MlpTapeNodes> nets(n_samples);
        for (int q = 0; q < n_samples; ++q) {
          MlpView view;
          if (!pred.realize_mlp(rng, wbufs[q], view))
            throw std::invalid_argument("dva_train_input: predictor has no sampled network form");
          nets[q] = mlp_emit_leaves(t, view.widths, view.theta, false);
        }
        NodeId acc = t.leaf(0.0);
        std::vector<NodeId> eps_leaves(b.size());
        for (std::size_t k = 0; k < b.size(); ++k) {
          eps_leaves[k] = t.leaf(s.eps[k], true);
          NodeId xin = t.sub(t.leaf(std::span(&s.x[k], 1)), t.mul(eps_leaves[k], sig_eps));
          for (int q = 0; q < n_samples; ++q) {
            NodeId f = mlp_emit_forward(t, nets[q], xin);
            acc = t.add(acc, t.square(t.sub(t.leaf(s.y[k]), f)));
          }
        }
        NodeId loss = t.mul(acc, t.leaf(1.0 / double(b.size() * std::size_t(n_samples))));
        detail::check_finite_loss(t.value(loss), "dva_train_input");
        t.backward(loss);
        gsig[0] = t.grad(hs.scalar_leaf);
        geps.resize(b.size());
        for (std::size_t k = 0; k < b.size(); ++k) geps[k] = t.grad(eps_leaves[k]);
        if (cfg.optimizer == UqConfig::Opt::Gd) {
          detail::gd_step(adam_sig.lr(), st.sigma_head.params(), gsig);
          detail::gd_step_eps(adam_eps.lr(), s.ids, st.eps_hat, geps);
        } else {
          adam_sig.step(st.sigma_head.params(), gsig);
          adam_eps.step(s.ids, st.eps_hat, geps);
        }
        st.sigma_head.clamp_params();
      });
      normalize(st.eps_hat, st.seg);
      check_normalized(st.eps_hat, st.seg);
    }
  }
  return st;
}

inline std::vector<double> denoise_labels(DataView data, const DvaState& st) {
  if (st.eps_hat.size() != data.size())
    throw std::invalid_argument("denoise: state and dataset sizes differ");
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    out[i] = data.y[i] - st.eps_hat[i] * st.sigma_head.sigma_at(data.x[i]);
  return out;
}

inline std::vector<double> denoise_inputs(DataView data, const DvaState& st) {
  if (st.eps_hat.size() != data.size())
    throw std::invalid_argument("denoise: state and dataset sizes differ");
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    out[i] = data.x[i] - st.eps_hat[i] * st.sigma_head.sigma_at(data.x[i]);
  return out;
}

// Mean over an evaluation grid of the squared difference between an
// estimated variance curve and the true one.
template <class EstFn, class TrueFn>
double variance_grid_mse(EstFn&& est, TrueFn&& truth, double lo, double hi, std::size_t n = 1000) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = lo + (hi - lo) * (double(i) + 0.5) / double(n);
    const double d = est(x) - truth(x);
    acc += d * d;
  }
  return acc / double(n);
}

}  // namespace dva
