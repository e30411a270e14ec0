#pragma once

#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "dva/bayes.hpp"
#include "dva/mlp.hpp"
#include "dva/rng.hpp"

namespace dva {

struct Prediction {
  double mean = 0.0;
  double epistemic_var = 0.0;
  int n_samples = 0;
};

// Uniform contract over prediction models: Monte-Carlo predictive mean and
// variance, plus single stochastic realizations for the variance trainers,
// which treat the predictor as frozen.
class Predictor {
 public:
  virtual ~Predictor() = default;

  virtual Prediction predict(double x, int n_samples, Rng& rng) const = 0;

  // One realization of the stochastic model evaluated over xs.
  virtual void sample_mu(Rng& rng, std::span<const double> xs, std::span<double> out) const = 0;

  // One realization as a concrete feed-forward net, for losses that need the
  // predictor on the tape. Returns false when no such form exists.
  virtual bool realize_mlp(Rng&, std::vector<double>&, MlpView&) const { return false; }

  virtual int default_samples() const { return 1; }
};

class MlpPredictor : public Predictor {
 public:
  explicit MlpPredictor(Mlp net) : net_(std::move(net)) {}
  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }

  Prediction predict(double x, int, Rng&) const override {
    return {net_.forward1(x), 0.0, 1};
  }
  void sample_mu(Rng&, std::span<const double> xs, std::span<double> out) const override {
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = net_.forward1(xs[i]);
  }
  bool realize_mlp(Rng&, std::vector<double>& buf, MlpView& view) const override {
    buf = net_.theta;
    view = {net_.widths, buf};
    return true;
  }

 private:
  Mlp net_;
};

class EnsemblePredictor : public Predictor {
 public:
  explicit EnsemblePredictor(std::vector<Mlp> members) : members_(std::move(members)) {
    if (members_.size() < 2) throw std::invalid_argument("ensemble: need at least 2 members");
  }
  const std::vector<Mlp>& members() const { return members_; }
  std::vector<Mlp>& members() { return members_; }

  // n_samples is forced to the member count: the mean is the exact average
  // of member outputs, the variance their population variance.
  Prediction predict(double x, int, Rng&) const override {
    double mean = 0.0;
    for (const Mlp& m : members_) mean += m.forward1(x);
    mean /= double(members_.size());
    double var = 0.0;
    for (const Mlp& m : members_) {
      const double d = m.forward1(x) - mean;
      var += d * d;
    }
    var /= double(members_.size());
    return {mean, var, int(members_.size())};
  }
  void sample_mu(Rng& rng, std::span<const double> xs, std::span<double> out) const override {
    const Mlp& m = members_[rng.below(members_.size())];
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = m.forward1(xs[i]);
  }
  bool realize_mlp(Rng& rng, std::vector<double>& buf, MlpView& view) const override {
    const Mlp& m = members_[rng.below(members_.size())];
    buf = m.theta;
    view = {m.widths, buf};
    return true;
  }
  int default_samples() const override { return int(members_.size()); }

 private:
  std::vector<Mlp> members_;
};

class BayesPredictor : public Predictor {
 public:
  explicit BayesPredictor(BayesMlp net) : net_(std::move(net)) {}
  const BayesMlp& net() const { return net_; }
  BayesMlp& net() { return net_; }

  Prediction predict(double x, int n_samples, Rng& rng) const override {
    if (n_samples < 1) throw std::invalid_argument("predict: n_samples must be positive");
    thread_local std::vector<double> w, ys;
    ys.resize(n_samples);
    double mean = 0.0;
    for (int s = 0; s < n_samples; ++s) {
      net_.sample_flat(rng, w);
      ys[s] = net_.view_of(w).forward1(x);
      mean += ys[s];
    }
    mean /= double(n_samples);
    double var = 0.0;
    for (int s = 0; s < n_samples; ++s) var += (ys[s] - mean) * (ys[s] - mean);
    var /= double(n_samples);
    return {mean, var, n_samples};
  }
  void sample_mu(Rng& rng, std::span<const double> xs, std::span<double> out) const override {
    thread_local std::vector<double> w;
    net_.sample_flat(rng, w);
    MlpView v = net_.view_of(w);
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = v.forward1(xs[i]);
  }
  bool realize_mlp(Rng& rng, std::vector<double>& buf, MlpView& view) const override {
    net_.sample_flat(rng, buf);
    view = {net_.widths, buf};
    return true;
  }
  int default_samples() const override { return 5; }

 private:
  BayesMlp net_;
};

// An arbitrary fixed function posing as a deterministic predictor; used by
// bias studies where the regression function is pinned by construction.
class FunctionPredictor : public Predictor {
 public:
  explicit FunctionPredictor(std::function<double(double)> f) : f_(std::move(f)) {}

  Prediction predict(double x, int, Rng&) const override { return {f_(x), 0.0, 1}; }
  void sample_mu(Rng&, std::span<const double> xs, std::span<double> out) const override {
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f_(xs[i]);
  }

 private:
  std::function<double(double)> f_;
};

}  // namespace dva
