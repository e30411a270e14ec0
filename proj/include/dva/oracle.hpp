#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "dva/rng.hpp"

// Reference computations for validating the trainers. Everything here is a
// direct formula evaluation independent of the autodiff/optimizer stack, so
// a bug cannot be shared between an oracle and the implementation it checks.

namespace dva {

// Stationary value of the plain variance-attenuation objective for a frozen
// predictor: the mean squared residual.
inline double va_stationary(std::span<const double> residuals) {
  if (residuals.empty()) throw std::invalid_argument("va_stationary: need at least one residual");
  double acc = 0.0;
  for (double r : residuals) acc += r * r;
  return acc / double(residuals.size());
}

// Stationary value of the denoising objective: mean of squares minus squared
// mean, written exactly in this form so va_stationary(r) - dva_stationary(r)
// equals the squared mean bit-for-bit.
inline double dva_stationary(std::span<const double> residuals) {
  if (residuals.size() < 2) throw std::invalid_argument("dva_stationary: need M >= 2");
  double mean = 0.0;
  for (double r : residuals) mean += r;
  mean /= double(residuals.size());
  return va_stationary(residuals) - mean * mean;
}

// Unbiased sample variance of stored noise draws, the reference any
// estimator is ultimately compared against.
inline double sample_noise_variance(std::span<const double> draws) {
  if (draws.size() < 2) throw std::invalid_argument("sample_noise_variance: need M >= 2");
  double mean = 0.0;
  for (double d : draws) mean += d;
  mean /= double(draws.size());
  double acc = 0.0;
  for (double d : draws) acc += (d - mean) * (d - mean);
  return acc / double(draws.size() - 1);
}

struct BiasReport {
  double va_expected = 0.0;
  double va_se = 0.0;
  double dva_expected = 0.0;
  double dva_se = 0.0;
  std::size_t monte_carlo_samples = 0;
};

// Expected stationary estimates for a frozen predictor with bias b(x) against
// noise variance sigma2, inputs uniform on [lo, hi]. The attenuation estimate
// converges to sigma2 + E[b^2], the denoising estimate to
// (M-1)/M * (sigma2 + Var[b]).
inline BiasReport bias_report(double sigma2, const std::function<double(double)>& bias, double lo,
                              double hi, std::size_t m, std::size_t mc_samples,
                              std::uint64_t seed = 0) {
  if (sigma2 < 0.0) throw std::invalid_argument("bias_report: negative noise variance");
  if (m < 2) throw std::invalid_argument("bias_report: need M >= 2");
  if (mc_samples < 10000) throw std::invalid_argument("bias_report: need >= 1e4 samples");
  if (!(lo < hi)) throw std::invalid_argument("bias_report: empty input range");

  Rng rng(derive_seed(seed, 0x6f7261));
  std::vector<double> b(mc_samples);
  for (double& v : b) v = bias(rng.uniform(lo, hi));

  const double n = double(mc_samples);
  double mean_b = 0.0, mean_b2 = 0.0;
  for (double v : b) {
    mean_b += v;
    mean_b2 += v * v;
  }
  mean_b /= n;
  mean_b2 /= n;

  double var_b = 0.0, var_of_b2 = 0.0, var_of_dev2 = 0.0;
  for (double v : b) {
    const double dev2 = (v - mean_b) * (v - mean_b);
    var_b += dev2;
    var_of_b2 += (v * v - mean_b2) * (v * v - mean_b2);
    var_of_dev2 += dev2 * dev2;
  }
  var_b /= n - 1.0;
  var_of_b2 /= n - 1.0;
  var_of_dev2 = var_of_dev2 / (n - 1.0) - var_b * var_b * n / (n - 1.0);

  const double shrink = double(m - 1) / double(m);
  BiasReport rep;
  rep.va_expected = sigma2 + mean_b2;
  rep.va_se = std::sqrt(var_of_b2 / n);
  rep.dva_expected = shrink * (sigma2 + var_b);
  rep.dva_se = shrink * std::sqrt(std::max(var_of_dev2, 0.0) / n);
  rep.monte_carlo_samples = mc_samples;
  return rep;
}

struct KktResidualReport {
  double lambda1 = 0.0;
  double lambda2 = 0.0;          // vanishes at any stationary point
  double entry_residual = 0.0;   // worst per-observation stationarity violation
  double scale_residual = 0.0;   // noise-scale stationarity, averaged over M
  double variance_residual = 0.0;
};

// First-order optimality residuals of the constrained denoising problem for a
// candidate (eps_hat, sigma2_eps, v) against residuals y - mu. lambda1 is
// recovered from the summed per-observation condition; the scale condition is
// reported as a per-observation average so tolerances are comparable across M.
inline KktResidualReport kkt_residuals(std::span<const double> y, std::span<const double> mu,
                                       std::span<const double> eps_hat, double sigma2_eps,
                                       double v) {
  const std::size_t m = y.size();
  if (m < 2 || mu.size() != m || eps_hat.size() != m)
    throw std::invalid_argument("kkt_residuals: size mismatch");
  if (sigma2_eps < 0.0 || v <= 0.0)
    throw std::invalid_argument("kkt_residuals: variances out of range");

  const double s = std::sqrt(sigma2_eps);
  double mean_r = 0.0;
  for (std::size_t i = 0; i < m; ++i) mean_r += y[i] - mu[i];
  mean_r /= double(m);

  KktResidualReport rep;
  rep.lambda1 = s / v * mean_r;
  rep.lambda2 = 0.0;
  double sum_de = 0.0, mean_d2 = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = y[i] - mu[i] - eps_hat[i] * s;
    const double entry = -d * s / v + rep.lambda1;
    rep.entry_residual = std::max(rep.entry_residual, std::fabs(entry));
    sum_de += d * eps_hat[i];
    mean_d2 += d * d;
  }
  rep.scale_residual = std::fabs(sum_de / (v * double(m)));
  rep.variance_residual = std::fabs(mean_d2 / double(m) - v);
  return rep;
}

struct DvaClosedForm {
  std::vector<double> eps_hat;
  double sigma2_eps = 0.0;
  double v = 0.0;
};

// The constrained problem's closed-form stationary point for a frozen
// predictor: normalized centered residuals, their population variance as the
// noise scale, and the squared mean residual as the attenuation floor.
inline DvaClosedForm dva_closed_form(std::span<const double> y, std::span<const double> mu) {
  const std::size_t m = y.size();
  if (m < 2 || mu.size() != m) throw std::invalid_argument("dva_closed_form: size mismatch");
  double mean_r = 0.0;
  for (std::size_t i = 0; i < m; ++i) mean_r += y[i] - mu[i];
  mean_r /= double(m);

  DvaClosedForm cf;
  double pv = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double c = y[i] - mu[i] - mean_r;
    pv += c * c;
  }
  pv /= double(m);
  if (pv <= 0.0)
    throw std::invalid_argument("dva_closed_form: constant residuals have no noise direction");
  cf.sigma2_eps = pv;
  cf.v = mean_r * mean_r;
  const double s = std::sqrt(pv);
  cf.eps_hat.resize(m);
  for (std::size_t i = 0; i < m; ++i) cf.eps_hat[i] = (y[i] - mu[i] - mean_r) / s;
  return cf;
}

}  // namespace dva
