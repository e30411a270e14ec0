#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "dva/dva.hpp"
#include "dva/grad_check.hpp"
#include "dva/predictor.hpp"
#include "dva/rng.hpp"
#include "dva/segmentation.hpp"

using namespace dva;

namespace {

double pop_mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

double pop_var(std::span<const double> v) {
  const double m = pop_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / double(v.size());
}

double corr(std::span<const double> a, std::span<const double> b) {
  const double ma = pop_mean(a), mb = pop_mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

Mlp linear_net(double w, double b) {
  Mlp net;
  net.widths = {1, 1};
  net.theta = {w, b};
  return net;
}

void push_head_params(BuiltProgram& p, const HeadTapeNodes& n) {
  if (n.is_scalar) {
    p.params.push_back(n.scalar_leaf);
    return;
  }
  for (std::size_t l = 0; l < n.net.weights.size(); ++l) {
    p.params.push_back(n.net.weights[l]);
    p.params.push_back(n.net.biases[l]);
  }
}

}  // namespace

TEST_CASE("variance head parameterization") {
  VarianceHead h = VarianceHead::scalar(std::log(4.0));
  CHECK(h.variance_at(3.0) == Catch::Approx(4.0).epsilon(1e-12));
  CHECK(h.sigma_at(3.0) == Catch::Approx(2.0).epsilon(1e-12));
  CHECK(h.params().size() == 1);

  h.log_var = 50.0;
  h.clamp_params();
  CHECK(h.log_var == VarianceHead::kLogVarMax);
  h.log_var = -50.0;
  h.clamp_params();
  CHECK(h.log_var == VarianceHead::kLogVarMin);

  VarianceHead n;
  n.kind = VarianceHead::Kind::Network;
  n.net = linear_net(0.5, -1.0);
  CHECK(n.log_var_at(2.0) == Catch::Approx(0.0).margin(1e-15));
  CHECK(n.variance_at(4.0) == Catch::Approx(std::exp(1.0)).epsilon(1e-12));
  n.net = linear_net(100.0, 0.0);
  CHECK(n.log_var_at(5.0) == VarianceHead::kLogVarMax);

  VarianceHead net_head = VarianceHead::network(7, 100);
  CHECK(net_head.params().size() == 301);
}

TEST_CASE("rank segmentation groups by input value") {
  std::vector<double> x{5.0, 1.0, 9.0, 3.0};
  Segmentation seg = Segmentation::build(x, 2);
  CHECK(seg.G == 2);
  CHECK(seg.assign[1] == 0);
  CHECK(seg.assign[3] == 0);
  CHECK(seg.assign[0] == 1);
  CHECK(seg.assign[2] == 1);

  CHECK_THROWS_AS(Segmentation::build(std::vector<double>{1.0, 2.0, 3.0}, 2),
                  std::invalid_argument);
}

TEST_CASE("normalization projection hits the constraints exactly") {
  std::vector<double> x{1.0, 2.0, 3.0};
  Segmentation seg = Segmentation::build(x, 1);
  std::vector<double> eps{1.0, 2.0, 3.0};
  normalize(eps, seg);
  CHECK(eps[0] == Catch::Approx(-std::sqrt(1.5)).epsilon(1e-12));
  CHECK(eps[1] == Catch::Approx(0.0).margin(1e-15));
  CHECK(eps[2] == Catch::Approx(std::sqrt(1.5)).epsilon(1e-12));
  CHECK(pop_mean(eps) == Catch::Approx(0.0).margin(1e-15));
  CHECK(pop_var(eps) == Catch::Approx(1.0).epsilon(1e-14));

  std::vector<double> again = eps;
  normalize(again, seg);
  CHECK(again[0] == Catch::Approx(eps[0]).epsilon(1e-14));
  CHECK(again[2] == Catch::Approx(eps[2]).epsilon(1e-14));

  std::vector<double> x4{1.0, 2.0, 10.0, 20.0};
  Segmentation seg2 = Segmentation::build(x4, 2);
  std::vector<double> e4{1.0, 2.0, 10.0, 20.0};
  normalize(e4, seg2);
  CHECK(e4[0] == Catch::Approx(-1.0).epsilon(1e-12));
  CHECK(e4[1] == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(e4[2] == Catch::Approx(-1.0).epsilon(1e-12));
  CHECK(e4[3] == Catch::Approx(1.0).epsilon(1e-12));

  std::vector<double> flat{3.0, 3.0};
  Segmentation seg1 = Segmentation::build(std::vector<double>{1.0, 2.0}, 1);
  CHECK_THROWS_AS(normalize(flat, seg1), std::runtime_error);
}

TEST_CASE("attenuation loss values at pinned points") {
  VarianceHead unit = VarianceHead::scalar(0.0);
  std::vector<double> xs{1.0};
  std::vector<double> r0{0.0};
  CHECK(va_loss_value(r0, xs, unit) == Catch::Approx(0.0).margin(1e-15));
  std::vector<double> r1{1.0};
  CHECK(va_loss_value(r1, xs, unit) == Catch::Approx(0.5).epsilon(1e-14));

  std::vector<double> xs3{1.0, 2.0, 3.0};
  std::vector<double> r3{1.0, -1.0, 2.0};
  const double vstar = (1.0 + 1.0 + 4.0) / 3.0;
  VarianceHead opt = VarianceHead::scalar(std::log(vstar));
  const double at_opt = va_loss_value(r3, xs3, opt);
  CHECK(at_opt == Catch::Approx(0.5 + 0.5 * std::log(vstar)).epsilon(1e-12));
  VarianceHead lo = VarianceHead::scalar(std::log(vstar) - 0.1);
  VarianceHead hi = VarianceHead::scalar(std::log(vstar) + 0.1);
  CHECK(va_loss_value(r3, xs3, lo) > at_opt);
  CHECK(va_loss_value(r3, xs3, hi) > at_opt);

  // One sample by hand: y=2, mu=0.5, eps=0.8, sigma_eps=0.5, sigma2=2.
  std::vector<double> x1{1.3}, y1{2.0}, mu1{0.5}, e1{0.8};
  VarianceHead va = VarianceHead::scalar(std::log(2.0));
  VarianceHead sg = VarianceHead::scalar(std::log(0.25));
  const double d = 2.0 - 0.8 * 0.5 - 0.5;
  const double want = d * d / (2.0 * 2.0) + 0.5 * std::log(2.0);
  CHECK(dva_loss_value(x1, y1, mu1, e1, va, sg) == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("denoising loss with zeroed noise estimates reduces to the plain one") {
  Rng rng(31);
  const std::size_t m = 8;
  std::vector<double> xs(m), ys(m), mus(m), eps(m, 0.0), resid(m);
  for (std::size_t i = 0; i < m; ++i) {
    xs[i] = rng.uniform(0.2, 1.0);
    ys[i] = rng.uniform(-2.0, 2.0);
    mus[i] = rng.uniform(-1.0, 1.0);
    resid[i] = ys[i] - mus[i];
  }
  VarianceHead va = VarianceHead::network(91, 5);
  VarianceHead sg = VarianceHead::network(92, 5);
  CHECK(dva_loss_value(xs, ys, mus, eps, va, sg) ==
        Catch::Approx(va_loss_value(resid, xs, va)).epsilon(1e-12));
}

TEST_CASE("denoising loss gradients by hand for one sample") {
  const double y = 1.7, mu = 0.3, x = 0.9, e = -0.6, l2 = 0.4, l3 = -0.8;
  Tape t;
  VarianceHead va = VarianceHead::scalar(l2);
  VarianceHead sg = VarianceHead::scalar(l3);
  HeadTapeNodes hv = head_emit_leaves(t, va, true);
  HeadTapeNodes hs = head_emit_leaves(t, sg, true);
  std::vector<double> xs{x}, ys{y}, mus{mu}, eps{e};
  DvaBatchNodes b = emit_dva_label_loss(t, hv, hs, xs, ys, mus, eps);
  t.backward(b.loss);

  const double sig = std::exp(0.5 * l3);
  const double d = y - e * sig - mu;
  const double v = std::exp(l2);
  CHECK(t.grad(b.eps_leaves[0]) == Catch::Approx(-sig * d / v).epsilon(1e-12));
  CHECK(t.grad(hv.scalar_leaf) == Catch::Approx(-d * d / (2.0 * v) + 0.5).epsilon(1e-12));
  CHECK(t.grad(hs.scalar_leaf) == Catch::Approx(-0.5 * d * e * sig / v).epsilon(1e-12));
}

TEST_CASE("denoising loss gradients match finite differences, scalar heads") {
  Rng rng(777);
  const std::size_t m = 4;
  std::vector<double> xs(m), ys(m), mus(m);
  for (std::size_t i = 0; i < m; ++i) {
    xs[i] = rng.uniform(0.3, 1.0);
    ys[i] = rng.uniform(-1.5, 1.5);
    mus[i] = rng.uniform(-0.5, 0.5);
  }
  std::vector<double> theta(m + 2);
  for (std::size_t i = 0; i < m; ++i) theta[i] = rng.uniform(-1.0, 1.0);
  theta[m] = 0.3;
  theta[m + 1] = -0.4;

  auto build = [&](Tape& t, std::span<const double> th) {
    VarianceHead va = VarianceHead::scalar(th[m]);
    VarianceHead sg = VarianceHead::scalar(th[m + 1]);
    HeadTapeNodes hv = head_emit_leaves(t, va, true);
    HeadTapeNodes hs = head_emit_leaves(t, sg, true);
    DvaBatchNodes b = emit_dva_label_loss(t, hv, hs, xs, ys, mus, th.subspan(0, m));
    BuiltProgram p;
    p.output = b.loss;
    p.params = b.eps_leaves;
    push_head_params(p, hv);
    push_head_params(p, hs);
    return p;
  };
  GradCheckReport rep = grad_check(build, theta);
  INFO("max_err=" << rep.max_err << " at " << rep.worst_index);
  CHECK(rep.ok(1e-5));
}

TEST_CASE("denoising loss gradients match finite differences, network heads") {
  Rng rng(778);
  const std::size_t m = 4;
  const std::vector<std::size_t> widths{1, 3, 1};
  const std::size_t np = mlp_param_count(widths);
  std::vector<double> xs(m), ys(m), mus(m);
  for (std::size_t i = 0; i < m; ++i) {
    xs[i] = rng.uniform(0.2, 1.0);
    ys[i] = rng.uniform(-1.5, 1.5);
    mus[i] = rng.uniform(-0.5, 0.5);
  }
  std::vector<double> theta(m + 2 * np);
  for (std::size_t i = 0; i < m; ++i) theta[i] = rng.uniform(-1.0, 1.0);
  for (std::size_t i = m; i < theta.size(); ++i) theta[i] = rng.uniform(-0.8, 0.8);

  auto mk = [&](std::span<const double> slice) {
    VarianceHead h;
    h.kind = VarianceHead::Kind::Network;
    h.net.widths = widths;
    h.net.theta.assign(slice.begin(), slice.end());
    return h;
  };
  auto build = [&](Tape& t, std::span<const double> th) {
    VarianceHead va = mk(th.subspan(m, np));
    VarianceHead sg = mk(th.subspan(m + np, np));
    HeadTapeNodes hv = head_emit_leaves(t, va, true);
    HeadTapeNodes hs = head_emit_leaves(t, sg, true);
    DvaBatchNodes b = emit_dva_label_loss(t, hv, hs, xs, ys, mus, th.subspan(0, m));
    BuiltProgram p;
    p.output = b.loss;
    p.params = b.eps_leaves;
    push_head_params(p, hv);
    push_head_params(p, hs);
    return p;
  };
  GradCheckReport rep = grad_check(build, theta);
  INFO("max_err=" << rep.max_err << " at " << rep.worst_index);
  CHECK(rep.ok(1e-5));
}

TEST_CASE("plain variance training reaches the mean squared residual") {
  std::vector<double> x{1.0, 2.0, 3.0, 4.0, 5.0};
  std::vector<double> y{2.0, 1.0, 3.0, 2.5, 1.5};
  FunctionPredictor zero([](double) { return 0.0; });

  UqConfig cfg;
  cfg.batch = 5;
  cfg.seed = 11;
  cfg.stages = {{400, 0.05}, {200, 0.01}, {200, 0.003}, {200, 0.001}};
  VarianceHead head = va_train(zero, {x, y}, cfg);

  double msr = 0.0;
  for (double v : y) msr += v * v;
  msr /= double(y.size());
  CHECK(head.variance_at(0.0) == Catch::Approx(msr).epsilon(1e-3));
}

TEST_CASE("denoising training reaches the constrained stationary point") {
  std::vector<double> x{1.0, 2.0, 3.0, 4.0, 5.0};
  std::vector<double> y{1.2, -0.8, 2.0, -1.5, 0.6};
  FunctionPredictor zero([](double) { return 0.0; });

  UqConfig cfg;
  cfg.batch = 5;
  cfg.seed = 12;
  cfg.optimizer = UqConfig::Opt::Gd;
  cfg.stages = {{3000, 0.05}, {2000, 0.01}, {1000, 0.003}, {1000, 0.001}};
  DvaState st = dva_train_label(zero, {x, y}, cfg);

  const double rbar = pop_mean(y);
  const double rvar = pop_var(y);
  CHECK(st.sigma_head.variance_at(0.0) == Catch::Approx(rvar).epsilon(1e-2));
  CHECK(st.va_head.variance_at(0.0) == Catch::Approx(rbar * rbar).epsilon(1e-2));
  const double sig = std::sqrt(rvar);
  for (std::size_t i = 0; i < y.size(); ++i)
    CHECK(st.eps_hat[i] == Catch::Approx((y[i] - rbar) / sig).margin(2e-3));
  CHECK(pop_mean(st.eps_hat) == Catch::Approx(0.0).margin(1e-9));
  CHECK(pop_var(st.eps_hat) == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("attenuation overestimates and denoising removes the bias terms") {
  const long violations_before = norm_audit().violations;
  Rng rng(2024);
  const std::size_t m = 1000;
  std::vector<double> x(m), y(m), yc(m), r(m);
  for (std::size_t i = 0; i < m; ++i) {
    x[i] = rng.uniform(1.0, 9.0);
    yc[i] = 2.0 * x[i];
    y[i] = yc[i] + rng.gaussian();
  }
  // Frozen predictor with a deliberate linear bias of 0.1 x.
  FunctionPredictor biased([](double v) { return 2.1 * v; });
  for (std::size_t i = 0; i < m; ++i) r[i] = y[i] - 2.1 * x[i];
  const double msr = [&] {
    double s = 0.0;
    for (double v : r) s += v * v;
    return s / double(m);
  }();
  const double rvar = pop_var(r);
  const double rbar = pop_mean(r);

  UqConfig cfg;
  cfg.seed = 5;
  cfg.stages = {{150, 0.03}, {100, 0.01}, {100, 0.003}, {50, 0.001}};
  DataView data{x, y};
  VarianceHead va = va_train(biased, data, cfg);

  UqConfig gd = cfg;
  gd.optimizer = UqConfig::Opt::Gd;
  gd.batch = m;
  gd.stages = {{1200, 0.1}, {600, 0.03}, {400, 0.01}, {300, 0.003}};
  DvaState st = dva_train_label(biased, data, gd);

  const double va_est = va.variance_at(0.0);
  const double dva_est = st.sigma_head.variance_at(0.0);
  INFO("va=" << va_est << " target=" << msr << " dva=" << dva_est << " target=" << rvar);
  CHECK(va_est == Catch::Approx(msr).epsilon(0.02));
  CHECK(dva_est == Catch::Approx(rvar).epsilon(0.02));
  CHECK(st.va_head.variance_at(0.0) == Catch::Approx(rbar * rbar).margin(0.02));
  CHECK(va_est > dva_est + 0.1);

  std::vector<double> deno = denoise_labels(data, st);
  double mse_noisy = 0.0, mse_deno = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    mse_noisy += (y[i] - yc[i]) * (y[i] - yc[i]);
    mse_deno += (deno[i] - yc[i]) * (deno[i] - yc[i]);
  }
  INFO("mse noisy=" << mse_noisy / double(m) << " denoised=" << mse_deno / double(m));
  CHECK(mse_deno < 0.5 * mse_noisy);
  CHECK(norm_audit().violations == violations_before);
}

TEST_CASE("model spread inflates attenuation but not denoising") {
  Rng rng(4096);
  const std::size_t m = 800;
  std::vector<double> x(m), y(m), eps(m);
  for (std::size_t i = 0; i < m; ++i) {
    x[i] = rng.uniform(1.0, 9.0);
    eps[i] = rng.gaussian();
    y[i] = 2.0 * x[i] + eps[i];
  }
  // Two members straddling the truth: zero mean bias, spread 0.5.
  std::vector<Mlp> members{linear_net(2.0, 0.5), linear_net(2.0, -0.5)};
  EnsemblePredictor ens(std::move(members));

  UqConfig cfg;
  cfg.seed = 6;
  cfg.stages = {{300, 0.03}, {200, 0.01}, {150, 0.003}, {150, 0.001}};
  DataView data{x, y};
  VarianceHead va = va_train(ens, data, cfg);
  DvaState st = dva_train_label(ens, data, cfg);

  const double noise_var = pop_var(eps);
  const double va_est = va.variance_at(0.0);
  const double dva_est = st.sigma_head.variance_at(0.0);
  INFO("va=" << va_est << " dva=" << dva_est << " sample noise=" << noise_var);
  CHECK(va_est == Catch::Approx(noise_var + 0.25).margin(0.08));
  CHECK(dva_est == Catch::Approx(noise_var).margin(0.06));
  CHECK(va_est > dva_est + 0.15);
}

TEST_CASE("input-noise training recovers scale and per-example noise") {
  Rng rng(555);
  const std::size_t m = 400;
  const double a = 0.8;
  std::vector<double> xc(m), xo(m), y(m), xi(m);
  for (std::size_t i = 0; i < m; ++i) {
    xc[i] = rng.uniform(1.0, 9.0);
    xi[i] = rng.gaussian();
    xo[i] = xc[i] + a * xi[i];
    y[i] = 2.0 * xc[i];
  }
  MlpPredictor exact(linear_net(2.0, 0.0));

  UqConfig cfg;
  cfg.seed = 7;
  cfg.stages = {{500, 0.02}, {250, 0.01}, {150, 0.003}, {100, 0.001}};
  DataView data{xo, y};
  DvaState st = dva_train_input(exact, data, cfg);

  const double target_sigma = a * std::sqrt(pop_var(xi));
  INFO("sigma=" << st.sigma_head.sigma_at(0.0) << " target=" << target_sigma);
  CHECK(st.sigma_head.sigma_at(0.0) == Catch::Approx(target_sigma).epsilon(0.05));
  CHECK(corr(st.eps_hat, xi) > 0.98);

  std::vector<double> xd = denoise_inputs(data, st);
  double mse_noisy = 0.0, mse_deno = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    mse_noisy += (xo[i] - xc[i]) * (xo[i] - xc[i]);
    mse_deno += (xd[i] - xc[i]) * (xd[i] - xc[i]);
  }
  INFO("input mse noisy=" << mse_noisy / double(m) << " denoised=" << mse_deno / double(m));
  CHECK(mse_deno < 0.25 * mse_noisy);
}

TEST_CASE("segmented heteroscedastic recovery with network heads") {
  Rng rng(808);
  const std::size_t m = 1200;
  std::vector<double> x(m), y(m);
  for (std::size_t i = 0; i < m; ++i) {
    x[i] = rng.uniform(1.0, 9.0);
    const double sig = 0.5 * (1.0 + 0.1 * x[i]);
    y[i] = 2.0 * x[i] + sig * rng.gaussian();
  }
  FunctionPredictor truth([](double v) { return 2.0 * v; });

  UqConfig cfg;
  cfg.seed = 8;
  cfg.segments = 10;
  cfg.network_heads = true;
  cfg.stages = {{200, 0.01}, {100, 0.003}, {100, 0.001}};
  DvaState st = dva_train_label(truth, {x, y}, cfg);

  // The fitted variance curve should track the true one far better than the
  // best constant does.
  auto truth_var = [](double v) {
    const double s = 0.5 * (1.0 + 0.1 * v);
    return s * s;
  };
  const double fit_mse = variance_grid_mse(
      [&](double v) { return st.sigma_head.variance_at(v); }, truth_var, 1.0, 9.0);
  double avg_var = 0.0;
  for (std::size_t i = 0; i < 1000; ++i) avg_var += truth_var(1.0 + 8.0 * (double(i) + 0.5) / 1000.0);
  avg_var /= 1000.0;
  const double const_mse = variance_grid_mse([&](double) { return avg_var; }, truth_var, 1.0, 9.0);
  INFO("fit_mse=" << fit_mse << " const_mse=" << const_mse);
  CHECK(fit_mse < 0.5 * const_mse);
  CHECK(st.sigma_head.variance_at(2.0) < st.sigma_head.variance_at(8.0));
}

TEST_CASE("constraint audit flags tampered estimates") {
  std::vector<double> x{1.0, 2.0, 3.0, 4.0};
  Segmentation seg = Segmentation::build(x, 1);
  std::vector<double> eps{1.0, -0.3, 0.7, -1.4};
  normalize(eps, seg);
  const long checks_before = norm_audit().checks;
  const long violations_before = norm_audit().violations;
  CHECK_NOTHROW(check_normalized(eps, seg));
  CHECK(norm_audit().checks == checks_before + 1);
  CHECK(norm_audit().violations == violations_before);

  eps[0] += 1e-6;
  CHECK_THROWS_AS(check_normalized(eps, seg), std::logic_error);
  CHECK(norm_audit().violations == violations_before + 1);
}
