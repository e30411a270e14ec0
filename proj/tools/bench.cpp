// Rough single-thread timings of the hot training loops; not a test.
#include <chrono>
#include <cstdio>
#include <numeric>
#include <vector>

#include "dva/adam.hpp"
#include "dva/bayes.hpp"
#include "dva/mlp.hpp"
#include "dva/rng.hpp"
#include "dva/tape.hpp"

using namespace dva;
using Clock = std::chrono::steady_clock;

static double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

int main() {
  Rng rng(1);
  Mlp net = Mlp::init({1, 100, 1}, 2);
  std::vector<double> xs(100), ys(100);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xs[i] = rng.uniform(1.0, 9.0);
    ys[i] = xs[i] * (1.0 + std::sin(xs[i]));
  }

  {  // plain forward throughput
    auto t0 = Clock::now();
    double sink = 0.0;
    const int reps = 200000;
    for (int r = 0; r < reps; ++r) sink += net.forward1(xs[r % 100]);
    std::printf("plain forward1: %.3f us/call (sink %.2f)\n", 1000.0 * ms_since(t0) / reps, sink);
  }

  {  // MSE batch step: emit + backward + adam
    Tape t;
    Adam adam(net.theta.size());
    std::vector<double> grad(net.theta.size());
    auto t0 = Clock::now();
    const int reps = 500;
    for (int r = 0; r < reps; ++r) {
      t.reset();
      MlpTapeNodes nodes = mlp_emit_leaves(t, net.widths, net.theta, true);
      NodeId acc = t.leaf(0.0);
      for (std::size_t i = 0; i < 100; ++i) {
        NodeId f = mlp_emit_forward(t, nodes, t.leaf(std::span(&xs[i], 1)));
        acc = t.add(acc, t.square(t.sub(f, t.leaf(ys[i]))));
      }
      t.backward(t.mul(acc, t.leaf(0.01)));
      std::size_t off = 0;
      for (std::size_t l = 0; l < nodes.weights.size(); ++l) {
        for (double g : t.grad_span(nodes.weights[l])) grad[off++] = g;
        for (double g : t.grad_span(nodes.biases[l])) grad[off++] = g;
      }
      adam.step(net.theta, grad);
    }
    std::printf("mse batch step (B=100): %.3f ms  -> 2000 steps = %.1f s\n",
                ms_since(t0) / reps, 2.0 * ms_since(t0) / reps);
  }

  {  // ELBO batch step
    BayesMlp bnet = BayesMlp::init({1, 100, 1}, 3);
    Tape t;
    Adam am(bnet.param_count()), ar(bnet.param_count());
    std::vector<double> gmu(bnet.param_count()), grho(bnet.param_count());
    auto t0 = Clock::now();
    const int reps = 300;
    for (int r = 0; r < reps; ++r) {
      t.reset();
      BayesSampleNodes s = bayes_emit_sample(t, bnet, rng);
      NodeId acc = t.leaf(0.0);
      for (std::size_t i = 0; i < 100; ++i) {
        NodeId f = mlp_emit_forward(t, s.net, t.leaf(std::span(&xs[i], 1)));
        acc = t.add(acc, t.mul(t.square(t.sub(f, t.leaf(ys[i]))), t.leaf(0.5)));
      }
      t.backward(t.add(t.mul(s.kl, t.leaf(0.1)), acc));
      bayes_gather_grads(t, s, gmu, grho);
      am.step(bnet.mu, gmu);
      ar.step(bnet.rho, grho);
    }
    std::printf("elbo batch step (B=100): %.3f ms -> 2000 steps = %.1f s\n",
                ms_since(t0) / reps, 2.0 * ms_since(t0) / reps);
  }

  // RK4 one-step flow batch: field constant on tape, gradient w.r.t. inputs
  for (int substeps : {2, 3, 4, 10}) {
    Tape t;
    const double dt = 0.1;
    auto t0 = Clock::now();
    const int reps = 50;
    double sink = 0.0;
    for (int r = 0; r < reps; ++r) {
      t.reset();
      MlpTapeNodes nodes = mlp_emit_leaves(t, net.widths, net.theta, false);
      auto field = [&](NodeId x) { return mlp_emit_forward(t, nodes, x); };
      NodeId acc = t.leaf(0.0);
      const double h = dt / substeps;
      for (std::size_t i = 0; i < 100; ++i) {
        NodeId x = t.leaf(std::span(&xs[i], 1), true);
        for (int s = 0; s < substeps; ++s) {
          NodeId k1 = field(x);
          NodeId k2 = field(t.add(x, t.mul(k1, t.leaf(h / 2))));
          NodeId k3 = field(t.add(x, t.mul(k2, t.leaf(h / 2))));
          NodeId k4 = field(t.add(x, t.mul(k3, t.leaf(h))));
          NodeId sum = t.add(t.add(k1, t.mul(k2, t.leaf(2.0))),
                             t.add(t.mul(k3, t.leaf(2.0)), k4));
          x = t.add(x, t.mul(sum, t.leaf(h / 6.0)));
        }
        acc = t.add(acc, t.square(t.sub(x, t.leaf(ys[i]))));
      }
      NodeId loss = t.mul(acc, t.leaf(0.01));
      sink += t.value(loss);
      t.backward(loss);
    }
    std::printf(
        "flow batch step (B=100 pairs, substeps=%d): %.2f ms -> 10000 steps = %.0f s (sink %.1f, "
        "nodes %zu)\n",
        substeps, ms_since(t0) / reps, 10.0 * ms_since(t0) / reps, sink, t.size());
  }
  return 0;
}
