#pragma once

#include <span>
#include <string>
#include <vector>

#include "dva/dva.hpp"
#include "dva/grad_check.hpp"
#include "dva/mlp.hpp"
#include "dva/odeident.hpp"
#include "dva/rng.hpp"

// Randomized finite-difference sweep over the four differentiable program
// families: raw network forward passes, both variance losses, and the
// unrolled integrator flow. Inputs are drawn from ranges where central
// differences are well conditioned.

namespace dva {

struct GradFamilyResult {
  std::string family;
  int configs = 0;
  double tol = 0.0;
  double worst_err = 0.0;
  int worst_config = -1;
  bool ok = true;
};

struct GradSuiteReport {
  std::vector<GradFamilyResult> families;

  bool all_ok() const {
    for (const GradFamilyResult& f : families)
      if (!f.ok) return false;
    return !families.empty();
  }
};

namespace detail {

inline void push_mlp_params(BuiltProgram& p, const MlpTapeNodes& n) {
  for (std::size_t l = 0; l < n.weights.size(); ++l) {
    p.params.push_back(n.weights[l]);
    p.params.push_back(n.biases[l]);
  }
}

inline void push_head_params(BuiltProgram& p, const HeadTapeNodes& n) {
  if (n.is_scalar) {
    p.params.push_back(n.scalar_leaf);
    return;
  }
  for (std::size_t l = 0; l < n.net.weights.size(); ++l) {
    p.params.push_back(n.net.weights[l]);
    p.params.push_back(n.net.biases[l]);
  }
}

inline std::vector<std::size_t> random_widths(Rng& rng) {
  std::vector<std::size_t> w{1};
  const std::size_t depth = 1 + rng.below(2);
  for (std::size_t l = 0; l < depth; ++l) w.push_back(2 + rng.below(5));
  w.push_back(1);
  return w;
}

// Scalar with even probability, otherwise a small network head. Parameters
// land in `theta` and the matching emit+collect goes through `mk`.
struct HeadPlan {
  bool scalar = true;
  std::vector<std::size_t> widths;
  std::size_t param_count() const { return scalar ? 1 : mlp_param_count(widths); }

  static HeadPlan draw(Rng& rng) {
    HeadPlan p;
    p.scalar = rng.uniform() < 0.5;
    if (!p.scalar) p.widths = {1, 2 + rng.below(3), 1};
    return p;
  }

  VarianceHead materialize(std::span<const double> slice) const {
    if (scalar) return VarianceHead::scalar(slice[0]);
    VarianceHead h;
    h.kind = VarianceHead::Kind::Network;
    h.net.widths = widths;
    h.net.theta.assign(slice.begin(), slice.end());
    return h;
  }
};

}  // namespace detail

inline GradSuiteReport run_gradient_suite(int configs_per_family = 100, std::uint64_t seed = 0) {
  if (configs_per_family < 1) throw std::invalid_argument("gradient suite: need >= 1 config");
  GradSuiteReport report;

  auto record = [&](GradFamilyResult& fam, int cfg, const GradCheckReport& rep) {
    if (rep.max_err > fam.worst_err) {
      fam.worst_err = rep.max_err;
      fam.worst_config = cfg;
    }
    if (!rep.ok(fam.tol)) fam.ok = false;
  };

  {
    GradFamilyResult fam{"mlp_forward", configs_per_family, 1e-5};
    Rng rng(derive_seed(seed, 0x6766774d));
    for (int c = 0; c < configs_per_family; ++c) {
      const std::vector<std::size_t> widths = detail::random_widths(rng);
      const std::size_t np = mlp_param_count(widths);
      std::vector<double> theta(np + 1);
      for (std::size_t i = 0; i < np; ++i) theta[i] = rng.uniform(-0.8, 0.8);
      theta[np] = rng.uniform(0.2, 1.0);
      auto build = [&](Tape& t, std::span<const double> th) {
        MlpTapeNodes net = mlp_emit_leaves(t, widths, th.subspan(0, np), true);
        NodeId x = t.leaf(th[np], true);
        BuiltProgram p;
        p.output = mlp_emit_forward(t, net, x);
        detail::push_mlp_params(p, net);
        p.params.push_back(x);
        return p;
      };
      record(fam, c, grad_check(build, theta));
    }
    report.families.push_back(fam);
  }

  {
    GradFamilyResult fam{"va_loss", configs_per_family, 1e-5};
    Rng rng(derive_seed(seed, 0x67766120));
    for (int c = 0; c < configs_per_family; ++c) {
      const detail::HeadPlan plan = detail::HeadPlan::draw(rng);
      const std::size_t m = 2 + rng.below(3);
      std::vector<double> xs(m), rs(m);
      for (std::size_t i = 0; i < m; ++i) {
        xs[i] = rng.uniform(0.2, 1.0);
        rs[i] = rng.uniform(-1.5, 1.5);
      }
      std::vector<double> theta(plan.param_count());
      for (double& v : theta) v = plan.scalar ? rng.uniform(-1.0, 0.5) : rng.uniform(-0.8, 0.8);
      auto build = [&](Tape& t, std::span<const double> th) {
        HeadTapeNodes hv = head_emit_leaves(t, plan.materialize(th), true);
        BuiltProgram p;
        p.output = emit_va_loss(t, hv, xs, rs);
        detail::push_head_params(p, hv);
        return p;
      };
      record(fam, c, grad_check(build, theta));
    }
    report.families.push_back(fam);
  }

  {
    GradFamilyResult fam{"dva_loss", configs_per_family, 1e-5};
    Rng rng(derive_seed(seed, 0x67647661));
    for (int c = 0; c < configs_per_family; ++c) {
      const detail::HeadPlan va = detail::HeadPlan::draw(rng);
      const detail::HeadPlan sg = detail::HeadPlan::draw(rng);
      const std::size_t m = 2 + rng.below(3);
      std::vector<double> xs(m), ys(m), mus(m);
      for (std::size_t i = 0; i < m; ++i) {
        xs[i] = rng.uniform(0.2, 1.0);
        ys[i] = rng.uniform(-1.5, 1.5);
        mus[i] = rng.uniform(-0.5, 0.5);
      }
      const std::size_t nv = va.param_count(), ns = sg.param_count();
      std::vector<double> theta(m + nv + ns);
      for (std::size_t i = 0; i < m; ++i) theta[i] = rng.uniform(-1.0, 1.0);
      for (std::size_t i = m; i < m + nv; ++i)
        theta[i] = va.scalar ? rng.uniform(-1.0, 0.5) : rng.uniform(-0.8, 0.8);
      for (std::size_t i = m + nv; i < theta.size(); ++i)
        theta[i] = sg.scalar ? rng.uniform(-1.0, 0.5) : rng.uniform(-0.8, 0.8);
      auto build = [&](Tape& t, std::span<const double> th) {
        HeadTapeNodes hv = head_emit_leaves(t, va.materialize(th.subspan(m, nv)), true);
        HeadTapeNodes hs = head_emit_leaves(t, sg.materialize(th.subspan(m + nv, ns)), true);
        DvaBatchNodes b = emit_dva_label_loss(t, hv, hs, xs, ys, mus, th.subspan(0, m));
        BuiltProgram p;
        p.output = b.loss;
        p.params = b.eps_leaves;
        detail::push_head_params(p, hv);
        detail::push_head_params(p, hs);
        return p;
      };
      record(fam, c, grad_check(build, theta));
    }
    report.families.push_back(fam);
  }

  {
    GradFamilyResult fam{"one_step_flow", configs_per_family, 1e-4};
    Rng rng(derive_seed(seed, 0x67666c77));
    for (int c = 0; c < configs_per_family; ++c) {
      const std::vector<std::size_t> widths = detail::random_widths(rng);
      const std::size_t np = mlp_param_count(widths);
      const int substeps = 1 + int(rng.below(3));
      const double dt_obs = rng.uniform(0.05, 0.15);
      std::vector<double> theta(np + 1);
      for (std::size_t i = 0; i < np; ++i) theta[i] = rng.uniform(-0.8, 0.8);
      theta[np] = rng.uniform(0.2, 1.0);
      auto build = [&](Tape& t, std::span<const double> th) {
        MlpTapeNodes net = mlp_emit_leaves(t, widths, th.subspan(0, np), true);
        FieldEmit f = [&net](Tape& tt, NodeId v) { return mlp_emit_forward(tt, net, v); };
        NodeId x = t.leaf(th[np], true);
        BuiltProgram p;
        p.output = emit_flow(t, f, x, dt_obs, substeps);
        detail::push_mlp_params(p, net);
        p.params.push_back(x);
        return p;
      };
      record(fam, c, grad_check(build, theta));
    }
    report.families.push_back(fam);
  }

  return report;
}

}  // namespace dva
