#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "dva/checkpoint.hpp"
#include "dva/experiment.hpp"
#include "dva/gradcheck_suite.hpp"
#include "dva/oracle.hpp"
#include "dva/synthdata.hpp"
#include "dva/train.hpp"
#include "dva/version.hpp"

namespace fs = std::filesystem;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 0;
  std::string out;
  int threads = 1;
};

std::string out_or(const GlobalOpts& g, const std::string& fallback) {
  return g.out.empty() ? fallback : g.out;
}

dva::NoiseSpec make_noise(const std::string& target, const std::string& kind, double a2) {
  if (a2 < 0.0) throw std::invalid_argument("gen-data: a2 must be nonnegative");
  dva::NoiseSpec spec;
  spec.target =
      target == "input" ? dva::NoiseSpec::Target::Input : dva::NoiseSpec::Target::Label;
  spec.kind = kind == "heteroscedastic" ? dva::NoiseSpec::Kind::Heteroscedastic
                                        : dva::NoiseSpec::Kind::Homoscedastic;
  spec.a = std::sqrt(a2);
  return spec;
}

// --- gen-data ----------------------------------------------------------------

struct GenOpts {
  std::string kind = "toy";
  std::size_t m = 1000;
  std::string noise_target = "label";
  std::string noise_kind = "homoscedastic";
  double a2 = 1.0;
  std::size_t n_traj = 50;
  double horizon = 2.5;
  double dt_obs = 0.1;
};

int do_gen(const GlobalOpts& g, const GenOpts& o) {
  const dva::NoiseSpec spec = make_noise(o.noise_target, o.noise_kind, o.a2);
  if (o.kind == "toy") {
    const std::string path = out_or(g, "dataset.csv");
    dva::write_dataset_csv(path, dva::gen_toy(o.m, spec, g.seed));
    std::cerr << "wrote " << o.m << " examples to " << path << "\n";
  } else {
    const std::string path = out_or(g, "trajectories.csv");
    const dva::TrajectorySet set =
        dva::gen_trajectories(o.n_traj, o.horizon, o.dt_obs, spec, g.seed);
    dva::write_trajectories_csv(path, set);
    std::cerr << "wrote " << set.trajectories.size() << " trajectories to " << path << "\n";
  }
  return 0;
}

// --- train -------------------------------------------------------------------

struct TrainOpts {
  std::string predictor = "mlp";
  std::string data;
  std::size_t hidden = 100;
  std::size_t members = 5;
  int epochs = 400;
  double lr = 0.01;
  std::size_t batch = 100;
  std::string dva_state;  // optional: fit the denoising state afterwards
  int uq_epochs = 300;
  double uq_lr = 0.01;
  std::size_t uq_batch = 100;
  std::size_t segments = 1;
  bool network_heads = false;
  std::string optimizer = "adam";
};

int do_train(const GlobalOpts& g, const TrainOpts& o) {
  const dva::Dataset d = dva::read_dataset_csv(o.data);
  const dva::DataView view = d.view();
  const std::vector<std::size_t> widths{1, o.hidden, 1};
  dva::FitConfig fit;
  fit.lr = o.lr;
  fit.epochs = o.epochs;
  fit.batch = o.batch;
  fit.seed = dva::derive_seed(g.seed, 2);

  const std::string ckpt = out_or(g, "model.ckpt");
  std::unique_ptr<dva::Predictor> pred;
  if (o.predictor == "mlp") {
    dva::Mlp net = dva::Mlp::init(widths, dva::derive_seed(g.seed, 1));
    dva::train_mse(net, view, fit);
    dva::save_mlp(ckpt, net);
    pred = std::make_unique<dva::MlpPredictor>(std::move(net));
  } else if (o.predictor == "ensemble") {
    std::vector<dva::Mlp> members;
    for (std::size_t k = 0; k < o.members; ++k)
      members.push_back(dva::Mlp::init(widths, dva::derive_seed(g.seed, 1, k)));
    dva::train_ensemble(members, view, fit);
    dva::save_ensemble(ckpt, members);
    pred = std::make_unique<dva::EnsemblePredictor>(std::move(members));
  } else {
    dva::BayesMlp net = dva::BayesMlp::init(widths, dva::derive_seed(g.seed, 1));
    dva::train_elbo(net, view, fit);
    dva::save_bayes(ckpt, net);
    pred = std::make_unique<dva::BayesPredictor>(std::move(net));
  }

  dva::Rng eval_rng(dva::derive_seed(g.seed, 3));
  double mse = 0.0;
  for (std::size_t i = 0; i < view.size(); ++i) {
    const double r = pred->predict(view.x[i], pred->default_samples(), eval_rng).mean - view.y[i];
    mse += r * r;
  }
  std::cerr << "trained " << o.predictor << " on " << view.size() << " examples, train mse "
            << mse / double(view.size()) << ", saved " << ckpt << "\n";

  if (!o.dva_state.empty()) {
    dva::UqConfig uq;
    uq.lr = o.uq_lr;
    uq.epochs = o.uq_epochs;
    uq.batch = o.uq_batch;
    uq.segments = o.segments;
    uq.network_heads = o.network_heads;
    uq.optimizer = o.optimizer == "gd" ? dva::UqConfig::Opt::Gd : dva::UqConfig::Opt::Adam;
    uq.seed = dva::derive_seed(g.seed, 4);
    const dva::DvaState st = dva::dva_train_label(*pred, view, uq);
    dva::save_dva_state(o.dva_state, st);
    std::cerr << "denoising state: noise variance " << st.noise_variance() << ", saved "
              << o.dva_state << "\n";
  }
  return 0;
}

// --- run ---------------------------------------------------------------------

struct RunOpts {
  std::string config, experiment, manifest;
  std::vector<std::string> methods;
  std::vector<double> a2;
  std::vector<std::uint64_t> seeds;
  std::string predictor;
  int epochs = -1, pre_epochs = -1;
  long long m = -1;
  std::vector<std::string> plots;
};

void print_summary(const dva::ExperimentResult& res) {
  std::printf("experiment=%s predictor=%s noise=%s/%s version=%s\n",
              res.config.experiment.c_str(), res.config.predictor.c_str(),
              res.config.noise_target.c_str(), res.config.noise_kind.c_str(),
              dva::version_string());
  std::printf("%-8s %-8s %-12s %-24s %s\n", "method", "a2", "seeds", "estimate(mean/std)",
              "metric(mean/std)");
  for (const dva::AggregateRow& a : res.aggregates)
    std::printf("%-8s %-8g %-12zu %-11.5g %-12.3g %-11.5g %.3g\n", a.method.c_str(), a.a2,
                a.n_seeds, a.estimate.mean, a.estimate.std, a.metric.mean, a.metric.std);
}

int do_run(const GlobalOpts& g, const RunOpts& o, bool seed_given) {
  dva::ExperimentResult res;
  if (!o.manifest.empty()) {
    res = dva::run_from_manifest(o.manifest, g.out, g.threads, &std::cerr);
  } else {
    dva::ExperimentConfig cfg;
    if (!o.config.empty())
      cfg = dva::load_config(o.config);
    else if (!o.experiment.empty())
      cfg = dva::preset(o.experiment);
    else
      throw std::invalid_argument("run: provide --config, --experiment or --manifest");
    if (!o.methods.empty()) cfg.methods = o.methods;
    if (!o.a2.empty()) cfg.a2_list = o.a2;
    if (!o.seeds.empty()) cfg.seeds = o.seeds;
    if (!o.predictor.empty()) cfg.predictor = o.predictor;
    if (o.epochs >= 0) cfg.epochs = o.epochs;
    if (o.pre_epochs >= 0) cfg.pre_epochs = o.pre_epochs;
    if (o.m >= 0) cfg.m = std::size_t(o.m);
    if (seed_given) cfg.master_seed = g.seed;
    if (!g.out.empty()) cfg.out_dir = g.out;
    res = dva::run(cfg, g.threads, &std::cerr);
  }
  print_summary(res);
  for (const std::string& kind : o.plots) {
    const std::string path = (fs::path(res.config.out_dir) / (kind + ".svg")).string();
    dva::emit_plot(res, kind, path);
    std::cerr << "wrote " << path << "\n";
  }
  if (res.aborted) {
    std::cerr << "some runs aborted; see manifest.json\n";
    return 2;
  }
  return 0;
}

// --- oracle ------------------------------------------------------------------

struct OracleOpts {
  std::string kind = "bias";
  double sigma2 = 1.0;
  double bias_const = 0.0;
  double bias_slope = 0.0;
  double lo = 1.0, hi = 9.0;
  std::size_t m = 10000;
  std::size_t mc = 200000;
  std::string data, state, mu;
};

int do_oracle(const GlobalOpts& g, const OracleOpts& o) {
  nlohmann::json out;
  if (o.kind == "bias") {
    const double c = o.bias_const, s = o.bias_slope;
    const dva::BiasReport rep = dva::bias_report(
        o.sigma2, [c, s](double x) { return c + s * x; }, o.lo, o.hi, o.m, o.mc, g.seed);
    out = {{"kind", "bias"},
           {"sigma2", o.sigma2},
           {"va_expected", rep.va_expected},
           {"va_se", rep.va_se},
           {"dva_expected", rep.dva_expected},
           {"dva_se", rep.dva_se},
           {"monte_carlo_samples", rep.monte_carlo_samples}};
  } else if (o.kind == "kkt") {
    if (o.data.empty() || o.state.empty())
      throw std::invalid_argument("oracle kkt: needs --data and --state");
    const dva::Dataset d = dva::read_dataset_csv(o.data);
    const dva::DvaState st = dva::load_dva_state(o.state);
    if (st.sigma_head.kind != dva::VarianceHead::Kind::Scalar ||
        st.va_head.kind != dva::VarianceHead::Kind::Scalar)
      throw std::invalid_argument("oracle kkt: covers scalar heads only");
    if (st.eps_hat.size() != d.size())
      throw std::invalid_argument("oracle kkt: state and dataset sizes disagree");
    std::vector<double> mus(d.size(), 0.0);
    if (!o.mu.empty()) {
      const dva::Mlp net = dva::load_mlp(o.mu);
      for (std::size_t i = 0; i < d.size(); ++i) mus[i] = net.forward1(d.x_obs[i]);
    }
    const double sigma2 = st.sigma_head.variance_at(0.0);
    const double v = st.va_head.variance_at(0.0);
    const dva::KktResidualReport rep =
        dva::kkt_residuals(d.y_obs, mus, st.eps_hat, sigma2, v);
    out = {{"kind", "kkt"},
           {"sigma2_eps", sigma2},
           {"v", v},
           {"lambda1", rep.lambda1},
           {"lambda2", rep.lambda2},
           {"entry_residual", rep.entry_residual},
           {"scale_residual", rep.scale_residual},
           {"variance_residual", rep.variance_residual}};
    try {
      const dva::DvaClosedForm cf = dva::dva_closed_form(d.y_obs, mus);
      out["closed_form"] = {{"sigma2_eps", cf.sigma2_eps}, {"v", cf.v}};
    } catch (const std::invalid_argument&) {
      // constant residuals have no closed form; leave the section out
    }
  } else {
    throw std::invalid_argument("oracle: kind is bias or kkt");
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

// --- gradcheck / plot ----------------------------------------------------------

int do_gradcheck(const GlobalOpts& g, int configs) {
  const auto t0 = std::chrono::steady_clock::now();
  const dva::GradSuiteReport rep = dva::run_gradient_suite(configs, g.seed);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0)
          .count();
  for (const dva::GradFamilyResult& f : rep.families)
    std::printf("%-14s %d configs  worst %.3e (tol %.0e)  %s\n", f.family.c_str(), f.configs,
                f.worst_err, f.tol, f.ok ? "PASS" : "FAIL");
  std::printf("gradient suite: %s (%lld ms)\n", rep.all_ok() ? "PASS" : "FAIL",
              static_cast<long long>(ms));
  return rep.all_ok() ? 0 : 2;
}

int do_plot(const GlobalOpts& g, const std::string& kind, const std::string& results) {
  const dva::ExperimentResult res = dva::load_artifacts(results);
  const std::string path = out_or(g, (fs::path(results) / (kind + ".svg")).string());
  dva::emit_plot(res, kind, path);
  std::cerr << "wrote " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variance attenuation lab"};
  app.set_version_flag("--version", dva::version_string());
  app.require_subcommand(1);

  GlobalOpts g;
  CLI::Option* seed_opt = app.add_option("--seed", g.seed, "master seed");
  app.add_option("--out", g.out, "output file or directory");
  app.add_option("--threads", g.threads, "worker threads for sweeps")
      ->check(CLI::PositiveNumber);

  GenOpts gen;
  CLI::App* c_gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  c_gen->add_option("--kind", gen.kind)->check(CLI::IsMember({"toy", "trajectories"}));
  c_gen->add_option("--m", gen.m, "toy dataset size");
  c_gen->add_option("--noise-target", gen.noise_target)->check(CLI::IsMember({"label", "input"}));
  c_gen->add_option("--noise-kind", gen.noise_kind)
      ->check(CLI::IsMember({"homoscedastic", "heteroscedastic"}));
  c_gen->add_option("--a2", gen.a2, "injected noise variance");
  c_gen->add_option("--n-traj", gen.n_traj);
  c_gen->add_option("--horizon", gen.horizon);
  c_gen->add_option("--dt-obs", gen.dt_obs);

  TrainOpts tr;
  CLI::App* c_train = app.add_subcommand("train", "pretrain a predictor on a dataset CSV");
  c_train->add_option("--predictor", tr.predictor)
      ->check(CLI::IsMember({"mlp", "ensemble", "bnn"}));
  c_train->add_option("--data", tr.data, "dataset CSV")->required();
  c_train->add_option("--hidden", tr.hidden);
  c_train->add_option("--members", tr.members);
  c_train->add_option("--epochs", tr.epochs);
  c_train->add_option("--lr", tr.lr);
  c_train->add_option("--batch", tr.batch);
  c_train->add_option("--dva-state", tr.dva_state,
                      "also fit the denoising state and save it here");
  c_train->add_option("--uq-epochs", tr.uq_epochs);
  c_train->add_option("--uq-lr", tr.uq_lr);
  c_train->add_option("--uq-batch", tr.uq_batch);
  c_train->add_option("--segments", tr.segments);
  c_train->add_flag("--network-heads", tr.network_heads);
  c_train->add_option("--optimizer", tr.optimizer)->check(CLI::IsMember({"adam", "gd"}));

  RunOpts ru;
  CLI::App* c_run = app.add_subcommand("run", "run a configured experiment sweep");
  c_run->add_option("--config", ru.config, "JSON config file");
  c_run->add_option("--experiment", ru.experiment, "preset name")
      ->check(CLI::IsMember({"table1", "table2", "table3", "appendixD", "custom"}));
  c_run->add_option("--manifest", ru.manifest, "replay a finished run's manifest.json");
  c_run->add_option("--method", ru.methods, "override methods");
  c_run->add_option("--a2", ru.a2, "override noise variances");
  c_run->add_option("--seeds", ru.seeds, "override seed list");
  c_run->add_option("--predictor", ru.predictor)
      ->check(CLI::IsMember({"mlp", "ensemble", "bnn"}));
  c_run->add_option("--epochs", ru.epochs, "variance training epochs");
  c_run->add_option("--pre-epochs", ru.pre_epochs, "predictor pretraining epochs");
  c_run->add_option("--m", ru.m, "toy dataset size");
  c_run->add_option("--plot", ru.plots, "emit figure(s) after the run")
      ->check(CLI::IsMember({"variance-vs-x", "estimate-vs-a2", "denoise-scatter"}));

  OracleOpts orc;
  CLI::App* c_oracle = app.add_subcommand("oracle", "closed-form reference values as JSON");
  c_oracle->add_option("--kind", orc.kind)->check(CLI::IsMember({"bias", "kkt"}));
  c_oracle->add_option("--sigma2", orc.sigma2, "true noise variance");
  c_oracle->add_option("--bias-const", orc.bias_const, "constant predictor bias");
  c_oracle->add_option("--bias-slope", orc.bias_slope, "linear predictor bias slope");
  c_oracle->add_option("--lo", orc.lo);
  c_oracle->add_option("--hi", orc.hi);
  c_oracle->add_option("--m", orc.m, "dataset size the estimators see");
  c_oracle->add_option("--mc", orc.mc, "monte carlo draws");
  c_oracle->add_option("--data", orc.data, "dataset CSV for kkt");
  c_oracle->add_option("--state", orc.state, "denoising state checkpoint for kkt");
  c_oracle->add_option("--mu", orc.mu, "mlp checkpoint giving the predictor mean");

  int grad_configs = 100;
  CLI::App* c_grad = app.add_subcommand("gradcheck", "finite-difference gradient sweep");
  c_grad->add_option("--configs", grad_configs, "configurations per family")
      ->check(CLI::PositiveNumber);

  std::string plot_kind, plot_results = "out";
  CLI::App* c_plot = app.add_subcommand("plot", "render a finished run's figures");
  c_plot->add_option("--kind", plot_kind)
      ->check(CLI::IsMember({"variance-vs-x", "estimate-vs-a2", "denoise-scatter"}))
      ->required();
  c_plot->add_option("--results", plot_results, "run output directory");

  for (CLI::App* sub : {c_gen, c_train, c_run, c_oracle, c_grad, c_plot}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (c_gen->parsed()) return do_gen(g, gen);
    if (c_train->parsed()) return do_train(g, tr);
    if (c_run->parsed()) return do_run(g, ru, seed_opt->count() > 0);
    if (c_oracle->parsed()) return do_oracle(g, orc);
    if (c_grad->parsed()) return do_gradcheck(g, grad_configs);
    if (c_plot->parsed()) return do_plot(g, plot_kind, plot_results);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
