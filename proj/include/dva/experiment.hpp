#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "dva/dva.hpp"
#include "dva/odeident.hpp"
#include "dva/predictor.hpp"
#include "dva/svgplot.hpp"
#include "dva/synthdata.hpp"
#include "dva/train.hpp"
#include "dva/version.hpp"

// Configuration-driven sweeps over (noise level, seed) grids. Every run is a
// pure function of the derived run seed, result rows are sorted before they
// are written, and the manifest embeds the full config, so reruns and
// replayed manifests reproduce results.csv byte for byte.

namespace dva {

struct ExperimentConfig {
  std::string experiment = "custom";  // table1|table2|table3|appendixD|custom
  std::vector<std::string> methods{"va", "dva"};
  std::string predictor = "mlp";              // bnn|ensemble|mlp
  std::string noise_target = "label";         // label|input (state for table3)
  std::string noise_kind = "homoscedastic";   // homoscedastic|heteroscedastic
  std::vector<double> a2_list{1.0};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  std::size_t m = 1000;      // toy dataset size
  std::size_t hidden = 100;  // predictor hidden width
  std::size_t members = 5;   // ensemble size

  int pre_epochs = 400;  // predictor pretraining
  double pre_lr = 0.01;
  std::size_t pre_batch = 100;

  int epochs = 300;  // variance training
  double lr = 0.01;
  std::size_t batch = 100;
  std::size_t segments = 1;
  bool network_heads = false;
  std::string optimizer = "adam";  // adam|gd

  std::size_t n_traj = 100;  // trajectory experiments
  double horizon = 5.0;
  double dt_obs = 0.1;
  int substeps = 3;

  std::uint64_t master_seed = 0;
  std::string out_dir = "out";
};

struct RunRow {
  std::string experiment, method, predictor, noise_target, noise_kind;
  double a2 = 0.0;
  std::uint64_t seed = 0;
  double estimate = 0.0;
  double metric = 0.0;
  long long wall_ms = 0;
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline Aggregate aggregate(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("aggregate: no rows");
  Aggregate a;
  for (double v : values) a.mean += v;
  a.mean /= double(values.size());
  for (double v : values) a.std += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(a.std / double(values.size()));
  return a;
}

struct AggregateRow {
  std::string experiment, method, predictor, noise_target, noise_kind;
  double a2 = 0.0;
  std::size_t n_seeds = 0;
  Aggregate estimate, metric;
};

// Manifest record of one (setting, seed) run; aborted runs keep their reason
// so partial sweeps stay diagnosable.
struct RunRecord {
  std::size_t setting = 0, seed_index = 0;
  std::uint64_t seed = 0, run_seed = 0;
  std::string status = "ok";
  std::string reason;
};

// Grid curves and denoising scatter captured from one representative run
// (the a2 nearest 1, first seed) for the figure outputs.
struct CurveBundle {
  std::vector<double> grid, true_var;
  std::map<std::string, std::vector<double>> method_var;
  std::vector<double> scatter_x, scatter_noisy, scatter_denoised;
  std::vector<double> clean_x, clean_y;
  bool has_curves = false, has_denoise = false;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<RunRow> rows;
  std::vector<AggregateRow> aggregates;
  std::vector<RunRecord> runs;
  CurveBundle curves;
  bool aborted = false;
};

namespace detail {

inline const std::vector<std::string>& known_experiments() {
  static const std::vector<std::string> v{"table1", "table2", "table3", "appendixD", "custom"};
  return v;
}

inline bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace detail

inline void validate(const ExperimentConfig& cfg) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (!detail::contains(detail::known_experiments(), cfg.experiment))
    fail("unknown experiment '" + cfg.experiment + "'");
  if (cfg.methods.empty()) fail("methods list is empty");
  const bool ode = cfg.experiment == "table3";
  for (const std::string& m : cfg.methods) {
    if (m != "va" && m != "dva" && m != "mse-est") fail("unknown method '" + m + "'");
    if (ode && m == "va") fail("va has no trajectory form; use dva or mse-est");
    if (!ode && m == "mse-est") fail("mse-est applies only to trajectory experiments");
  }
  if (cfg.predictor != "bnn" && cfg.predictor != "ensemble" && cfg.predictor != "mlp")
    fail("unknown predictor '" + cfg.predictor + "'");
  if (ode && cfg.predictor != "bnn") fail("trajectory experiments use the bnn field");
  if (ode) {
    if (cfg.noise_target != "state") fail("trajectory noise hits the state; noise_target=state");
  } else if (cfg.noise_target != "label" && cfg.noise_target != "input") {
    fail("unknown noise_target '" + cfg.noise_target + "'");
  }
  if (cfg.noise_kind != "homoscedastic" && cfg.noise_kind != "heteroscedastic")
    fail("unknown noise_kind '" + cfg.noise_kind + "'");
  if (ode && cfg.noise_kind != "homoscedastic") fail("trajectory noise is homoscedastic");
  if (cfg.a2_list.empty()) fail("a2_list is empty");
  for (double a2 : cfg.a2_list) {
    if (!(a2 >= 0.0)) fail("a2 values must be nonnegative");
    if (a2 == 0.0 && cfg.experiment != "custom") fail("a2=0 is only meaningful for custom runs");
  }
  if (cfg.seeds.empty()) fail("seeds list is empty");
  if (cfg.m < 2 * std::max<std::size_t>(cfg.segments, 1)) fail("m too small for segment count");
  if (cfg.members < 2) fail("ensemble needs at least 2 members");
  if (cfg.hidden < 1) fail("hidden width must be positive");
  if (cfg.pre_epochs < 0 || cfg.epochs < 0) fail("epoch counts must be nonnegative");
  if (cfg.pre_lr <= 0.0 || cfg.lr <= 0.0) fail("learning rates must be positive");
  if (cfg.pre_batch == 0 || cfg.batch == 0) fail("batch sizes must be positive");
  if (cfg.segments == 0) fail("segments must be positive");
  if (cfg.optimizer != "adam" && cfg.optimizer != "gd") fail("optimizer is adam or gd");
  if (ode && (cfg.n_traj == 0 || cfg.dt_obs <= 0.0 || cfg.horizon < cfg.dt_obs))
    fail("bad trajectory grid");
  if (ode && cfg.substeps < 1) fail("substeps must be positive");
  if (cfg.out_dir.empty()) fail("out_dir is empty");
}

inline ExperimentConfig preset(const std::string& name) {
  ExperimentConfig cfg;
  cfg.experiment = name;
  if (name == "table1") {
    cfg.methods = {"va", "dva"};
    cfg.predictor = "bnn";
    cfg.noise_target = "label";
    cfg.noise_kind = "homoscedastic";
    cfg.a2_list = {0.5, 1.0, 2.0, 8.0};
  } else if (name == "table2") {
    cfg.methods = {"va", "dva"};
    cfg.predictor = "ensemble";
    cfg.noise_target = "label";
    cfg.noise_kind = "heteroscedastic";
    cfg.a2_list = {0.5, 1.0, 2.0, 8.0};
    cfg.segments = 10;
    cfg.network_heads = true;
  } else if (name == "table3") {
    cfg.methods = {"dva", "mse-est"};
    cfg.predictor = "bnn";
    cfg.noise_target = "state";
    cfg.noise_kind = "homoscedastic";
    cfg.a2_list = {0.5, 1.0, 2.0, 8.0};
    cfg.seeds = {0, 1, 2};
    cfg.pre_epochs = 600;
    cfg.epochs = 200;
  } else if (name == "appendixD") {
    cfg.methods = {"dva"};
    cfg.predictor = "ensemble";
    cfg.noise_target = "input";
    cfg.noise_kind = "homoscedastic";
    cfg.a2_list = {0.5, 2.0, 8.0};
  } else if (name != "custom") {
    throw std::invalid_argument("config: unknown experiment '" + name + "'");
  }
  return cfg;
}

// --- JSON config <-> struct, exact field names ------------------------------

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  return nlohmann::json{{"experiment", c.experiment},
                        {"methods", c.methods},
                        {"predictor", c.predictor},
                        {"noise_target", c.noise_target},
                        {"noise_kind", c.noise_kind},
                        {"a2_list", c.a2_list},
                        {"seeds", c.seeds},
                        {"m", c.m},
                        {"hidden", c.hidden},
                        {"members", c.members},
                        {"pre_epochs", c.pre_epochs},
                        {"pre_lr", c.pre_lr},
                        {"pre_batch", c.pre_batch},
                        {"epochs", c.epochs},
                        {"lr", c.lr},
                        {"batch", c.batch},
                        {"segments", c.segments},
                        {"network_heads", c.network_heads},
                        {"optimizer", c.optimizer},
                        {"n_traj", c.n_traj},
                        {"horizon", c.horizon},
                        {"dt_obs", c.dt_obs},
                        {"substeps", c.substeps},
                        {"master_seed", c.master_seed},
                        {"out_dir", c.out_dir}};
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  try {
    ExperimentConfig c =
        j.contains("experiment") ? preset(j.at("experiment").get<std::string>())
                                 : ExperimentConfig{};
    auto opt = [&](const char* key, auto& out) {
      if (j.contains(key)) j.at(key).get_to(out);
    };
    // "method" is accepted as a synonym, either a single name or a list.
    if (j.contains("method")) {
      if (j.at("method").is_string())
        c.methods = {j.at("method").get<std::string>()};
      else
        j.at("method").get_to(c.methods);
    }
    opt("methods", c.methods);
    opt("predictor", c.predictor);
    opt("noise_target", c.noise_target);
    opt("noise_kind", c.noise_kind);
    opt("a2_list", c.a2_list);
    opt("seeds", c.seeds);
    opt("m", c.m);
    opt("hidden", c.hidden);
    opt("members", c.members);
    opt("pre_epochs", c.pre_epochs);
    opt("pre_lr", c.pre_lr);
    opt("pre_batch", c.pre_batch);
    opt("epochs", c.epochs);
    opt("lr", c.lr);
    opt("batch", c.batch);
    opt("segments", c.segments);
    opt("network_heads", c.network_heads);
    opt("optimizer", c.optimizer);
    opt("n_traj", c.n_traj);
    opt("horizon", c.horizon);
    opt("dt_obs", c.dt_obs);
    opt("substeps", c.substeps);
    opt("master_seed", c.master_seed);
    opt("out_dir", c.out_dir);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return config_from_json(j);
}

// --- run internals -----------------------------------------------------------

namespace detail {

struct Job {
  std::size_t setting = 0, seed_index = 0;
  std::uint64_t run_seed = 0;
  std::vector<RunRow> rows;
  std::string status = "ok";
  std::string reason;
};

inline double grid_mean(const std::function<double(double)>& f, double lo, double hi,
                        std::size_t n = 1000) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += f(lo + (hi - lo) * (double(i) + 0.5) / double(n));
  return acc / double(n);
}

inline UqConfig uq_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  UqConfig uq;
  uq.lr = cfg.lr;
  uq.epochs = cfg.epochs;
  uq.batch = cfg.batch;
  uq.segments = cfg.segments;
  uq.network_heads = cfg.network_heads;
  uq.optimizer = cfg.optimizer == "gd" ? UqConfig::Opt::Gd : UqConfig::Opt::Adam;
  uq.seed = seed;
  return uq;
}

inline std::unique_ptr<Predictor> pretrained_predictor(const ExperimentConfig& cfg, DataView data,
                                                       std::uint64_t init_seed,
                                                       std::uint64_t train_seed) {
  const std::vector<std::size_t> widths{1, cfg.hidden, 1};
  FitConfig fit;
  fit.lr = cfg.pre_lr;
  fit.epochs = cfg.pre_epochs;
  fit.batch = cfg.pre_batch;
  fit.seed = train_seed;
  if (cfg.predictor == "mlp") {
    Mlp net = Mlp::init(widths, init_seed);
    train_mse(net, data, fit);
    return std::make_unique<MlpPredictor>(std::move(net));
  }
  if (cfg.predictor == "ensemble") {
    std::vector<Mlp> members;
    for (std::size_t k = 0; k < cfg.members; ++k)
      members.push_back(Mlp::init(widths, derive_seed(init_seed, k)));
    train_ensemble(members, data, fit);
    return std::make_unique<EnsemblePredictor>(std::move(members));
  }
  BayesMlp net = BayesMlp::init(widths, init_seed);
  train_elbo(net, data, fit);
  return std::make_unique<BayesPredictor>(std::move(net));
}

inline RunRow base_row(const ExperimentConfig& cfg, double a2, std::uint64_t seed) {
  RunRow r;
  r.experiment = cfg.experiment;
  r.predictor = cfg.predictor;
  r.noise_target = cfg.noise_target;
  r.noise_kind = cfg.noise_kind;
  r.a2 = a2;
  r.seed = seed;
  return r;
}

inline void capture_curves(CurveBundle& curves, const NoiseSpec& spec, const std::string& method,
                           const std::function<double(double)>& est) {
  const double lo = 1.0, hi = 9.0;
  if (curves.grid.empty()) {
    for (int i = 0; i <= 160; ++i) {
      const double x = lo + (hi - lo) * double(i) / 160.0;
      curves.grid.push_back(x);
      const double s = spec.sigma_at(x);
      curves.true_var.push_back(s * s);
      curves.clean_x.push_back(x);
      curves.clean_y.push_back(target_fn(x));
    }
  }
  std::vector<double>& var = curves.method_var[method];
  var.clear();
  for (double x : curves.grid) var.push_back(est(x));
  curves.has_curves = true;
}

inline void run_toy(const ExperimentConfig& cfg, Job& job, CurveBundle* curves) {
  const double a2 = cfg.a2_list[job.setting];
  NoiseSpec spec;
  spec.target =
      cfg.noise_target == "input" ? NoiseSpec::Target::Input : NoiseSpec::Target::Label;
  spec.kind = cfg.noise_kind == "heteroscedastic" ? NoiseSpec::Kind::Heteroscedastic
                                                  : NoiseSpec::Kind::Homoscedastic;
  spec.a = std::sqrt(a2);
  const Dataset d = gen_toy(cfg.m, spec, derive_seed(job.run_seed, 1));
  const DataView view = d.view();
  const std::unique_ptr<Predictor> pred =
      pretrained_predictor(cfg, view, derive_seed(job.run_seed, 2), derive_seed(job.run_seed, 3));

  auto true_var = [&](double x) {
    const double s = spec.sigma_at(x);
    return s * s;
  };
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const std::string& method = cfg.methods[mi];
    const UqConfig uq = uq_config(cfg, derive_seed(job.run_seed, 4 + mi));
    std::function<double(double)> est;
    DvaState st;
    if (method == "va") {
      const VarianceHead head = va_train(*pred, view, uq);
      est = [head](double x) { return head.variance_at(x); };
    } else {
      st = spec.target == NoiseSpec::Target::Input ? dva_train_input(*pred, view, uq)
                                                   : dva_train_label(*pred, view, uq);
      est = [&st](double x) { return st.noise_variance_at(x); };
    }
    RunRow row = base_row(cfg, a2, cfg.seeds[job.seed_index]);
    row.method = method;
    if (cfg.noise_kind == "heteroscedastic") {
      row.estimate = grid_mean(est, 1.0, 9.0);
      row.metric = variance_grid_mse(est, true_var, 1.0, 9.0);
    } else {
      row.estimate = cfg.network_heads ? grid_mean(est, 1.0, 9.0) : est(0.0);
      row.metric = (row.estimate - a2) * (row.estimate - a2);
    }
    if (curves) {
      capture_curves(*curves, spec, method, est);
      if (method == "dva" && spec.target == NoiseSpec::Target::Label) {
        curves->scatter_x = d.x_obs;
        curves->scatter_noisy = d.y_obs;
        curves->scatter_denoised = denoise_labels(view, st);
        curves->has_denoise = true;
      }
    }
    job.rows.push_back(std::move(row));
  }
}

inline void run_ode(const ExperimentConfig& cfg, Job& job) {
  const double a2 = cfg.a2_list[job.setting];
  NoiseSpec spec;
  spec.a = std::sqrt(a2);
  const TrajectorySet set =
      gen_trajectories(cfg.n_traj, cfg.horizon, cfg.dt_obs, spec, derive_seed(job.run_seed, 1));

  BayesMlp field = BayesMlp::init({1, cfg.hidden, 1}, derive_seed(job.run_seed, 2));
  FitConfig fit;
  fit.lr = cfg.pre_lr;
  fit.epochs = cfg.pre_epochs;
  fit.batch = cfg.pre_batch;
  fit.seed = derive_seed(job.run_seed, 3);
  node_train(field, set, fit, cfg.substeps);
  const BayesPredictor pred(std::move(field));

  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const std::string& method = cfg.methods[mi];
    RunRow row = base_row(cfg, a2, cfg.seeds[job.seed_index]);
    row.method = method;
    if (method == "dva") {
      const UqConfig uq = uq_config(cfg, derive_seed(job.run_seed, 4 + mi));
      const OdeDvaState st = ode_dva(field_from_predictor(pred), set, uq, cfg.substeps);
      row.estimate = st.noise_variance();
    } else {
      const MlpView mean = pred.net().mean_view();
      row.estimate =
          mse_noise_estimate([mean](double x) { return mean.forward1(x); }, set, cfg.substeps);
    }
    row.metric = (row.estimate - a2) * (row.estimate - a2);
    job.rows.push_back(std::move(row));
  }
}

inline bool row_less(const RunRow& a, const RunRow& b) {
  auto key = [](const RunRow& r) {
    return std::tie(r.experiment, r.method, r.predictor, r.noise_target, r.noise_kind, r.a2,
                    r.seed);
  };
  return key(a) < key(b);
}

inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline constexpr const char* kResultsHeader =
    "experiment,method,predictor,noise_target,noise_kind,a2,seed,estimate,metric,wall_ms";
inline constexpr const char* kSummaryHeader =
    "experiment,method,predictor,noise_target,noise_kind,a2,n_seeds,mean_estimate,std_estimate,"
    "mean_metric,std_metric";

inline void write_results_csv(const std::string& path, const std::vector<RunRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("results: cannot open " + path);
  out << kResultsHeader << '\n';
  for (const RunRow& r : rows)
    out << r.experiment << ',' << r.method << ',' << r.predictor << ',' << r.noise_target << ','
        << r.noise_kind << ',' << detail::fmt_g17(r.a2) << ',' << r.seed << ','
        << detail::fmt_g17(r.estimate) << ',' << detail::fmt_g17(r.metric) << ',' << r.wall_ms
        << '\n';
  if (!out) throw std::runtime_error("results: write failed for " + path);
}

inline void write_summary_csv(const std::string& path, const std::vector<AggregateRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("summary: cannot open " + path);
  out << kSummaryHeader << '\n';
  for (const AggregateRow& r : rows)
    out << r.experiment << ',' << r.method << ',' << r.predictor << ',' << r.noise_target << ','
        << r.noise_kind << ',' << detail::fmt_g17(r.a2) << ',' << r.n_seeds << ','
        << detail::fmt_g17(r.estimate.mean) << ',' << detail::fmt_g17(r.estimate.std) << ','
        << detail::fmt_g17(r.metric.mean) << ',' << detail::fmt_g17(r.metric.std) << '\n';
  if (!out) throw std::runtime_error("summary: write failed for " + path);
}

// Figure series are persisted next to the CSVs so plots can be regenerated
// without rerunning the sweep: curves.csv holds the x grid, the clean target,
// the true noise variance and one estimated-variance column per method;
// denoise.csv holds the per-example scatter.
inline void write_curves_files(const std::string& out_dir, const CurveBundle& c) {
  namespace fs = std::filesystem;
  if (c.has_curves) {
    std::ofstream out((fs::path(out_dir) / "curves.csv").string(), std::ios::binary);
    out << "x,clean_y,true_var";
    for (const auto& [method, _] : c.method_var) out << ',' << method;
    out << '\n';
    for (std::size_t i = 0; i < c.grid.size(); ++i) {
      out << detail::fmt_g17(c.grid[i]) << ',' << detail::fmt_g17(c.clean_y[i]) << ','
          << detail::fmt_g17(c.true_var[i]);
      for (const auto& [_, var] : c.method_var) out << ',' << detail::fmt_g17(var[i]);
      out << '\n';
    }
  }
  if (c.has_denoise) {
    std::ofstream out((fs::path(out_dir) / "denoise.csv").string(), std::ios::binary);
    out << "x,noisy,denoised\n";
    for (std::size_t i = 0; i < c.scatter_x.size(); ++i)
      out << detail::fmt_g17(c.scatter_x[i]) << ',' << detail::fmt_g17(c.scatter_noisy[i]) << ','
          << detail::fmt_g17(c.scatter_denoised[i]) << '\n';
  }
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t p = line.find(',', start);
    out.push_back(line.substr(start, p - start));
    if (p == std::string::npos) return out;
    start = p + 1;
  }
}

inline double parse_num(const std::string& s, const char* who) {
  char* endp = nullptr;
  const double v = std::strtod(s.c_str(), &endp);
  if (endp == s.c_str() || *endp != '\0')
    throw std::runtime_error(std::string(who) + ": unparseable number '" + s + "'");
  return v;
}

}  // namespace detail

inline CurveBundle read_curves_files(const std::string& out_dir) {
  namespace fs = std::filesystem;
  CurveBundle c;
  std::ifstream curves((fs::path(out_dir) / "curves.csv").string());
  if (curves) {
    std::string line;
    if (!std::getline(curves, line)) throw std::runtime_error("curves: empty file");
    const std::vector<std::string> cols = detail::split_csv(line);
    if (cols.size() < 3 || cols[0] != "x" || cols[1] != "clean_y" || cols[2] != "true_var")
      throw std::runtime_error("curves: unexpected header");
    while (std::getline(curves, line)) {
      if (line.empty()) continue;
      const std::vector<std::string> f = detail::split_csv(line);
      if (f.size() != cols.size()) throw std::runtime_error("curves: ragged row");
      c.grid.push_back(detail::parse_num(f[0], "curves"));
      c.clean_y.push_back(detail::parse_num(f[1], "curves"));
      c.true_var.push_back(detail::parse_num(f[2], "curves"));
      for (std::size_t k = 3; k < cols.size(); ++k)
        c.method_var[cols[k]].push_back(detail::parse_num(f[k], "curves"));
    }
    c.clean_x = c.grid;
    c.has_curves = !c.grid.empty() && !c.method_var.empty();
  }
  std::ifstream denoise((fs::path(out_dir) / "denoise.csv").string());
  if (denoise) {
    std::string line;
    if (!std::getline(denoise, line) || line != "x,noisy,denoised")
      throw std::runtime_error("denoise: unexpected header");
    while (std::getline(denoise, line)) {
      if (line.empty()) continue;
      const std::vector<std::string> f = detail::split_csv(line);
      if (f.size() != 3) throw std::runtime_error("denoise: ragged row");
      c.scatter_x.push_back(detail::parse_num(f[0], "denoise"));
      c.scatter_noisy.push_back(detail::parse_num(f[1], "denoise"));
      c.scatter_denoised.push_back(detail::parse_num(f[2], "denoise"));
    }
    c.has_denoise = !c.scatter_x.empty();
  }
  return c;
}

inline std::vector<AggregateRow> read_summary_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("summary: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kSummaryHeader)
    throw std::runtime_error("summary: unexpected header in " + path);
  std::vector<AggregateRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = detail::split_csv(line);
    if (f.size() != 11) throw std::runtime_error("summary: ragged row in " + path);
    AggregateRow r;
    r.experiment = f[0];
    r.method = f[1];
    r.predictor = f[2];
    r.noise_target = f[3];
    r.noise_kind = f[4];
    r.a2 = detail::parse_num(f[5], "summary");
    r.n_seeds = std::size_t(detail::parse_num(f[6], "summary"));
    r.estimate = {detail::parse_num(f[7], "summary"), detail::parse_num(f[8], "summary")};
    r.metric = {detail::parse_num(f[9], "summary"), detail::parse_num(f[10], "summary")};
    rows.push_back(std::move(r));
  }
  return rows;
}

// Enough of a result to drive emit_plot from a finished run's directory.
inline ExperimentResult load_artifacts(const std::string& out_dir) {
  namespace fs = std::filesystem;
  ExperimentResult res;
  res.aggregates = read_summary_csv((fs::path(out_dir) / "summary.csv").string());
  res.curves = read_curves_files(out_dir);
  return res;
}

inline std::vector<AggregateRow> aggregate_rows(const std::vector<RunRow>& rows) {
  std::map<std::pair<std::string, double>, std::vector<const RunRow*>> groups;
  for (const RunRow& r : rows) groups[{r.method, r.a2}].push_back(&r);
  std::vector<AggregateRow> out;
  for (const auto& [key, members] : groups) {
    AggregateRow a;
    const RunRow& head = *members.front();
    a.experiment = head.experiment;
    a.method = head.method;
    a.predictor = head.predictor;
    a.noise_target = head.noise_target;
    a.noise_kind = head.noise_kind;
    a.a2 = head.a2;
    a.n_seeds = members.size();
    std::vector<double> est, met;
    for (const RunRow* r : members) {
      est.push_back(r->estimate);
      met.push_back(r->metric);
    }
    a.estimate = aggregate(est);
    a.metric = aggregate(met);
    out.push_back(std::move(a));
  }
  return out;
}

inline ExperimentResult run(const ExperimentConfig& cfg, int threads = 1,
                            std::ostream* progress = nullptr) {
  validate(cfg);
  ExperimentResult res;
  res.config = cfg;

  std::vector<detail::Job> jobs;
  for (std::size_t s = 0; s < cfg.a2_list.size(); ++s)
    for (std::size_t j = 0; j < cfg.seeds.size(); ++j)
      jobs.push_back({s, j, derive_seed(cfg.master_seed, s, j)});

  // The representative run for figure curves: a2 nearest 1, first seed.
  std::size_t curve_setting = 0;
  for (std::size_t s = 1; s < cfg.a2_list.size(); ++s)
    if (std::fabs(cfg.a2_list[s] - 1.0) < std::fabs(cfg.a2_list[curve_setting] - 1.0))
      curve_setting = s;
  const bool toy = cfg.experiment != "table3";

  std::mutex progress_mutex;
  auto do_job = [&](detail::Job& job, std::size_t index) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      CurveBundle* curves =
          (toy && job.setting == curve_setting && job.seed_index == 0) ? &res.curves : nullptr;
      if (toy)
        detail::run_toy(cfg, job, curves);
      else
        detail::run_ode(cfg, job);
    } catch (const std::exception& e) {
      job.rows.clear();
      job.status = "abort";
      job.reason = e.what();
    }
    const auto ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0)
            .count();
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      *progress << "[" << (index + 1) << "/" << jobs.size() << "] " << cfg.experiment
                << " a2=" << cfg.a2_list[job.setting] << " seed=" << cfg.seeds[job.seed_index];
      if (job.status == "ok") {
        for (const RunRow& r : job.rows)
          *progress << "  " << r.method << "=" << r.estimate;
      } else {
        *progress << "  ABORT: " << job.reason;
      }
      *progress << "  (" << ms << " ms)" << std::endl;
    }
  };

  const int n_workers = std::clamp<int>(threads, 1, int(jobs.size()));
  if (n_workers <= 1) {
    for (std::size_t k = 0; k < jobs.size(); ++k) do_job(jobs[k], k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t k = next.fetch_add(1); k < jobs.size(); k = next.fetch_add(1))
          do_job(jobs[k], k);
      });
    for (std::thread& t : pool) t.join();
  }

  for (detail::Job& job : jobs) {
    RunRecord rec{job.setting, job.seed_index, cfg.seeds[job.seed_index], job.run_seed,
                  job.status, job.reason};
    if (job.status != "ok") res.aborted = true;
    res.runs.push_back(std::move(rec));
    for (RunRow& r : job.rows) res.rows.push_back(std::move(r));
  }
  std::sort(res.rows.begin(), res.rows.end(), detail::row_less);
  res.aggregates = aggregate_rows(res.rows);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  write_results_csv((fs::path(cfg.out_dir) / "results.csv").string(), res.rows);
  write_summary_csv((fs::path(cfg.out_dir) / "summary.csv").string(), res.aggregates);
  write_curves_files(cfg.out_dir, res.curves);

  nlohmann::json manifest;
  manifest["version"] = version_string();
  manifest["config"] = config_to_json(cfg);
  manifest["runs"] = nlohmann::json::array();
  for (const RunRecord& r : res.runs) {
    nlohmann::json jr{{"setting", r.setting}, {"seed_index", r.seed_index}, {"seed", r.seed},
                      {"run_seed", r.run_seed}, {"status", r.status}};
    if (!r.reason.empty()) jr["reason"] = r.reason;
    manifest["runs"].push_back(std::move(jr));
  }
  std::ofstream mf((fs::path(cfg.out_dir) / "manifest.json").string(), std::ios::binary);
  if (!mf) throw std::runtime_error("manifest: cannot open for writing");
  mf << manifest.dump(2) << '\n';

  return res;
}

inline ExperimentResult run_from_manifest(const std::string& manifest_path,
                                          const std::string& out_dir_override = "",
                                          int threads = 1, std::ostream* progress = nullptr) {
  std::ifstream in(manifest_path);
  if (!in) throw std::invalid_argument("manifest: cannot open " + manifest_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("manifest: ") + e.what());
  }
  if (!j.contains("config")) throw std::invalid_argument("manifest: no config section");
  ExperimentConfig cfg = config_from_json(j.at("config"));
  if (!out_dir_override.empty()) cfg.out_dir = out_dir_override;
  return run(cfg, threads, progress);
}

inline void emit_plot(const ExperimentResult& res, const std::string& kind,
                      const std::string& path) {
  PlotSpec spec;
  if (kind == "variance-vs-x") {
    if (!res.curves.has_curves)
      throw std::invalid_argument("plot: no variance curves recorded in this result");
    spec.title = "noise variance across the input domain";
    spec.xlabel = "x";
    spec.ylabel = "variance";
    spec.series.push_back({"true", res.curves.grid, res.curves.true_var, false});
    for (const auto& [method, var] : res.curves.method_var)
      spec.series.push_back({method + " estimate", res.curves.grid, var, false});
  } else if (kind == "estimate-vs-a2") {
    if (res.aggregates.empty()) throw std::invalid_argument("plot: no aggregate rows");
    spec.title = "estimated noise variance vs injected a2";
    spec.xlabel = "a2";
    spec.ylabel = "estimate";
    std::map<std::string, Series> by_method;
    std::vector<double> axis;
    for (const AggregateRow& r : res.aggregates) {
      Series& s = by_method[r.method];
      s.label = r.method;
      s.x.push_back(r.a2);
      s.y.push_back(r.estimate.mean);
      axis.push_back(r.a2);
    }
    std::sort(axis.begin(), axis.end());
    axis.erase(std::unique(axis.begin(), axis.end()), axis.end());
    spec.series.push_back({"target", axis, axis, false});
    for (auto& [_, s] : by_method) spec.series.push_back(std::move(s));
  } else if (kind == "denoise-scatter") {
    if (!res.curves.has_denoise)
      throw std::invalid_argument("plot: no denoised labels recorded in this result");
    spec.title = "label denoising";
    spec.xlabel = "x";
    spec.ylabel = "y";
    spec.series.push_back({"clean curve", res.curves.clean_x, res.curves.clean_y, false});
    spec.series.push_back({"noisy", res.curves.scatter_x, res.curves.scatter_noisy, true});
    spec.series.push_back({"denoised", res.curves.scatter_x, res.curves.scatter_denoised, true});
  } else {
    throw std::invalid_argument("plot: unknown kind '" + kind + "'");
  }
  write_svg_plot(path, spec);
}

}  // namespace dva
