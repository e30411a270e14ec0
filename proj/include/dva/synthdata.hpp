#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dva/data_view.hpp"
#include "dva/rk4.hpp"
#include "dva/rng.hpp"

namespace dva {

inline double target_fn(double x) { return x * (1.0 + std::sin(x)); }

struct NoiseSpec {
  enum class Target { Input, Label };
  enum class Kind { Homoscedastic, Heteroscedastic };

  Target target = Target::Label;
  Kind kind = Kind::Homoscedastic;
  double a = 1.0;

  double sigma_at(double x) const {
    return kind == Kind::Homoscedastic ? a : a * (1.0 + 0.1 * x);
  }
};

// Clean values and the true noise draws ride along as an evaluation-only
// side channel; training code receives only the view.
struct Dataset {
  std::vector<double> x_clean, x_obs, y_clean, y_obs, xi, eps;

  std::size_t size() const { return x_obs.size(); }
  DataView view() const { return {x_obs, y_obs}; }
};

inline Dataset gen_toy(std::size_t m, const NoiseSpec& noise, std::uint64_t seed, double lo = 1.0,
                       double hi = 9.0) {
  if (m < 2) throw std::invalid_argument("gen_toy: need at least 2 samples");
  if (noise.a < 0.0) throw std::invalid_argument("gen_toy: negative noise scale");
  Rng rng(derive_seed(seed, 0x746f79));
  Dataset d;
  d.x_clean.resize(m);
  d.x_obs.resize(m);
  d.y_clean.resize(m);
  d.y_obs.resize(m);
  d.xi.assign(m, 0.0);
  d.eps.assign(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) d.x_clean[i] = rng.uniform(lo, hi);
  for (std::size_t i = 0; i < m; ++i) {
    if (noise.target == NoiseSpec::Target::Label)
      d.eps[i] = noise.sigma_at(d.x_clean[i]) * rng.gaussian();
    else
      d.xi[i] = noise.sigma_at(d.x_clean[i]) * rng.gaussian();
    d.x_obs[i] = d.x_clean[i] + d.xi[i];
    d.y_clean[i] = target_fn(d.x_clean[i]);
    d.y_obs[i] = d.y_clean[i] + d.eps[i];
  }
  return d;
}

struct Trajectory {
  std::vector<double> t, x_clean, x_obs;
  bool truncated = false;
};

struct TrajectorySet {
  std::vector<Trajectory> trajectories;
  double dt_obs = 0.1;

  std::size_t total_points() const {
    std::size_t n = 0;
    for (const Trajectory& tr : trajectories) n += tr.t.size();
    return n;
  }
};

// Observations of the scalar dynamics x' = field(x) at a uniform grid, noise
// applied at every stored point including t=0. The clean states come from a
// fine-substep integration and serve as the evaluation side channel.
inline TrajectorySet gen_trajectories(std::size_t n_traj, double horizon, double dt_obs,
                                      const NoiseSpec& noise, std::uint64_t seed,
                                      std::function<double(double)> field = target_fn,
                                      double x0_lo = 1.0, double x0_hi = 9.0) {
  if (n_traj == 0 || dt_obs <= 0.0 || horizon < dt_obs)
    throw std::invalid_argument("gen_trajectories: bad grid");
  if (noise.kind != NoiseSpec::Kind::Homoscedastic)
    throw std::invalid_argument("gen_trajectories: only homoscedastic observation noise");
  if (noise.a < 0.0) throw std::invalid_argument("gen_trajectories: negative noise scale");

  const std::size_t n_obs = std::size_t(std::llround(horizon / dt_obs)) + 1;
  const std::size_t substeps = std::size_t(std::max(1.0, std::round(dt_obs / 1e-3)));
  Rng rng(derive_seed(seed, 0x74726a));

  TrajectorySet set;
  set.dt_obs = dt_obs;
  set.trajectories.resize(n_traj);
  for (std::size_t j = 0; j < n_traj; ++j) {
    Trajectory& tr = set.trajectories[j];
    double x = rng.uniform(x0_lo, x0_hi);
    for (std::size_t k = 0; k < n_obs; ++k) {
      if (!std::isfinite(x) || std::fabs(x) > 1e12) {
        tr.truncated = true;
        break;
      }
      tr.t.push_back(double(k) * dt_obs);
      tr.x_clean.push_back(x);
      tr.x_obs.push_back(x + noise.a * rng.gaussian());
      x = rk4_integrate(field, x, dt_obs, substeps);
    }
  }
  return set;
}

namespace detail {

inline void print_row(std::string& out, std::initializer_list<double> vals) {
  char buf[32];
  bool first = true;
  for (double v : vals) {
    if (!first) out.push_back(',');
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
    first = false;
  }
  out.push_back('\n');
}

inline std::vector<double> parse_row(const std::string& line, std::size_t n, const char* who) {
  std::vector<double> vals;
  vals.reserve(n);
  std::size_t pos = 0;
  while (pos <= line.size()) {
    std::size_t next = line.find(',', pos);
    if (next == std::string::npos) next = line.size();
    vals.push_back(std::strtod(line.c_str() + pos, nullptr));
    pos = next + 1;
  }
  if (vals.size() != n) throw std::runtime_error(std::string(who) + ": malformed row");
  return vals;
}

}  // namespace detail

inline constexpr const char* kDatasetHeader = "x_clean,x_obs,y_clean,y_obs,xi,eps";
inline constexpr const char* kTrajectoryHeader = "traj_id,t,x_clean,x_obs";

inline void write_dataset_csv(const std::string& path, const Dataset& d) {
  std::string out(kDatasetHeader);
  out.push_back('\n');
  for (std::size_t i = 0; i < d.size(); ++i)
    detail::print_row(out, {d.x_clean[i], d.x_obs[i], d.y_clean[i], d.y_obs[i], d.xi[i], d.eps[i]});
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_dataset_csv: cannot open " + path);
  f << out;
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_dataset_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != kDatasetHeader)
    throw std::runtime_error("read_dataset_csv: bad header in " + path);
  Dataset d;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto v = detail::parse_row(line, 6, "read_dataset_csv");
    d.x_clean.push_back(v[0]);
    d.x_obs.push_back(v[1]);
    d.y_clean.push_back(v[2]);
    d.y_obs.push_back(v[3]);
    d.xi.push_back(v[4]);
    d.eps.push_back(v[5]);
  }
  return d;
}

inline void write_trajectories_csv(const std::string& path, const TrajectorySet& set) {
  std::string out(kTrajectoryHeader);
  out.push_back('\n');
  for (std::size_t j = 0; j < set.trajectories.size(); ++j) {
    const Trajectory& tr = set.trajectories[j];
    for (std::size_t k = 0; k < tr.t.size(); ++k)
      detail::print_row(out, {double(j), tr.t[k], tr.x_clean[k], tr.x_obs[k]});
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_trajectories_csv: cannot open " + path);
  f << out;
}

inline TrajectorySet read_trajectories_csv(const std::string& path, double dt_obs = 0.1) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_trajectories_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != kTrajectoryHeader)
    throw std::runtime_error("read_trajectories_csv: bad header in " + path);
  TrajectorySet set;
  set.dt_obs = dt_obs;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto v = detail::parse_row(line, 4, "read_trajectories_csv");
    const std::size_t id = std::size_t(v[0]);
    if (id >= set.trajectories.size()) set.trajectories.resize(id + 1);
    Trajectory& tr = set.trajectories[id];
    tr.t.push_back(v[1]);
    tr.x_clean.push_back(v[2]);
    tr.x_obs.push_back(v[3]);
  }
  return set;
}

}  // namespace dva
