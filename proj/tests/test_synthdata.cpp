#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <numbers>
#include <vector>

#include "dva/synthdata.hpp"

using namespace dva;

namespace {

double sample_var(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= double(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / double(v.size() - 1);
}

}  // namespace

TEST_CASE("target function fixed points") {
  CHECK(target_fn(0.0) == 0.0);
  CHECK(target_fn(std::numbers::pi) == Catch::Approx(std::numbers::pi).epsilon(1e-12));
  CHECK(target_fn(std::numbers::pi / 2) == Catch::Approx(std::numbers::pi).epsilon(1e-12));
}

TEST_CASE("toy generator determinism and exact decomposition") {
  NoiseSpec spec{NoiseSpec::Target::Label, NoiseSpec::Kind::Homoscedastic, 1.0};
  Dataset a = gen_toy(500, spec, 99);
  Dataset b = gen_toy(500, spec, 99);
  Dataset c = gen_toy(500, spec, 100);
  CHECK(a.x_clean == b.x_clean);
  CHECK(a.y_obs == b.y_obs);
  CHECK(a.y_obs != c.y_obs);

  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.y_obs[i] == a.y_clean[i] + a.eps[i]);
    CHECK(a.x_obs[i] == a.x_clean[i]);
    CHECK(a.y_clean[i] == target_fn(a.x_clean[i]));
    CHECK(a.x_clean[i] >= 1.0);
    CHECK(a.x_clean[i] <= 9.0);
  }
}

TEST_CASE("zero noise scale produces clean observations") {
  NoiseSpec spec{NoiseSpec::Target::Label, NoiseSpec::Kind::Heteroscedastic, 0.0};
  Dataset d = gen_toy(100, spec, 7);
  CHECK(d.y_obs == d.y_clean);
  CHECK(d.x_obs == d.x_clean);
}

TEST_CASE("homoscedastic label noise has the configured variance") {
  NoiseSpec spec{NoiseSpec::Target::Label, NoiseSpec::Kind::Homoscedastic, 1.0};
  Dataset d = gen_toy(1000, spec, 3);
  CHECK(sample_var(d.eps) == Catch::Approx(1.0).margin(0.15));

  NoiseSpec big = spec;
  big.a = std::sqrt(8.0);
  Dataset d8 = gen_toy(1000, big, 3);
  CHECK(sample_var(d8.eps) == Catch::Approx(8.0).margin(1.2));
}

TEST_CASE("heteroscedastic profile shows up in windowed noise spread") {
  NoiseSpec spec{NoiseSpec::Target::Label, NoiseSpec::Kind::Heteroscedastic, 1.0};
  Dataset d = gen_toy(20000, spec, 21);
  std::vector<double> window;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.x_clean[i] >= 8.5 && d.x_clean[i] <= 9.0) window.push_back(d.eps[i]);
  REQUIRE(window.size() > 200);
  const double want = 1.0 * (1.0 + 0.1 * 8.75);
  const double got = std::sqrt(sample_var(window));
  CHECK(got > 0.8 * want);
  CHECK(got < 1.2 * want);

  std::vector<double> low;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.x_clean[i] <= 1.5) low.push_back(d.eps[i]);
  REQUIRE(low.size() > 200);
  CHECK(std::sqrt(sample_var(low)) < got);
}

TEST_CASE("input noise lands on inputs and leaves labels clean") {
  NoiseSpec spec{NoiseSpec::Target::Input, NoiseSpec::Kind::Homoscedastic, 0.5};
  Dataset d = gen_toy(400, spec, 13);
  CHECK(d.y_obs == d.y_clean);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(d.x_obs[i] == d.x_clean[i] + d.xi[i]);
    CHECK(d.y_clean[i] == target_fn(d.x_clean[i]));
  }
  CHECK(sample_var(d.xi) == Catch::Approx(0.25).margin(0.05));
}

TEST_CASE("noise draws are empirically zero mean") {
  NoiseSpec spec{NoiseSpec::Target::Label, NoiseSpec::Kind::Homoscedastic, 1.0};
  Dataset d = gen_toy(100000, spec, 17);
  double m = 0.0;
  for (double e : d.eps) m += e;
  m /= double(d.size());
  CHECK(std::fabs(m) <= 4.0 / std::sqrt(double(d.size())));
}

TEST_CASE("trajectory generator matches the analytic exponential") {
  NoiseSpec none{NoiseSpec::Target::Label, NoiseSpec::Kind::Homoscedastic, 0.0};
  TrajectorySet set = gen_trajectories(1, 1.0, 0.1, none, 5, [](double x) { return x; }, 1.0, 1.0);
  REQUIRE(set.trajectories.size() == 1);
  const Trajectory& tr = set.trajectories[0];
  REQUIRE(tr.t.size() == 11);
  CHECK_FALSE(tr.truncated);
  CHECK(tr.x_clean[0] == 1.0);
  CHECK(tr.x_obs == tr.x_clean);
  CHECK(tr.x_clean[10] == Catch::Approx(std::exp(1.0)).margin(1e-5));
  CHECK(tr.t[10] == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("trajectory noise variance and grid shape") {
  NoiseSpec spec{NoiseSpec::Target::Label, NoiseSpec::Kind::Homoscedastic, std::sqrt(0.5)};
  TrajectorySet set = gen_trajectories(100, 5.0, 0.1, spec, 23);
  REQUIRE(set.trajectories.size() == 100);
  std::vector<double> noise;
  for (const Trajectory& tr : set.trajectories) {
    CHECK(tr.t.size() == 51);
    CHECK_FALSE(tr.truncated);
    for (std::size_t k = 0; k < tr.t.size(); ++k) noise.push_back(tr.x_obs[k] - tr.x_clean[k]);
  }
  CHECK(noise.size() == 5100);
  CHECK(sample_var(noise) == Catch::Approx(0.5).margin(0.03));

  TrajectorySet again = gen_trajectories(100, 5.0, 0.1, spec, 23);
  CHECK(again.trajectories[57].x_obs == set.trajectories[57].x_obs);

  NoiseSpec hetero{NoiseSpec::Target::Label, NoiseSpec::Kind::Heteroscedastic, 1.0};
  CHECK_THROWS_AS(gen_trajectories(2, 1.0, 0.1, hetero, 1), std::invalid_argument);
}

TEST_CASE("trajectories truncate on finite-time blow-up") {
  NoiseSpec none{NoiseSpec::Target::Label, NoiseSpec::Kind::Homoscedastic, 0.0};
  TrajectorySet set =
      gen_trajectories(1, 5.0, 0.1, none, 2, [](double x) { return x * x; }, 5.0, 5.0);
  const Trajectory& tr = set.trajectories[0];
  CHECK(tr.truncated);
  CHECK(tr.t.size() < 51);
  CHECK(tr.t.size() >= 1);
  for (double v : tr.x_clean) CHECK(std::isfinite(v));
}

TEST_CASE("dataset csv round trip is exact") {
  NoiseSpec spec{NoiseSpec::Target::Label, NoiseSpec::Kind::Heteroscedastic, 1.3};
  Dataset d = gen_toy(64, spec, 101);
  const std::string path = "synthdata_roundtrip_test.csv";
  write_dataset_csv(path, d);
  Dataset r = read_dataset_csv(path);
  CHECK(r.x_clean == d.x_clean);
  CHECK(r.x_obs == d.x_obs);
  CHECK(r.y_clean == d.y_clean);
  CHECK(r.y_obs == d.y_obs);
  CHECK(r.xi == d.xi);
  CHECK(r.eps == d.eps);
  std::remove(path.c_str());
}

TEST_CASE("trajectory csv round trip is exact") {
  NoiseSpec spec{NoiseSpec::Target::Label, NoiseSpec::Kind::Homoscedastic, 0.7};
  TrajectorySet set = gen_trajectories(5, 2.0, 0.1, spec, 31);
  const std::string path = "synthdata_traj_roundtrip_test.csv";
  write_trajectories_csv(path, set);
  TrajectorySet r = read_trajectories_csv(path);
  REQUIRE(r.trajectories.size() == 5);
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(r.trajectories[j].t == set.trajectories[j].t);
    CHECK(r.trajectories[j].x_clean == set.trajectories[j].x_clean);
    CHECK(r.trajectories[j].x_obs == set.trajectories[j].x_obs);
  }
  std::remove(path.c_str());
}
