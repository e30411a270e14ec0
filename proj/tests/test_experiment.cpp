#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dva/experiment.hpp"

using namespace dva;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path tmp_dir(const std::string& stem) {
  return fs::temp_directory_path() / ("dva_exp_" + stem);
}

ExperimentConfig tiny_config(const std::string& out) {
  ExperimentConfig cfg;
  cfg.experiment = "custom";
  cfg.methods = {"va", "dva"};
  cfg.predictor = "mlp";
  cfg.a2_list = {1.0, 0.5};
  cfg.seeds = {0, 1};
  cfg.m = 120;
  cfg.hidden = 8;
  cfg.pre_epochs = 40;
  cfg.pre_batch = 30;
  cfg.epochs = 50;
  cfg.batch = 30;
  cfg.master_seed = 5;
  cfg.out_dir = out;
  return cfg;
}

}  // namespace

TEST_CASE("aggregate mean and population spread") {
  CHECK(aggregate(std::vector<double>{1, 1, 1}).mean == 1.0);
  CHECK(aggregate(std::vector<double>{1, 1, 1}).std == 0.0);
  CHECK(aggregate(std::vector<double>{0, 2}).mean == 1.0);
  CHECK(aggregate(std::vector<double>{0, 2}).std == 1.0);

  const std::vector<double> v{0.3, -1.2, 2.4, 0.9, -0.6};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= 5.0;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const Aggregate a = aggregate(v);
  CHECK(a.mean == Catch::Approx(mean).margin(1e-12));
  CHECK(a.std == Catch::Approx(std::sqrt(var / 5.0)).margin(1e-12));

  CHECK_THROWS_AS(aggregate(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("config validation guards the sweep grid") {
  ExperimentConfig ok = preset("table1");
  CHECK_NOTHROW(validate(ok));

  ExperimentConfig c = ok;
  c.seeds.clear();
  CHECK_THROWS_AS(validate(c), std::invalid_argument);

  c = ok;
  c.a2_list = {0.0};
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c.experiment = "custom";
  CHECK_NOTHROW(validate(c));
  c.a2_list = {-1.0};
  CHECK_THROWS_AS(validate(c), std::invalid_argument);

  c = ok;
  c.methods = {"vda"};
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c.methods = {};
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c.methods = {"mse-est"};
  CHECK_THROWS_AS(validate(c), std::invalid_argument);

  c = preset("table3");
  CHECK_NOTHROW(validate(c));
  c.methods = {"va"};
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = preset("table3");
  c.predictor = "mlp";
  CHECK_THROWS_AS(validate(c), std::invalid_argument);

  c = ok;
  c.predictor = "gp";
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = ok;
  c.optimizer = "sgd";
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = ok;
  c.m = 10;
  c.segments = 10;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
}

TEST_CASE("presets carry the protocol shapes") {
  const ExperimentConfig t1 = preset("table1");
  CHECK(t1.methods == std::vector<std::string>{"va", "dva"});
  CHECK(t1.predictor == "bnn");
  CHECK(t1.noise_kind == "homoscedastic");
  CHECK(t1.a2_list == std::vector<double>{0.5, 1.0, 2.0, 8.0});
  CHECK(t1.seeds.size() == 5);
  CHECK(t1.a2_list.size() * t1.seeds.size() * t1.methods.size() == 40);

  const ExperimentConfig t2 = preset("table2");
  CHECK(t2.predictor == "ensemble");
  CHECK(t2.noise_kind == "heteroscedastic");
  CHECK(t2.segments == 10);
  CHECK(t2.network_heads);

  const ExperimentConfig t3 = preset("table3");
  CHECK(t3.methods == std::vector<std::string>{"dva", "mse-est"});
  CHECK(t3.predictor == "bnn");
  CHECK(t3.noise_target == "state");
  CHECK(t3.seeds.size() == 3);

  const ExperimentConfig ad = preset("appendixD");
  CHECK(ad.noise_target == "input");
  CHECK(ad.methods == std::vector<std::string>{"dva"});
  CHECK(ad.predictor == "ensemble");

  CHECK_THROWS_AS(preset("table9"), std::invalid_argument);
}

TEST_CASE("json config round trip and preset layering") {
  ExperimentConfig cfg = preset("table2");
  cfg.m = 256;
  cfg.master_seed = 17;
  const ExperimentConfig back = config_from_json(config_to_json(cfg));
  CHECK(config_to_json(back).dump() == config_to_json(cfg).dump());

  const ExperimentConfig layered = config_from_json(nlohmann::json{{"experiment", "table2"}});
  CHECK(config_to_json(layered).dump() == config_to_json(preset("table2")).dump());

  const ExperimentConfig single =
      config_from_json(nlohmann::json{{"method", "va"}, {"a2_list", {2.0}}});
  CHECK(single.methods == std::vector<std::string>{"va"});
  CHECK(single.a2_list == std::vector<double>{2.0});

  const ExperimentConfig ignored =
      config_from_json(nlohmann::json{{"unicorn", 3}, {"m", 64}});
  CHECK(ignored.m == 64);

  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"m", "many"}}), std::invalid_argument);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), std::invalid_argument);
}

TEST_CASE("tiny sweep writes sorted rows and replays byte identically") {
  const fs::path dir_a = tmp_dir("a"), dir_b = tmp_dir("b"), dir_c = tmp_dir("c"),
                 dir_d = tmp_dir("d");
  for (const fs::path& p : {dir_a, dir_b, dir_c, dir_d}) fs::remove_all(p);

  const ExperimentConfig cfg = tiny_config(dir_a.string());
  const ExperimentResult res = run(cfg);
  CHECK_FALSE(res.aborted);
  REQUIRE(res.rows.size() == 8);  // 2 methods x 2 noise levels x 2 seeds
  for (std::size_t i = 1; i < res.rows.size(); ++i) {
    const RunRow &p = res.rows[i - 1], &q = res.rows[i];
    CHECK(std::tie(p.method, p.a2, p.seed) <= std::tie(q.method, q.a2, q.seed));
  }
  for (const RunRow& r : res.rows) {
    CHECK(std::isfinite(r.estimate));
    CHECK(r.estimate > 0.0);
    CHECK(r.metric >= 0.0);
    CHECK(r.wall_ms == 0);
  }
  REQUIRE(res.aggregates.size() == 4);
  for (const AggregateRow& a : res.aggregates) {
    CHECK(a.n_seeds == 2);
    std::vector<double> est;
    for (const RunRow& r : res.rows)
      if (r.method == a.method && r.a2 == a.a2) est.push_back(r.estimate);
    CHECK(aggregate(est).mean == a.estimate.mean);
  }
  REQUIRE(fs::exists(dir_a / "results.csv"));
  REQUIRE(fs::exists(dir_a / "summary.csv"));
  REQUIRE(fs::exists(dir_a / "manifest.json"));
  const std::string results_a = slurp(dir_a / "results.csv");
  CHECK(results_a.rfind(kResultsHeader, 0) == 0);

  run_from_manifest((dir_a / "manifest.json").string(), dir_b.string());
  CHECK(slurp(dir_b / "results.csv") == results_a);

  ExperimentConfig again = cfg;
  again.out_dir = dir_c.string();
  run(again);
  CHECK(slurp(dir_c / "results.csv") == results_a);

  ExperimentConfig threaded = cfg;
  threaded.out_dir = dir_d.string();
  run(threaded, 2);
  CHECK(slurp(dir_d / "results.csv") == results_a);

  for (const fs::path& p : {dir_a, dir_b, dir_c, dir_d}) fs::remove_all(p);
}

TEST_CASE("figure outputs from a recorded sweep") {
  const fs::path dir = tmp_dir("plots");
  fs::remove_all(dir);
  const ExperimentResult res = run(tiny_config(dir.string()));
  REQUIRE(res.curves.has_curves);
  REQUIRE(res.curves.has_denoise);

  for (const char* kind : {"variance-vs-x", "estimate-vs-a2", "denoise-scatter"}) {
    const fs::path path = dir / (std::string(kind) + ".svg");
    emit_plot(res, kind, path.string());
    const std::string svg = slurp(path);
    CHECK(svg.rfind("<svg", 0) == 0);
  }
  CHECK_THROWS_AS(emit_plot(res, "pie-chart", (dir / "x.svg").string()), std::invalid_argument);

  const ExperimentResult reloaded = load_artifacts(dir.string());
  REQUIRE(reloaded.curves.has_curves);
  REQUIRE(reloaded.curves.has_denoise);
  CHECK(reloaded.curves.grid == res.curves.grid);
  CHECK(reloaded.curves.method_var.at("dva") == res.curves.method_var.at("dva"));
  CHECK(reloaded.curves.scatter_denoised == res.curves.scatter_denoised);
  REQUIRE(reloaded.aggregates.size() == res.aggregates.size());
  for (std::size_t i = 0; i < reloaded.aggregates.size(); ++i) {
    CHECK(reloaded.aggregates[i].method == res.aggregates[i].method);
    CHECK(reloaded.aggregates[i].estimate.mean == res.aggregates[i].estimate.mean);
    CHECK(reloaded.aggregates[i].metric.std == res.aggregates[i].metric.std);
  }
  emit_plot(reloaded, "variance-vs-x", (dir / "reload.svg").string());
  CHECK(slurp(dir / "reload.svg") == slurp(dir / "variance-vs-x.svg"));

  ExperimentResult hollow;
  const fs::path missing = dir / "missing.svg";
  CHECK_THROWS_AS(emit_plot(hollow, "estimate-vs-a2", missing.string()), std::invalid_argument);
  CHECK_THROWS_AS(emit_plot(hollow, "variance-vs-x", missing.string()), std::invalid_argument);
  CHECK_THROWS_AS(emit_plot(hollow, "denoise-scatter", missing.string()), std::invalid_argument);
  CHECK_FALSE(fs::exists(missing));
  fs::remove_all(dir);
}

TEST_CASE("clean labels leave the denoiser nothing to find") {
  const fs::path dir = tmp_dir("clean");
  fs::remove_all(dir);
  ExperimentConfig cfg;
  cfg.experiment = "custom";
  cfg.methods = {"dva"};
  cfg.predictor = "mlp";
  cfg.a2_list = {0.0};
  cfg.seeds = {7};
  cfg.m = 300;
  cfg.hidden = 48;
  cfg.pre_epochs = 500;
  cfg.pre_batch = 50;
  cfg.epochs = 150;
  cfg.batch = 50;
  cfg.out_dir = dir.string();

  const ExperimentResult res = run(cfg);
  REQUIRE(res.rows.size() == 1);
  CHECK(res.rows[0].estimate < 0.05);
  fs::remove_all(dir);
}
