#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "dva/checkpoint.hpp"
#include "dva/rng.hpp"

using namespace dva;

namespace {

std::string tmp_path(const std::string& stem) {
  return (std::filesystem::temp_directory_path() / ("dva_test_" + stem + ".ckpt")).string();
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace

TEST_CASE("array round trip is bit exact") {
  NamedArray awkward{"awkward",
                     {2, 5},
                     {0.0, -0.0, 1.0 / 3.0, std::numeric_limits<double>::min(),
                      std::numeric_limits<double>::max(),
                      std::numeric_limits<double>::denorm_min(), -1e-308, 1e308,
                      -0x1.fffffffffffffp-1, 6.02214076e23}};
  Rng rng(12345);
  NamedArray noise{"noise", {64}, {}};
  noise.data.resize(64);
  rng.fill_gaussian(noise.data);

  const std::string path = tmp_path("roundtrip");
  write_checkpoint(path, {awkward, noise});
  Checkpoint back = read_checkpoint(path);

  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "awkward");
  CHECK(back[0].shape == std::vector<std::size_t>{2, 5});
  CHECK(same_bits(back[0].data, awkward.data));
  CHECK(same_bits(back[1].data, noise.data));
  CHECK(std::signbit(back[0].data[1]));

  CHECK(checkpoint_has(back, "noise"));
  CHECK_FALSE(checkpoint_has(back, "signal"));
  CHECK_THROWS_AS(checkpoint_get(back, "signal"), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("model snapshots restore bitwise") {
  const std::string path = tmp_path("models");

  Mlp net = Mlp::init({1, 7, 1}, 42);
  save_mlp(path, net);
  Mlp net2 = load_mlp(path);
  CHECK(net2.widths == net.widths);
  CHECK(same_bits(net2.theta, net.theta));

  BayesMlp bn = BayesMlp::init({1, 5, 1}, 7);
  save_bayes(path, bn);
  BayesMlp bn2 = load_bayes(path);
  CHECK(bn2.widths == bn.widths);
  CHECK(same_bits(bn2.mu, bn.mu));
  CHECK(same_bits(bn2.rho, bn.rho));

  std::vector<Mlp> members;
  for (int k = 0; k < 3; ++k) members.push_back(Mlp::init({1, 4, 1}, 100 + k));
  save_ensemble(path, members);
  std::vector<Mlp> members2 = load_ensemble(path);
  REQUIRE(members2.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(members2[k].widths == members[k].widths);
    CHECK(same_bits(members2[k].theta, members[k].theta));
  }

  CHECK_THROWS_AS(save_ensemble(path, {}), std::invalid_argument);
  std::vector<Mlp> ragged{Mlp::init({1, 4, 1}, 0), Mlp::init({1, 5, 1}, 0)};
  CHECK_THROWS_AS(save_ensemble(path, ragged), std::invalid_argument);
  std::filesystem::remove(path);
}

TEST_CASE("training state snapshot with scalar and network heads") {
  const std::string path = tmp_path("state");
  std::vector<double> x(40);
  Rng rng(9);
  for (double& v : x) v = rng.uniform(1.0, 9.0);

  DvaState st;
  st.eps_hat.resize(x.size());
  rng.fill_gaussian(st.eps_hat);
  st.sigma_head = VarianceHead::network(3, 6);
  st.va_head = VarianceHead::scalar(std::log(0.8));
  st.seg = Segmentation::build(x, 4);

  save_dva_state(path, st);
  DvaState st2 = load_dva_state(path);
  CHECK(same_bits(st2.eps_hat, st.eps_hat));
  REQUIRE(st2.sigma_head.kind == VarianceHead::Kind::Network);
  CHECK(st2.sigma_head.net.widths == st.sigma_head.net.widths);
  CHECK(same_bits(st2.sigma_head.net.theta, st.sigma_head.net.theta));
  REQUIRE(st2.va_head.kind == VarianceHead::Kind::Scalar);
  CHECK(std::bit_cast<std::uint64_t>(st2.va_head.log_var) ==
        std::bit_cast<std::uint64_t>(st.va_head.log_var));
  CHECK(st2.seg.G == 4);
  CHECK(st2.seg.assign == st.seg.assign);
  CHECK(st2.noise_variance() == st.noise_variance());
  std::filesystem::remove(path);
}

TEST_CASE("malformed checkpoint files are rejected") {
  const std::string path = tmp_path("malformed");
  CHECK_THROWS_AS(read_checkpoint(tmp_path("no_such_file")), std::runtime_error);

  write_text(path, "not-a-checkpoint 1\narray a 1 1\n0x1p+0\nend\n");
  CHECK_THROWS_AS(read_checkpoint(path), std::runtime_error);

  write_text(path, "dva-checkpoint 2\nend\n");
  CHECK_THROWS_AS(read_checkpoint(path), std::runtime_error);

  write_text(path, "dva-checkpoint 1\narray a 1 4\n0x1p+0 0x1p+1\nend\n");
  CHECK_THROWS_AS(read_checkpoint(path), std::runtime_error);

  write_text(path, "dva-checkpoint 1\narray a 1 2\n0x1p+0 zebra\nend\n");
  CHECK_THROWS_AS(read_checkpoint(path), std::runtime_error);

  write_text(path, "dva-checkpoint 1\narray a 1 1\n0x1p+0\n");
  CHECK_THROWS_AS(read_checkpoint(path), std::runtime_error);

  write_text(path, "dva-checkpoint 1\nblob a 1 1\n0x1p+0\nend\n");
  CHECK_THROWS_AS(read_checkpoint(path), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("writer rejects inconsistent arrays before touching the file") {
  const std::string path = tmp_path("rejected");
  std::filesystem::remove(path);

  CHECK_THROWS_AS(write_checkpoint(path, {{"two words", {1}, {1.0}}}), std::invalid_argument);
  CHECK_THROWS_AS(write_checkpoint(path, {{"", {1}, {1.0}}}), std::invalid_argument);
  CHECK_THROWS_AS(write_checkpoint(path, {{"short", {3}, {1.0, 2.0}}}), std::invalid_argument);
  CHECK_FALSE(std::filesystem::exists(path));
}
