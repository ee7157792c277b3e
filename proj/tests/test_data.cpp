#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "fvlfp/data.hpp"
#include "fvlfp/error.hpp"

using namespace fvlfp;
using data::Dataset;
using data::SyntheticSpec;

namespace {

SyntheticSpec spec(std::size_t n, double rho, std::uint64_t seed = 1) {
  SyntheticSpec s;
  s.n = n;
  s.spurious_strength = rho;
  s.seed = seed;
  return s;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Whether the group texture is present with positive sign, read off the pixels.
std::vector<double> detected_group(const Dataset& ds, const SyntheticSpec& s) {
  const auto pattern = data::pattern_image(s, true);
  std::vector<double> out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double dot = 0.0;
    auto px = ds.sample(i);
    for (std::size_t j = 0; j < px.size(); ++j) dot += (px[j] - 0.5) * pattern[j];
    out.push_back(dot > 0.0 ? 1.0 : 0.0);
  }
  return out;
}

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "fvlfp_data_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("synthetic generation") {
  const SyntheticSpec s0 = spec(2000, 0.0, 3);
  const Dataset d0 = data::generate_synthetic(s0);
  CHECK(d0.size() == 2000);
  CHECK(d0.feature_dim == 32 * 32);
  CHECK(std::all_of(d0.values.begin(), d0.values.end(), [](double v) { return v >= 0.0 && v <= 1.0; }));
  std::vector<double> y(d0.labels.begin(), d0.labels.end());
  CHECK(std::abs(correlation(detected_group(d0, s0), y)) <= 0.05);
  // The pixel readout recovers the group exactly at this noise level.
  std::vector<double> g(d0.groups.begin(), d0.groups.end());
  CHECK(detected_group(d0, s0) == g);

  const SyntheticSpec s1 = spec(2000, 1.0, 3);
  const Dataset d1 = data::generate_synthetic(s1);
  CHECK(d1.groups == d1.labels);

  CHECK(data::generate_synthetic(s0) == d0);
  CHECK_FALSE(data::generate_synthetic(spec(2000, 0.0, 4)) == d0);

  for (double rho : {0.0, 0.8}) {
    const Dataset d = data::generate_synthetic(spec(4000, rho, 11));
    const double py = std::accumulate(d.labels.begin(), d.labels.end(), 0.0) / 4000.0;
    const double pg = std::accumulate(d.groups.begin(), d.groups.end(), 0.0) / 4000.0;
    CHECK(std::abs(py - 0.5) <= 0.02);
    CHECK(std::abs(pg - 0.5) <= 0.02);
  }

  SyntheticSpec bad = spec(10, 1.5);
  CHECK_THROWS_AS(data::generate_synthetic(bad), ConfigError);
}

TEST_CASE("pattern placement") {
  const SyntheticSpec s = spec(1, 0.0);
  const auto lp = data::label_patches(s), gp = data::group_patches(s);
  CHECK(lp.size() == 2);
  CHECK(gp.size() == 2);
  for (auto p : lp) CHECK(std::find(gp.begin(), gp.end(), p) == gp.end());
  const auto img = data::pattern_image(s, false);
  std::size_t nonzero = 0;
  for (double v : img) nonzero += v != 0.0;
  CHECK(nonzero == 2 * 64);
}

TEST_CASE("dirichlet partition") {
  const Dataset d = data::generate_synthetic(spec(5000, 0.8, 2));
  auto check_cover = [&](const data::Partition& p) {
    std::vector<std::size_t> all;
    for (const auto& s : p.shards) {
      CHECK_FALSE(s.empty());
      CHECK(std::is_sorted(s.begin(), s.end()));
      all.insert(all.end(), s.begin(), s.end());
    }
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> want(d.size());
    std::iota(want.begin(), want.end(), 0);
    CHECK(all == want);
  };

  const auto one = data::dirichlet_partition(d.labels, d.groups, 1, 0.5, 1);
  REQUIRE(one.shards.size() == 1);
  check_cover(one);

  const auto even = data::dirichlet_partition(d.labels, d.groups, 5, 100.0, 1);
  check_cover(even);
  for (const auto& s : even.shards) CHECK(std::abs(static_cast<double>(s.size()) - 1000.0) <= 150.0);

  for (double alpha : {0.05, 0.1, 1.0}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) check_cover(data::dirichlet_partition(d.labels, d.groups, 20, alpha, seed));
  }
  CHECK(data::dirichlet_partition(d.labels, d.groups, 5, 0.5, 9).shards ==
        data::dirichlet_partition(d.labels, d.groups, 5, 0.5, 9).shards);

  // Heterogeneity grows as alpha shrinks, on average over seeds.
  auto spread = [&](double alpha) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto p = data::dirichlet_partition(d.labels, d.groups, 5, alpha, seed);
      std::size_t lo = d.size(), hi = 0;
      for (const auto& s : p.shards) {
        lo = std::min(lo, s.size());
        hi = std::max(hi, s.size());
      }
      total += static_cast<double>(hi) / static_cast<double>(lo);
    }
    return total / 20.0;
  };
  CHECK(spread(0.1) > spread(100.0));

  const std::vector<int> tiny{1, 0};
  CHECK_THROWS_AS(data::dirichlet_partition(tiny, tiny, 3, 1.0, 1), DataError);
  CHECK_THROWS_AS(data::dirichlet_partition(d.labels, d.groups, 5, 0.0, 1), ConfigError);
}

TEST_CASE("balanced test sample") {
  const Dataset d = data::generate_synthetic(spec(3000, 0.0, 5));
  const auto ids = data::balanced_test_sample(d.labels, d.groups, 400, 7);
  CHECK(ids.size() == 400);
  CHECK(std::set<std::size_t>(ids.begin(), ids.end()).size() == 400);
  int cells[2][2] = {{0, 0}, {0, 0}};
  for (auto i : ids) ++cells[d.labels[i]][d.groups[i]];
  for (auto& row : cells)
    for (int c : row) CHECK(c == 100);
  CHECK(data::balanced_test_sample(d.labels, d.groups, 400, 7) == ids);

  const auto other = data::balanced_test_sample(d.labels, d.groups, 200, 8, ids);
  for (auto i : other) CHECK_FALSE(std::binary_search(ids.begin(), ids.end(), i));

  CHECK_THROWS_AS(data::balanced_test_sample(d.labels, d.groups, 402, 7), ConfigError);
  CHECK_THROWS_AS(data::balanced_test_sample(d.labels, d.groups, 4000, 7), DataError);
}

TEST_CASE("embedding files") {
  const auto path = temp_file("three.emb");
  {
    std::ofstream f(path);
    f << "dim=2 count=3\n1,0,0.5,-1\n0,1,2.25,3\n1,1,1e-3,+4\n";
  }
  const Dataset d = data::load_embeddings(path.string());
  CHECK(d.size() == 3);
  CHECK(d.is_embedding());
  CHECK(d.labels == std::vector<int>{1, 0, 1});
  CHECK(d.groups == std::vector<int>{0, 1, 1});
  CHECK(d.values == std::vector<double>{0.5, -1.0, 2.25, 3.0, 1e-3, 4.0});

  auto expect_parse_error = [&](const std::string& text, const std::string& fragment) {
    const auto p = temp_file("bad.emb");
    {
      std::ofstream f(p);
      f << text;
    }
    try {
      data::load_embeddings(p.string());
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      const std::string msg = e.what();
      CAPTURE(msg);
      CHECK(msg.find(fragment) != std::string::npos);
    }
  };
  expect_parse_error("dim=3 count=1\n1,0,0.5,1\n", "bad.emb:2: expected 3 values after y,g, found 2");
  expect_parse_error("dims=3 count=1\n", ":1:");
  expect_parse_error("dim=1 count=2\n1,0,0.5\n", "declares 2 rows, found 1");
  expect_parse_error("dim=1 count=1\n2,0,0.5\n", ":2: label must be 0 or 1");
  expect_parse_error("dim=1 count=1\n1,0,abc\n", ":2: bad value");
  CHECK_THROWS_AS(data::load_embeddings("/nonexistent/none.emb"), IoError);

  // Round trip preserves every bit.
  Dataset src;
  src.feature_dim = 4;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 25; ++i) {
    src.labels.push_back(i % 2);
    src.groups.push_back((i / 2) % 2);
    for (int j = 0; j < 4; ++j) src.values.push_back(n(rng) * std::pow(10.0, j - 2));
  }
  const auto rt = temp_file("roundtrip.emb");
  data::write_embeddings(rt.string(), src);
  CHECK(data::load_embeddings(rt.string()) == src);
}
