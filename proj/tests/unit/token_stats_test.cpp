#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "gcpo/token_stats.hpp"
#include "support/test_util.hpp"

using namespace gcpo;
using stats::EntropyMap;
using test_util::Rng;

TEST_CASE("token_entropy: closed-form cases", "[token_stats]") {
  const std::vector<double> uniform4(4, 0.25);
  CHECK(stats::token_entropy(uniform4) == Catch::Approx(std::log(4.0)).margin(1e-12));

  const std::vector<double> onehot{1.0, 0.0, 0.0, 0.0};
  CHECK(stats::token_entropy(onehot) == 0.0);

  const std::vector<double> half{0.5, 0.5, 0.0, 0.0};
  CHECK(stats::token_entropy(half) == Catch::Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("token_entropy: validation", "[token_stats]") {
  CHECK_THROWS_AS(stats::token_entropy(std::vector<double>{0.5, -0.1, 0.6}),
                  ValidationError);
  CHECK_THROWS_AS(stats::token_entropy(std::vector<double>{0.5, 0.4}),
                  ValidationError);
  CHECK_THROWS_AS(stats::token_entropy(std::vector<double>{}), ValidationError);
  // Sum off by less than the 1e-6 tolerance passes.
  CHECK_NOTHROW(stats::token_entropy(std::vector<double>{0.5, 0.5 + 5e-7}));
}

TEST_CASE("token_entropy: sharpening never increases entropy", "[token_stats]") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto z = rng.logits(rng.uniform_int(2, 12));
    const double tau = rng.uniform(0.05, 0.95);
    std::vector<double> sharp(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) sharp[i] = z[i] / tau;
    const double h1 = stats::token_entropy(test_util::softmax(z));
    const double h2 = stats::token_entropy(test_util::softmax(sharp));
    CHECK(h2 <= h1 + 1e-12);
  }
}

TEST_CASE("smooth_entropy_map: fixed point and hand-evaluated neighbors",
          "[token_stats]") {
  EntropyMap constant(3, 4, 1.7);
  const EntropyMap out = stats::smooth_entropy_map(constant);
  for (double v : out.values) CHECK(v == 1.7);

  EntropyMap single(1, 1, 0.42);
  CHECK(stats::smooth_entropy_map(single).values == std::vector<double>{0.42});

  // 2x2 [[1,2],[3,4]]: (0,0) has no neighbors; (0,1) averages {2,1};
  // (1,0) averages {3, up 1, upper-right 2}; (1,1) averages {4,1,2,3}.
  EntropyMap m(2, 2);
  m.at(0, 0) = 1; m.at(0, 1) = 2; m.at(1, 0) = 3; m.at(1, 1) = 4;
  const EntropyMap s = stats::smooth_entropy_map(m);
  CHECK(s.at(0, 0) == Catch::Approx(1.0).margin(1e-15));
  CHECK(s.at(0, 1) == Catch::Approx(1.5).margin(1e-15));
  CHECK(s.at(1, 0) == Catch::Approx(2.0).margin(1e-15));
  CHECK(s.at(1, 1) == Catch::Approx(2.5).margin(1e-15));
}

TEST_CASE("smooth_entropy_map: preserves the global range", "[token_stats]") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    EntropyMap m(rng.uniform_int(1, 6), rng.uniform_int(1, 6));
    for (double& v : m.values) v = rng.uniform(0.0, 3.0);
    const double lo = *std::min_element(m.values.begin(), m.values.end());
    const double hi = *std::max_element(m.values.begin(), m.values.end());
    const EntropyMap s = stats::smooth_entropy_map(m);
    for (double v : s.values) {
      CHECK(v >= lo - 1e-12);
      CHECK(v <= hi + 1e-12);
    }
  }
}

TEST_CASE("entropy_gradient: linear ramp and constant field", "[token_stats]") {
  EntropyMap ramp(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) ramp.at(y, x) = static_cast<double>(x);
  const auto g = stats::entropy_gradient(ramp);
  // g_x = 1 everywhere (central in the interior, one-sided at x borders),
  // g_y = 0 everywhere.
  for (double v : g.values) CHECK(v == Catch::Approx(1.0).margin(1e-15));

  EntropyMap flat(5, 3, 0.9);
  for (double v : stats::entropy_gradient(flat).values) CHECK(v == 0.0);
}

TEST_CASE("entropy_gradient: center spike stencils", "[token_stats]") {
  EntropyMap m(3, 3, 0.0);
  m.at(1, 1) = 9.0;
  const auto g = stats::entropy_gradient(m);
  // Center: central differences cancel. Corners: both one-sided differences
  // see equal zeros. Edge midpoints: the one-sided difference toward the
  // spike is 9.
  CHECK(g.at(1, 1) == 0.0);
  CHECK(g.at(0, 0) == 0.0);
  CHECK(g.at(0, 2) == 0.0);
  CHECK(g.at(2, 0) == 0.0);
  CHECK(g.at(2, 2) == 0.0);
  CHECK(g.at(0, 1) == Catch::Approx(9.0).margin(1e-15));
  CHECK(g.at(1, 0) == Catch::Approx(9.0).margin(1e-15));
  CHECK(g.at(1, 2) == Catch::Approx(9.0).margin(1e-15));
  CHECK(g.at(2, 1) == Catch::Approx(9.0).margin(1e-15));
}

TEST_CASE("entropy_gradient: degenerate grids rejected", "[token_stats]") {
  CHECK_THROWS_AS(stats::entropy_gradient(EntropyMap(1, 5, 0.0)), ValidationError);
  CHECK_THROWS_AS(stats::entropy_gradient(EntropyMap(5, 1, 0.0)), ValidationError);
  CHECK_THROWS_AS(stats::entropy_gradient(EntropyMap(1, 1, 0.0)), ValidationError);
}

namespace {

stats::EmbeddingGroup make_group(int g, int n, int d) {
  stats::EmbeddingGroup out;
  out.group = g;
  out.positions = n;
  out.dim = d;
  out.data.assign(static_cast<std::size_t>(g) * n * d, 0.0);
  return out;
}

void set_embedding(stats::EmbeddingGroup& g, int sample, int pos,
                   const std::vector<double>& e) {
  std::copy(e.begin(), e.end(),
            g.data.begin() +
                (static_cast<std::size_t>(sample) * g.positions + pos) * g.dim);
}

}  // namespace

TEST_CASE("group_similarity: closed-form cases", "[token_stats]") {
  auto g = make_group(3, 2, 2);
  // Position 0: all identical -> 1. Position 1: cosines {1, 0, 0} -> 1/3.
  for (int s = 0; s < 3; ++s) set_embedding(g, s, 0, {1.0, 2.0});
  set_embedding(g, 0, 1, {1.0, 0.0});
  set_embedding(g, 1, 1, {2.0, 0.0});
  set_embedding(g, 2, 1, {0.0, 3.0});
  const auto profile = stats::group_similarity(g);
  CHECK(profile[0] == Catch::Approx(1.0).margin(1e-12));
  CHECK(profile[1] == Catch::Approx(1.0 / 3.0).margin(1e-12));

  auto ortho = make_group(2, 1, 2);
  set_embedding(ortho, 0, 0, {1.0, 0.0});
  set_embedding(ortho, 1, 0, {0.0, 1.0});
  CHECK(stats::group_similarity(ortho)[0] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("group_similarity: zero-norm embedding names the location",
          "[token_stats]") {
  auto g = make_group(2, 3, 2);
  for (int s = 0; s < 2; ++s)
    for (int t = 0; t < 3; ++t) set_embedding(g, s, t, {1.0, 1.0});
  set_embedding(g, 1, 2, {0.0, 0.0});
  try {
    stats::group_similarity(g);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    CHECK(what.find("position 2") != std::string::npos);
    CHECK(what.find("sample 1") != std::string::npos);
  }
  CHECK_THROWS_AS(stats::group_similarity(make_group(1, 2, 2)), ValidationError);
}

TEST_CASE("group_similarity: permutation and positive-scale invariance",
          "[token_stats]") {
  Rng rng(99);
  const int g_count = 4, n = 5, d = 3;
  auto g = make_group(g_count, n, d);
  for (double& v : g.data) v = rng.normal();

  const auto base = stats::group_similarity(g);
  for (double v : base) {
    CHECK(v >= -1.0 - 1e-9);
    CHECK(v <= 1.0 + 1e-9);
  }

  // Swap two samples.
  auto swapped = g;
  for (int t = 0; t < n; ++t) {
    std::vector<double> a(swapped.at(1, t).begin(), swapped.at(1, t).end());
    std::vector<double> b(swapped.at(3, t).begin(), swapped.at(3, t).end());
    set_embedding(swapped, 1, t, b);
    set_embedding(swapped, 3, t, a);
  }
  const auto perm = stats::group_similarity(swapped);
  for (int t = 0; t < n; ++t) CHECK(perm[t] == Catch::Approx(base[t]).margin(1e-12));

  // Positive scaling of one embedding vector.
  auto scaled = g;
  for (int i = 0; i < d; ++i) scaled.data[i] *= 37.5;
  const auto sc = stats::group_similarity(scaled);
  for (int t = 0; t < n; ++t) CHECK(sc[t] == Catch::Approx(base[t]).margin(1e-12));
}

TEST_CASE("operations are pure: identical inputs give identical outputs",
          "[token_stats]") {
  Rng rng(5);
  EntropyMap m(4, 5);
  for (double& v : m.values) v = rng.uniform(0.0, 2.0);
  CHECK(stats::smooth_entropy_map(m).values == stats::smooth_entropy_map(m).values);
  CHECK(stats::entropy_gradient(m).values == stats::entropy_gradient(m).values);

  auto g = make_group(3, 4, 3);
  for (double& v : g.data) v = rng.normal();
  CHECK(stats::group_similarity(g) == stats::group_similarity(g));

  const auto p = rng.probs(6);
  CHECK(stats::token_entropy(p) == stats::token_entropy(p));
}
