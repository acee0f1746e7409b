#pragma once

// Shared test helpers: random instance generators and the central
// finite-difference oracle used by every gradient check. The oracle only
// evaluates the function under test; it never touches analytic gradients.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace test_util {

/// Central finite differences of f at x, step h per coordinate.
inline std::vector<double> finite_difference(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h = 1e-5) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// Mixed absolute/relative closeness, the usual gradient-check criterion.
inline bool close(double a, double b, double rtol = 1e-5, double atol = 1e-7) {
  return std::abs(a - b) <= atol + rtol * std::max(std::abs(a), std::abs(b));
}

inline double max_mismatch(std::span<const double> a, std::span<const double> b,
                           double rtol = 1e-5, double atol = 1e-7) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = atol + rtol * std::max(std::abs(a[i]), std::abs(b[i]));
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;  // <= 1 means everything within tolerance
}

struct Rng {
  std::mt19937_64 engine;
  explicit Rng(std::uint64_t seed) : engine(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine);
  }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    return std::uniform_int_distribution<int>(lo, hi)(engine);
  }

  std::vector<double> probs(int n) {
    std::vector<double> p(n);
    double sum = 0.0;
    for (double& x : p) {
      x = -std::log(uniform(1e-12, 1.0));  // exponential -> Dirichlet(1)
      sum += x;
    }
    for (double& x : p) x /= sum;
    return p;
  }

  std::vector<double> logits(int n, double scale = 2.0) {
    std::vector<double> z(n);
    for (double& x : z) x = normal(0.0, scale);
    return z;
  }
};

inline std::vector<double> softmax(std::span<const double> logits) {
  double m = logits[0];
  for (double z : logits) m = std::max(m, z);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return p;
}

}  // namespace test_util
