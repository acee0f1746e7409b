#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gcpo/error.hpp"

namespace gcpo::advantage {

/// Log-probabilities of the sampled tokens under the updating policy and the
/// frozen reference, evaluated on the same sequence.
struct ConfidenceTrace {
  std::vector<double> policy_logprob;
  std::vector<double> ref_logprob;
};

/// How the raw cumulative divergence turns into the weight that multiplies the
/// clipped surrogate. Offset keeps the weight at 1 when policy == reference,
/// so the weighted objective starts out as the plain group-relative one.
enum class WeightMode {
  kOffset,   // effective = 1 + raw (default)
  kLiteral,  // effective = raw
  kAbs,      // effective = |raw|
  kUnit,     // effective = 1; disables weighting, raw still reported
};

struct WeightVector {
  std::vector<double> raw;        // cumulative clipped divergence, |raw| <= eps_w
  std::vector<double> effective;  // raw mapped through the configured mode
};

/// Group-standardized advantages: (r_i − mean) / population std, shared by
/// every token of sample i. Groups whose spread is below `std_floor` carry no
/// ranking signal and get all-zero advantages instead of amplified noise.
inline std::vector<double> group_advantage(std::span<const double> rewards,
                                           double std_floor = 1e-6) {
  if (rewards.size() < 2) {
    throw ValidationError("group_advantage: need at least 2 rewards, got " +
                          std::to_string(rewards.size()));
  }
  if (!(std_floor > 0.0)) {
    throw ValidationError("group_advantage: std_floor must be positive");
  }
  double mean = 0.0;
  for (double r : rewards) {
    if (!std::isfinite(r)) {
      throw ValidationError("group_advantage: non-finite reward");
    }
    mean += r;
  }
  mean /= static_cast<double>(rewards.size());
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std = std::sqrt(var / static_cast<double>(rewards.size()));

  std::vector<double> out(rewards.size(), 0.0);
  if (std < std_floor) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out[i] = (rewards[i] - mean) / std;
  }
  return out;
}

/// Dynamic per-token advantage weights: raw[t] is the running mean of the
/// clipped confidence divergence over positions 1..t (1-based), so
/// |raw[t]| <= eps_w everywhere and raw == 0 while policy == reference.
inline WeightVector dynamic_weights(const ConfidenceTrace& trace, double eps_w,
                                    WeightMode mode = WeightMode::kOffset) {
  if (!(eps_w > 0.0)) {
    throw ConfigError("dynamic_weights: eps_w must be positive, got " +
                      std::to_string(eps_w));
  }
  if (trace.policy_logprob.size() != trace.ref_logprob.size()) {
    throw ValidationError("dynamic_weights: trace length mismatch");
  }
  const std::size_t n = trace.policy_logprob.size();
  WeightVector out;
  out.raw.resize(n);
  out.effective.resize(n);
  double cumulative = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double diff = trace.policy_logprob[t] - trace.ref_logprob[t];
    if (!std::isfinite(diff)) {
      throw ValidationError("dynamic_weights: non-finite divergence at position " +
                            std::to_string(t));
    }
    cumulative += std::clamp(diff, -eps_w, eps_w);
    out.raw[t] = cumulative / static_cast<double>(t + 1);
    switch (mode) {
      case WeightMode::kOffset:
        out.effective[t] = 1.0 + out.raw[t];
        break;
      case WeightMode::kLiteral:
        out.effective[t] = out.raw[t];
        break;
      case WeightMode::kAbs:
        out.effective[t] = std::abs(out.raw[t]);
        break;
      case WeightMode::kUnit:
        out.effective[t] = 1.0;
        break;
    }
  }
  return out;
}

}  // namespace gcpo::advantage
