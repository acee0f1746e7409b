#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gcpo/error.hpp"

namespace gcpo::objective {

// Clipped importance-ratio surrogates over a group of sampled sequences,
// minimization convention: loss = -(surrogate objective) + beta * KL.
// Gradients are returned per position with respect to the policy's (tempered)
// logits; chaining them into parameters is the policy's job.

/// Per-position log-probs of the sampled tokens under the updating policy and
/// the rollout-time policy.
struct RatioInputs {
  std::vector<double> logprob_new;
  std::vector<double> logprob_old;
};

struct ObjectiveConfig {
  double clip_eps = 0.2;  // importance-ratio clip half-width
  double beta = 0.01;     // KL coefficient
  // KL scope: by default the KL term sits inside the selection mask along
  // with the surrogate; this flag charges it at every position instead.
  bool kl_full_sequence = false;
  // Divide each sample's sum by its selected-token count instead of the full
  // sequence length.
  bool normalize_by_selected = false;
};

/// One sample's contribution to the group loss.
struct SampleInputs {
  std::vector<double> logprob_new;   // N, under pi_theta, sampled tokens
  std::vector<double> logprob_old;   // N, under pi_old
  std::vector<double> logprob_ref;   // N, under pi_ref
  std::vector<double> probs_new;     // N*V current-policy distributions
  std::vector<int> tokens;           // N sampled ids
  std::vector<std::uint8_t> mask;    // N selection indicator
  std::vector<double> weights;       // N effective advantage weights
  double advantage = 0.0;            // group-standardized, shared over tokens
};

struct LossBreakdown {
  double total = 0.0;      // -surrogate + beta * kl
  double surrogate = 0.0;  // masked weighted clipped-surrogate mean
  double kl = 0.0;         // KL estimate at matching normalization (no beta)
  double clipped_fraction = 0.0;  // of in-scope tokens, how many hit the clip
  int saturated_ratios = 0;       // log-ratio magnitude exceeded kMaxLogRatio
  std::vector<std::vector<double>> grad_logits;  // per sample: N*V, d(total)/dz
};

inline constexpr double kMaxLogRatio = 30.0;

/// Per-token probability ratios exp(logprob_new − logprob_old). Log
/// differences beyond ±30 are saturated and counted in *saturated_count.
inline std::vector<double> importance_ratio(const RatioInputs& inp,
                                            int* saturated_count = nullptr) {
  if (inp.logprob_new.size() != inp.logprob_old.size()) {
    throw ValidationError("importance_ratio: length mismatch");
  }
  std::vector<double> out(inp.logprob_new.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    double d = inp.logprob_new[t] - inp.logprob_old[t];
    if (!std::isfinite(d)) {
      throw ValidationError("importance_ratio: non-finite log difference at " +
                            std::to_string(t));
    }
    if (std::abs(d) > kMaxLogRatio) {
      if (saturated_count) ++(*saturated_count);
      d = std::clamp(d, -kMaxLogRatio, kMaxLogRatio);
    }
    out[t] = std::exp(d);
  }
  return out;
}

/// Non-negative KL estimate on the sampled tokens: mean over positions of
/// exp(lr − ln) − (lr − ln) − 1. Zero exactly when the log-prob vectors match.
inline double kl_k3(std::span<const double> logprob_new,
                    std::span<const double> logprob_ref) {
  if (logprob_new.size() != logprob_ref.size()) {
    throw ValidationError("kl_k3: length mismatch");
  }
  if (logprob_new.empty()) throw ValidationError("kl_k3: empty inputs");
  double acc = 0.0;
  for (std::size_t t = 0; t < logprob_new.size(); ++t) {
    const double d = logprob_ref[t] - logprob_new[t];
    acc += std::exp(d) - d - 1.0;
  }
  return acc / static_cast<double>(logprob_new.size());
}

namespace detail {

inline double k3_term(double logprob_new, double logprob_ref) {
  const double d = logprob_ref - logprob_new;
  return std::exp(d) - d - 1.0;
}

// d/d(logprob_new) of the k3 term.
inline double k3_term_grad(double logprob_new, double logprob_ref) {
  return 1.0 - std::exp(logprob_ref - logprob_new);
}

inline void check_sample(const SampleInputs& s, int vocab,
                         const char* caller) {
  const std::size_t n = s.logprob_new.size();
  if (s.logprob_old.size() != n || s.logprob_ref.size() != n ||
      s.tokens.size() != n || s.mask.size() != n || s.weights.size() != n ||
      s.probs_new.size() != n * static_cast<std::size_t>(vocab)) {
    throw ValidationError(std::string(caller) + ": misaligned sample lengths");
  }
  if (n == 0) throw ValidationError(std::string(caller) + ": empty sample");
}

// Surrogate term and its d/d(logprob_new) for one token. The min picks the
// unclipped branch on exact ties, so its gradient r*A flows; when the clipped
// branch wins, the ratio sits outside the clip band and the gradient is zero.
struct SurrogateTerm {
  double value = 0.0;
  double grad_logprob = 0.0;
  bool clipped = false;
};

inline SurrogateTerm surrogate_term(double logprob_new, double logprob_old,
                                    double adv, double clip_eps,
                                    int* saturated) {
  double d = logprob_new - logprob_old;
  bool sat = false;
  if (std::abs(d) > kMaxLogRatio) {
    sat = true;
    if (saturated) ++(*saturated);
    d = std::clamp(d, -kMaxLogRatio, kMaxLogRatio);
  }
  const double r = std::exp(d);
  const double unclipped = r * adv;
  const double clipped = std::clamp(r, 1.0 - clip_eps, 1.0 + clip_eps) * adv;
  SurrogateTerm out;
  if (unclipped <= clipped) {
    out.value = unclipped;
    out.grad_logprob = sat ? 0.0 : r * adv;
  } else {
    out.value = clipped;
    out.grad_logprob = 0.0;
    out.clipped = true;
  }
  return out;
}

}  // namespace detail

/// Group loss with per-token selection mask and advantage weights. The
/// objective is (1/G) Σ_i (1/N) Σ_t 1[t selected] (w_t · min(r_t·A, clip(r_t)·A)
/// − β·KL_t); the returned gradients are of the (minimized) loss with respect
/// to each position's tempered logits, via d(logprob)/d(logit_k) = 1[k=token]
/// − p_k. Unselected positions get zero surrogate gradient.
inline LossBreakdown gcpo_loss(std::span<const SampleInputs> group,
                               const ObjectiveConfig& cfg, int vocab) {
  if (group.empty()) throw ValidationError("gcpo_loss: empty group");
  if (!(cfg.clip_eps > 0.0 && cfg.clip_eps < 1.0)) {
    throw ConfigError("gcpo_loss: clip_eps must lie in (0, 1)");
  }
  if (!(cfg.beta >= 0.0) || !std::isfinite(cfg.beta)) {
    throw ConfigError("gcpo_loss: beta must be finite and >= 0");
  }

  LossBreakdown out;
  out.grad_logits.reserve(group.size());
  const double inv_g = 1.0 / static_cast<double>(group.size());
  long clip_hits = 0;
  long clip_scope = 0;

  for (const SampleInputs& s : group) {
    detail::check_sample(s, vocab, "gcpo_loss");
    const int n = static_cast<int>(s.logprob_new.size());
    int selected = 0;
    for (auto m : s.mask) selected += m;
    double norm;
    if (cfg.normalize_by_selected) {
      norm = selected > 0 ? static_cast<double>(selected) : 1.0;
    } else {
      norm = static_cast<double>(n);
    }
    const double scale = inv_g / norm;  // d(objective)/d(per-token term)

    std::vector<double> grad(static_cast<std::size_t>(n) * vocab, 0.0);
    for (int t = 0; t < n; ++t) {
      const bool in_mask = s.mask[t] != 0;
      double grad_lp = 0.0;  // d(objective)/d(logprob_new[t])

      if (in_mask) {
        const auto surr =
            detail::surrogate_term(s.logprob_new[t], s.logprob_old[t],
                                   s.advantage, cfg.clip_eps,
                                   &out.saturated_ratios);
        out.surrogate += scale * s.weights[t] * surr.value;
        grad_lp += s.weights[t] * surr.grad_logprob;
        ++clip_scope;
        if (surr.clipped) ++clip_hits;
      }
      const bool kl_here = cfg.kl_full_sequence || in_mask;
      if (kl_here) {
        const double k = detail::k3_term(s.logprob_new[t], s.logprob_ref[t]);
        out.kl += scale * k;
        grad_lp -= cfg.beta * detail::k3_term_grad(s.logprob_new[t], s.logprob_ref[t]);
      }

      if (grad_lp != 0.0) {
        // loss = -objective, so flip the sign while chaining through softmax.
        const double g = -scale * grad_lp;
        const double* p = s.probs_new.data() + static_cast<std::size_t>(t) * vocab;
        double* gt = grad.data() + static_cast<std::size_t>(t) * vocab;
        for (int k = 0; k < vocab; ++k) gt[k] = -g * p[k];
        gt[s.tokens[t]] += g;
      }
    }
    out.grad_logits.push_back(std::move(grad));
  }

  out.total = -out.surrogate + cfg.beta * out.kl;
  out.clipped_fraction =
      clip_scope > 0 ? static_cast<double>(clip_hits) / clip_scope : 0.0;
  return out;
}

/// Plain group-relative loss: every token in scope, unit weights. Kept as its
/// own straight-line implementation so the reduction identity against
/// gcpo_loss is a real cross-check rather than a tautology.
inline LossBreakdown grpo_loss(std::span<const SampleInputs> group,
                               const ObjectiveConfig& cfg, int vocab) {
  if (group.empty()) throw ValidationError("grpo_loss: empty group");
  if (!(cfg.clip_eps > 0.0 && cfg.clip_eps < 1.0)) {
    throw ConfigError("grpo_loss: clip_eps must lie in (0, 1)");
  }
  if (!(cfg.beta >= 0.0) || !std::isfinite(cfg.beta)) {
    throw ConfigError("grpo_loss: beta must be finite and >= 0");
  }

  LossBreakdown out;
  out.grad_logits.reserve(group.size());
  const double inv_g = 1.0 / static_cast<double>(group.size());
  long clip_hits = 0;
  long clip_scope = 0;

  for (const SampleInputs& s : group) {
    detail::check_sample(s, vocab, "grpo_loss");
    const int n = static_cast<int>(s.logprob_new.size());
    const double scale = inv_g / static_cast<double>(n);

    std::vector<double> grad(static_cast<std::size_t>(n) * vocab, 0.0);
    for (int t = 0; t < n; ++t) {
      const auto surr =
          detail::surrogate_term(s.logprob_new[t], s.logprob_old[t],
                                 s.advantage, cfg.clip_eps,
                                 &out.saturated_ratios);
      out.surrogate += scale * surr.value;
      const double k = detail::k3_term(s.logprob_new[t], s.logprob_ref[t]);
      out.kl += scale * k;
      ++clip_scope;
      if (surr.clipped) ++clip_hits;

      const double grad_lp =
          surr.grad_logprob -
          cfg.beta * detail::k3_term_grad(s.logprob_new[t], s.logprob_ref[t]);
      if (grad_lp != 0.0) {
        const double g = -scale * grad_lp;
        const double* p = s.probs_new.data() + static_cast<std::size_t>(t) * vocab;
        double* gt = grad.data() + static_cast<std::size_t>(t) * vocab;
        for (int k2 = 0; k2 < vocab; ++k2) gt[k2] = -g * p[k2];
        gt[s.tokens[t]] += g;
      }
    }
    out.grad_logits.push_back(std::move(grad));
  }

  out.total = -out.surrogate + cfg.beta * out.kl;
  out.clipped_fraction =
      clip_scope > 0 ? static_cast<double>(clip_hits) / clip_scope : 0.0;
  return out;
}

}  // namespace gcpo::objective
