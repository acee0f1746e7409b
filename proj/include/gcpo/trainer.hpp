#pragma once

#include <atomic>
#include <cmath>
#include <limits>
#include <cstdint>
#include <exception>
#include <fstream>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "gcpo/advantage.hpp"
#include "gcpo/config.hpp"
#include "gcpo/error.hpp"
#include "gcpo/objective.hpp"
#include "gcpo/policy.hpp"
#include "gcpo/rewards.hpp"
#include "gcpo/rng.hpp"
#include "gcpo/selection.hpp"
#include "gcpo/token_stats.hpp"

namespace gcpo::trainer {

// Training loop: sample a group per prompt from the pre-update policy, score,
// standardize advantages, build the selection mask from the sampling-time
// statistics, weight by confidence divergence, and apply the masked clipped
// surrogate with an Adam update. Gradients are reduced over per-sample buffers
// in a fixed order, so results are identical for any --threads value.

struct StepMetrics {
  std::uint64_t step = 0;
  double mean_reward = 0.0;
  double loss = 0.0;
  double surrogate = 0.0;
  double kl = 0.0;
  double effective_selection_ratio = 0.0;
  double mean_effective_weight = 0.0;
  double mean_entropy = 0.0;
  double clipped_fraction = 0.0;
  // Weight-vector statistics for the pass; raw is zero on unit-weight arms.
  double weight_raw_mean = 0.0;
  double weight_raw_min = 0.0;
  double weight_raw_max = 0.0;
  double weight_effective_min = 1.0;
  double weight_effective_max = 1.0;
};

inline nlohmann::json to_json(const StepMetrics& m) {
  return nlohmann::json{
      {"step", m.step},
      {"mean_reward", m.mean_reward},
      {"loss", m.loss},
      {"surrogate", m.surrogate},
      {"kl", m.kl},
      {"effective_selection_ratio", m.effective_selection_ratio},
      {"mean_effective_weight", m.mean_effective_weight},
      {"mean_entropy", m.mean_entropy},
      {"clipped_fraction", m.clipped_fraction},
      {"weight_raw_mean", m.weight_raw_mean},
      {"weight_raw_min", m.weight_raw_min},
      {"weight_raw_max", m.weight_raw_max},
      {"weight_effective_min", m.weight_effective_min},
      {"weight_effective_max", m.weight_effective_max},
  };
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(std::size_t size) : m(size, 0.0), v(size, 0.0) {}

  void update(std::span<double> params, std::span<const double> grad, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

/// Scale the gradient so its global L2 norm does not exceed max_norm.
/// Returns the pre-clip norm.
inline double clip_grad_norm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& g : grad) g *= scale;
  }
  return norm;
}

namespace detail {

/// Run fn(0..n-1); worker threads claim indices from a shared counter. Any
/// exception is rethrown on the caller after all workers join.
template <class Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int count = std::min(threads, n);
  pool.reserve(count);
  for (int t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

class Trainer {
 public:
  explicit Trainer(const config::TrainConfig& cfg)
      : cfg_(cfg),
        params_(policy::Params::init(
            {cfg.vocab, cfg.seq_len(), cfg.num_prompts(), cfg.embed_dim},
            cfg.seed)),
        ref_(params_),
        adam_(params_.flat().size()) {}

  const config::TrainConfig& cfg() const { return cfg_; }
  const policy::Params& params() const { return params_; }
  const policy::Params& reference() const { return ref_; }
  std::uint64_t optimizer_steps() const { return opt_step_; }

  /// One sampling round: a fresh batch of groups plus inner_epochs optimizer
  /// passes over it. Returns one metrics record per optimizer pass.
  std::vector<StepMetrics> step() {
    const int prompts = cfg_.num_prompts();
    const int g = cfg_.group_size;
    const int n = cfg_.seq_len();
    const int total = prompts * g;

    // --- Sample the batch from the pre-update policy. ---
    std::vector<policy::RolloutRecord> records(total);
    detail::parallel_for(total, cfg_.threads, [&](int idx) {
      const int q = idx / g;
      const int i = idx % g;
      records[idx] = policy::sample_rollout(
          params_, cfg_.grid_h, cfg_.grid_w, q,
          rng::derive(cfg_.seed, rng::kRollout, round_, q, i), cfg_.temperature);
    });

    std::vector<double> batch_rewards(total);
    for (int idx = 0; idx < total; ++idx) {
      batch_rewards[idx] =
          rewards::evaluate(cfg_.prompts[idx / g], records[idx].grid);
    }
    std::vector<std::vector<double>> advantages(prompts);
    for (int q = 0; q < prompts; ++q) {
      advantages[q] = advantage::group_advantage(
          std::span<const double>(batch_rewards.data() + q * g, g), cfg_.std_floor);
    }

    // --- Selection masks from the sampling-time statistics; fixed for the
    // whole round. ---
    std::vector<std::vector<std::uint8_t>> masks(total);
    double ratio_sum = 0.0;
    for (int q = 0; q < prompts; ++q) {
      build_group_masks(q, records, masks, ratio_sum);
    }
    const double selection_ratio = ratio_sum / total;

    double entropy_sum = 0.0;
    for (const auto& rec : records) {
      for (int t = 0; t < n; ++t) {
        entropy_sum += stats::token_entropy(std::span<const double>(
            rec.probs.data() + static_cast<std::size_t>(t) * cfg_.vocab,
            static_cast<std::size_t>(cfg_.vocab)));
      }
    }
    const double mean_entropy = entropy_sum / (static_cast<double>(total) * n);

    // Reference log-probs are policy-independent; compute once per round.
    std::vector<std::vector<double>> ref_logprobs(total);
    detail::parallel_for(total, cfg_.threads, [&](int idx) {
      ref_logprobs[idx] =
          policy::teacher_forward(ref_, records[idx].grid, records[idx].prompt_id,
                                  cfg_.temperature)
              .logprobs;
    });

    const double mean_reward = mean_of(batch_rewards);
    const objective::ObjectiveConfig ocfg{cfg_.clip_eps, cfg_.beta,
                                          cfg_.kl_full_sequence,
                                          cfg_.normalize_by_selected};

    std::vector<StepMetrics> out;
    out.reserve(cfg_.inner_epochs);
    for (int pass = 0; pass < cfg_.inner_epochs; ++pass) {
      // --- Current-policy forward per sample. ---
      std::vector<policy::TeacherForward> fwd(total);
      detail::parallel_for(total, cfg_.threads, [&](int idx) {
        fwd[idx] = policy::teacher_forward(params_, records[idx].grid,
                                           records[idx].prompt_id,
                                           cfg_.temperature);
      });

      // --- Per-prompt group losses. ---
      double loss_sum = 0.0, surr_sum = 0.0, kl_sum = 0.0, clip_sum = 0.0;
      double weight_sum = 0.0, raw_sum = 0.0;
      double raw_min = std::numeric_limits<double>::infinity();
      double raw_max = -std::numeric_limits<double>::infinity();
      double eff_min = std::numeric_limits<double>::infinity();
      double eff_max = -std::numeric_limits<double>::infinity();
      std::vector<std::vector<std::vector<double>>> grad_logits(prompts);
      for (int q = 0; q < prompts; ++q) {
        std::vector<objective::SampleInputs> group(g);
        for (int i = 0; i < g; ++i) {
          const int idx = q * g + i;
          objective::SampleInputs& s = group[i];
          s.logprob_new = fwd[idx].logprobs;
          s.logprob_old = records[idx].logprob_old;
          s.logprob_ref = ref_logprobs[idx];
          s.probs_new = fwd[idx].probs;
          s.tokens = records[idx].grid.tokens;
          s.mask = masks[idx];
          s.advantage = advantages[q][i];
          advantage::WeightVector wv =
              sample_weights(fwd[idx].logprobs, ref_logprobs[idx]);
          weight_sum += mean_of(wv.effective);
          raw_sum += mean_of(wv.raw);
          for (int t = 0; t < n; ++t) {
            raw_min = std::min(raw_min, wv.raw[t]);
            raw_max = std::max(raw_max, wv.raw[t]);
            eff_min = std::min(eff_min, wv.effective[t]);
            eff_max = std::max(eff_max, wv.effective[t]);
          }
          s.weights = std::move(wv.effective);
        }
        objective::LossBreakdown lb = objective::gcpo_loss(group, ocfg, cfg_.vocab);
        loss_sum += lb.total;
        surr_sum += lb.surrogate;
        kl_sum += lb.kl;
        clip_sum += lb.clipped_fraction;
        grad_logits[q] = std::move(lb.grad_logits);
      }

      // --- Chain into parameter gradients, fixed reduction order. ---
      const std::size_t psize = params_.flat().size();
      std::vector<std::vector<double>> sample_grads(
          total, std::vector<double>(psize, 0.0));
      detail::parallel_for(total, cfg_.threads, [&](int idx) {
        const int q = idx / g;
        const int i = idx % g;
        policy::accumulate_param_grad(params_, records[idx].grid,
                                      records[idx].prompt_id,
                                      grad_logits[q][i], cfg_.temperature,
                                      sample_grads[idx]);
      });
      std::vector<double> grad(psize, 0.0);
      for (int idx = 0; idx < total; ++idx) {
        const auto& sg = sample_grads[idx];
        for (std::size_t j = 0; j < psize; ++j) grad[j] += sg[j];
      }
      const double inv_prompts = 1.0 / prompts;  // batch loss is the prompt mean
      for (double& x : grad) x *= inv_prompts;

      const double loss = loss_sum * inv_prompts;
      const double pre_clip_norm = clip_grad_norm(grad, cfg_.grad_norm_clip);
      if (!std::isfinite(loss) || !std::isfinite(pre_clip_norm)) {
        abort_with_dump(loss, pre_clip_norm, batch_rewards, pass);
      }
      adam_.update(params_.flat(), grad, cfg_.learning_rate);
      ++opt_step_;

      StepMetrics m;
      m.step = opt_step_;
      m.mean_reward = mean_reward;
      m.loss = loss;
      m.surrogate = surr_sum * inv_prompts;
      m.kl = kl_sum * inv_prompts;
      m.effective_selection_ratio = selection_ratio;
      m.mean_effective_weight = weight_sum / total;
      m.mean_entropy = mean_entropy;
      m.clipped_fraction = clip_sum * inv_prompts;
      m.weight_raw_mean = raw_sum / total;
      m.weight_raw_min = raw_min;
      m.weight_raw_max = raw_max;
      m.weight_effective_min = eff_min;
      m.weight_effective_max = eff_max;
      out.push_back(m);
    }

    ++round_;
    return out;
  }

 private:
  static double mean_of(std::span<const double> xs) {
    double sum = 0.0;
    for (double x : xs) sum += x;
    return xs.empty() ? 0.0 : sum / static_cast<double>(xs.size());
  }

  advantage::WeightVector sample_weights(
      const std::vector<double>& logprob_new,
      const std::vector<double>& logprob_ref) const {
    if (cfg_.method != config::Method::kGcpo) {
      advantage::WeightVector unit;
      unit.raw.assign(logprob_new.size(), 0.0);
      unit.effective.assign(logprob_new.size(), 1.0);
      return unit;
    }
    advantage::ConfidenceTrace trace{logprob_new, logprob_ref};
    return advantage::dynamic_weights(trace, cfg_.eps_w, cfg_.weight_mode);
  }

  /// Critical mask per sample, then the arm-specific variant: full, random
  /// with matched count, or complement.
  void build_group_masks(int q, const std::vector<policy::RolloutRecord>& records,
                         std::vector<std::vector<std::uint8_t>>& masks,
                         double& ratio_sum) {
    const int g = cfg_.group_size;
    const int n = cfg_.seq_len();

    if (cfg_.method == config::Method::kGrpoFull) {
      for (int i = 0; i < g; ++i) {
        masks[q * g + i].assign(n, 1);
        ratio_sum += 1.0;
      }
      return;
    }

    const std::vector<int> init = selection::select_initial(n, cfg_.budget);

    stats::EmbeddingGroup embeds;
    embeds.group = g;
    embeds.positions = n;
    embeds.dim = cfg_.embed_dim;
    embeds.data.resize(static_cast<std::size_t>(g) * n * cfg_.embed_dim);
    for (int i = 0; i < g; ++i) {
      std::copy(records[q * g + i].embeddings.begin(),
                records[q * g + i].embeddings.end(),
                embeds.data.begin() +
                    static_cast<std::size_t>(i) * n * cfg_.embed_dim);
    }
    const std::vector<double> similarity = stats::group_similarity(embeds);
    const std::vector<int> diverse = selection::select_diverse(similarity, cfg_.budget);

    std::vector<selection::Mask> critical(g);
    for (int i = 0; i < g; ++i) {
      const int idx = q * g + i;
      const stats::EntropyMap entropy = stats::entropy_map_from_probs(
          records[idx].probs, cfg_.grid_h, cfg_.grid_w, cfg_.vocab);
      const stats::GradientMap gradient =
          stats::entropy_gradient(stats::smooth_entropy_map(entropy));
      const std::vector<int> structural =
          selection::select_structural(gradient, cfg_.budget);
      critical[i] = selection::build_mask(init, structural, diverse, n);
    }

    // The random arm is a selection *strategy* baseline: one shared position
    // set per group and step, count-matched to the critical union. Per-sample
    // independent draws would cover nearly every position each step and turn
    // the arm into token dropout instead.
    std::vector<std::uint8_t> shared_random;
    if (cfg_.method == config::Method::kGrpoRandomMask) {
      long count_sum = 0;
      for (int i = 0; i < g; ++i) count_sum += critical[i].count();
      const int k = static_cast<int>(
          (count_sum + g / 2) / g);  // rounded mean union size
      shared_random =
          random_mask(k, n, rng::derive(cfg_.seed, rng::kRandomMask, round_, q));
    }

    for (int i = 0; i < g; ++i) {
      const int idx = q * g + i;
      switch (cfg_.method) {
        case config::Method::kGcpo:
          masks[idx] = critical[i].selected;
          break;
        case config::Method::kGrpoRandomMask:
          masks[idx] = shared_random;
          break;
        case config::Method::kGrpoOtherTokens: {
          masks[idx].assign(n, 0);
          for (int t = 0; t < n; ++t)
            masks[idx][t] = critical[i].selected[t] ? 0 : 1;
          break;
        }
        case config::Method::kGrpoFull:
          break;  // handled above
      }
      int count = 0;
      for (auto b : masks[idx]) count += b;
      ratio_sum += static_cast<double>(count) / n;
    }
  }

  /// k distinct positions via a keyed partial Fisher-Yates shuffle.
  static std::vector<std::uint8_t> random_mask(int k, int n, std::uint64_t key) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int j = 0; j < k; ++j) {
      const int r = j + static_cast<int>(rng::uniform01(key, j) * (n - j));
      std::swap(order[j], order[r]);
    }
    std::vector<std::uint8_t> mask(n, 0);
    for (int j = 0; j < k; ++j) mask[order[j]] = 1;
    return mask;
  }

  [[noreturn]] void abort_with_dump(double loss, double grad_norm,
                                    const std::vector<double>& rewards,
                                    int pass) const {
    nlohmann::json dump{
        {"round", round_},         {"optimizer_step", opt_step_},
        {"inner_pass", pass},      {"loss", loss},
        {"grad_norm", grad_norm},  {"rewards", rewards},
        {"method", config::to_string(cfg_.method)},
    };
    throw TrainingAbort("non-finite loss or gradient: " + dump.dump());
  }

  config::TrainConfig cfg_;
  policy::Params params_;
  policy::Params ref_;
  AdamState adam_;
  std::uint64_t round_ = 0;
  std::uint64_t opt_step_ = 0;
};

// ---------------------------------------------------------------------------
// Full runs
// ---------------------------------------------------------------------------

struct RunArtifacts {
  std::vector<StepMetrics> metrics;
  std::string metrics_path;
  std::string checkpoint_path;
};

/// Execute a full run into an existing directory: metrics.jsonl with one
/// record per optimizer step and the final parameters as checkpoint_final.bin.
/// Deterministic given the config (including its seed).
inline RunArtifacts run_training(const config::TrainConfig& cfg,
                                 const std::string& run_dir) {
  RunArtifacts art;
  art.metrics_path = run_dir + "/metrics.jsonl";
  art.checkpoint_path = run_dir + "/checkpoint_final.bin";

  std::ofstream metrics_out(art.metrics_path, std::ios::binary);
  if (!metrics_out) throw IoError("cannot open for writing: " + art.metrics_path);

  Trainer trainer(cfg);
  for (int s = 0; s < cfg.steps; ++s) {
    std::vector<StepMetrics> round;
    try {
      round = trainer.step();
    } catch (const TrainingAbort& e) {
      std::ofstream dump(run_dir + "/abort_dump.json", std::ios::binary);
      if (dump) dump << e.what() << '\n';
      throw;
    }
    for (const StepMetrics& m : round) {
      metrics_out << to_json(m).dump() << '\n';
      art.metrics.push_back(m);
    }
  }
  metrics_out.flush();
  if (!metrics_out) throw IoError("write failed: " + art.metrics_path);
  policy::save_checkpoint(trainer.params(), art.checkpoint_path);
  return art;
}

}  // namespace gcpo::trainer
