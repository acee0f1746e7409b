#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gcpo/error.hpp"
#include "gcpo/grid.hpp"
#include "gcpo/policy.hpp"
#include "gcpo/rewards.hpp"
#include "gcpo/rng.hpp"
#include "gcpo/selection.hpp"
#include "gcpo/token_stats.hpp"

namespace gcpo::analysis {

// Observation studies on a checkpoint: how far perturbations propagate
// downstream, how entropy splits across reward-defined regions, and CSV
// exports of the per-position maps behind the selection pipeline.

// ---------------------------------------------------------------------------
// Perturbation propagation
// ---------------------------------------------------------------------------

struct RangeSpec {
  int start = 0;
  int count = 0;
};

struct PerturbationSpec {
  RangeSpec early;
  RangeSpec middle;
  double noise_scale = 3.0;
  int trials = 20;
  int prompt_id = 0;
  std::uint64_t seed = 0;
  double temperature = 1.0;
};

struct RangeResult {
  RangeSpec range;
  double mean_divergence = 0.0;  // Hamming fraction over downstream positions
};

struct PerturbationReport {
  RangeResult early;
  RangeResult middle;
  double difference = 0.0;  // early minus middle
  double noise_scale = 0.0;
  int trials = 0;
};

inline nlohmann::json to_json(const PerturbationReport& r) {
  auto range_json = [](const RangeResult& rr) {
    return nlohmann::json{{"start", rr.range.start},
                          {"count", rr.range.count},
                          {"mean_divergence", rr.mean_divergence}};
  };
  return nlohmann::json{{"early", range_json(r.early)},
                        {"middle", range_json(r.middle)},
                        {"difference", r.difference},
                        {"noise_scale", r.noise_scale},
                        {"trials", r.trials}};
}

/// Mean downstream Hamming divergence per perturbed range. Each trial samples
/// a baseline rollout, re-generates one range with logit noise under the same
/// position-keyed seed, and counts how many positions after the range differ.
inline PerturbationReport perturbation_study(const policy::Params& params, int h,
                                             int w, const PerturbationSpec& spec) {
  const int n = params.dims().seq_len;
  auto check_range = [&](const RangeSpec& r, const char* name) {
    if (r.start < 0 || r.count < 1 || r.start + r.count > n) {
      throw ValidationError(std::string("perturbation_study: ") + name +
                            " range [" + std::to_string(r.start) + ", " +
                            std::to_string(r.start + r.count) +
                            ") invalid for sequence of length " +
                            std::to_string(n));
    }
  };
  check_range(spec.early, "early");
  check_range(spec.middle, "middle");
  const int early_end = spec.early.start + spec.early.count;
  const int middle_end = spec.middle.start + spec.middle.count;
  if (spec.early.start < middle_end && spec.middle.start < early_end) {
    throw ValidationError("perturbation_study: ranges overlap");
  }
  if (spec.trials < 1) {
    throw ValidationError("perturbation_study: trials must be >= 1");
  }
  if (early_end >= n || middle_end >= n) {
    throw ValidationError("perturbation_study: a range leaves no downstream "
                          "positions to measure");
  }

  auto divergence = [&](const RangeSpec& range) {
    double acc = 0.0;
    for (int trial = 0; trial < spec.trials; ++trial) {
      const std::uint64_t trial_seed =
          rng::derive(spec.seed, rng::kTrial, trial);
      const policy::RolloutRecord base = policy::sample_rollout(
          params, h, w, spec.prompt_id, trial_seed, spec.temperature);
      const TokenGrid perturbed = policy::perturb_and_resample(
          params, base, range.start, range.count, spec.noise_scale, trial_seed,
          spec.temperature);
      const int from = range.start + range.count;
      int diff = 0;
      for (int t = from; t < n; ++t) {
        diff += base.grid.tokens[t] != perturbed.tokens[t];
      }
      acc += static_cast<double>(diff) / (n - from);
    }
    return acc / spec.trials;
  };

  PerturbationReport report;
  report.early = {spec.early, divergence(spec.early)};
  report.middle = {spec.middle, divergence(spec.middle)};
  report.difference = report.early.mean_divergence - report.middle.mean_divergence;
  report.noise_scale = spec.noise_scale;
  report.trials = spec.trials;
  return report;
}

// ---------------------------------------------------------------------------
// Region entropy statistics
// ---------------------------------------------------------------------------

struct RegionStats {
  double mean_subject = 0.0;
  double mean_background = 0.0;
  double abs_difference = 0.0;
};

inline nlohmann::json to_json(const RegionStats& s) {
  return nlohmann::json{{"mean_subject", s.mean_subject},
                        {"mean_background", s.mean_background},
                        {"abs_difference", s.abs_difference}};
}

/// Mean entropy over mask-true (subject) and mask-false (background) cells.
inline RegionStats entropy_region_stats(const Grid<double>& map,
                                        const Grid<std::uint8_t>& mask) {
  if (map.h != mask.h || map.w != mask.w) {
    throw ValidationError("entropy_region_stats: mask shape does not match map");
  }
  double subject_sum = 0.0, background_sum = 0.0;
  int subject_n = 0, background_n = 0;
  for (int t = 0; t < map.size(); ++t) {
    if (mask.flat(t)) {
      subject_sum += map.flat(t);
      ++subject_n;
    } else {
      background_sum += map.flat(t);
      ++background_n;
    }
  }
  if (subject_n == 0 || background_n == 0) {
    throw ValidationError("entropy_region_stats: mask must contain both classes");
  }
  RegionStats out;
  out.mean_subject = subject_sum / subject_n;
  out.mean_background = background_sum / background_n;
  out.abs_difference = std::abs(out.mean_subject - out.mean_background);
  return out;
}

/// Subject mask from a reward's geometry: region rectangles or the grid
/// border for the border-structure task. Count rewards have no geometry.
inline Grid<std::uint8_t> subject_mask_from_reward(const rewards::Spec& spec,
                                                   int h, int w) {
  Grid<std::uint8_t> mask(h, w, 0);
  switch (spec.kind) {
    case rewards::Kind::kRegion:
    case rewards::Kind::kTwoRegion:
      for (const auto& region : spec.regions) {
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            if (region.rect.contains(y, x)) mask.at(y, x) = 1;
      }
      break;
    case rewards::Kind::kBorderStructure:
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (y == 0 || y == h - 1 || x == 0 || x == w - 1) mask.at(y, x) = 1;
      break;
    case rewards::Kind::kCount:
      throw ValidationError("subject_mask_from_reward: count rewards have no "
                            "region geometry");
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Map exports
// ---------------------------------------------------------------------------

/// Write the selection pipeline's maps for one sample of a rollout group:
/// entropy.csv, entropy_smoothed.csv, entropy_gradient.csv, similarity.csv
/// (the group profile reshaped h×w), selection_mask.csv and its JSON sidecar.
inline void export_maps(const std::vector<policy::RolloutRecord>& group,
                        const selection::Budget& budget, int sample_index,
                        const std::string& dir) {
  if (group.size() < 2) {
    throw ValidationError("export_maps: need a group of at least 2 rollouts");
  }
  if (sample_index < 0 || sample_index >= static_cast<int>(group.size())) {
    throw ValidationError("export_maps: sample index out of range");
  }
  const policy::RolloutRecord& rec = group[sample_index];
  const int h = rec.grid.h;
  const int w = rec.grid.w;
  const int n = h * w;
  const int vocab = static_cast<int>(rec.probs.size()) / n;
  const int dim = static_cast<int>(rec.embeddings.size()) / n;

  const stats::EntropyMap entropy =
      stats::entropy_map_from_probs(rec.probs, h, w, vocab);
  const stats::EntropyMap smoothed = stats::smooth_entropy_map(entropy);
  const stats::GradientMap gradient = stats::entropy_gradient(smoothed);

  stats::EmbeddingGroup embeds;
  embeds.group = static_cast<int>(group.size());
  embeds.positions = n;
  embeds.dim = dim;
  embeds.data.resize(group.size() * static_cast<std::size_t>(n) * dim);
  for (std::size_t i = 0; i < group.size(); ++i) {
    std::copy(group[i].embeddings.begin(), group[i].embeddings.end(),
              embeds.data.begin() + i * static_cast<std::size_t>(n) * dim);
  }
  const std::vector<double> similarity = stats::group_similarity(embeds);
  Grid<double> similarity_grid(h, w);
  similarity_grid.values = similarity;

  const selection::Mask mask = selection::build_mask(
      selection::select_initial(n, budget),
      selection::select_structural(gradient, budget),
      selection::select_diverse(similarity, budget), n);

  write_csv_file(entropy, dir + "/entropy.csv");
  write_csv_file(smoothed, dir + "/entropy_smoothed.csv");
  write_csv_file(gradient, dir + "/entropy_gradient.csv");
  write_csv_file(similarity_grid, dir + "/similarity.csv");

  {
    std::ofstream out(dir + "/selection_mask.csv");
    if (!out) throw IoError("cannot open for writing: " + dir + "/selection_mask.csv");
    selection::write_mask_csv(mask, h, w, out);
    if (!out) throw IoError("write failed: " + dir + "/selection_mask.csv");
  }
  {
    const std::string path = dir + "/selection_mask.json";
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << selection::mask_sidecar(mask).dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path);
  }
}

}  // namespace gcpo::analysis
