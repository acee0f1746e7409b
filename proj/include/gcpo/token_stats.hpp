#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gcpo/error.hpp"
#include "gcpo/grid.hpp"

namespace gcpo::stats {

// Per-token statistics over sampled grids. Everything here is a pure function
// of its inputs; all entropies are in nats.

using EntropyMap = Grid<double>;
using GradientMap = Grid<double>;

/// Token embeddings for a group of rollouts: `group` samples × `positions`
/// tokens × `dim` reals, row-major.
struct EmbeddingGroup {
  int group = 0;
  int positions = 0;
  int dim = 0;
  std::vector<double> data;

  std::span<const double> at(int sample, int position) const {
    const std::size_t off =
        (static_cast<std::size_t>(sample) * positions + position) * dim;
    return {data.data() + off, static_cast<std::size_t>(dim)};
  }
};

inline void validate_prob_vector(std::span<const double> probs) {
  if (probs.empty()) throw ValidationError("probability vector is empty");
  double sum = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (!(probs[k] >= 0.0)) {
      throw ValidationError("probability vector: negative or non-finite entry " +
                            std::to_string(probs[k]) + " at index " +
                            std::to_string(k));
    }
    sum += probs[k];
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw ValidationError("probability vector: sum " + std::to_string(sum) +
                          " is off by more than 1e-6");
  }
}

/// Shannon entropy −Σ p ln p of one next-token distribution, with 0·ln 0 = 0.
/// Result clamped to [0, ln V] against rounding at the extremes.
inline double token_entropy(std::span<const double> probs) {
  validate_prob_vector(probs);
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  const double max_h = std::log(static_cast<double>(probs.size()));
  return std::clamp(h, 0.0, max_h);
}

/// Entropy at every position of an N×V distribution block, reshaped h×w.
inline EntropyMap entropy_map_from_probs(std::span<const double> probs, int h,
                                         int w, int vocab) {
  EntropyMap map(h, w);
  if (static_cast<std::size_t>(h) * w * vocab != probs.size()) {
    throw ValidationError("entropy_map_from_probs: expected " +
                          std::to_string(h * w * vocab) + " values, got " +
                          std::to_string(probs.size()));
  }
  for (int t = 0; t < h * w; ++t) {
    map.flat(t) = token_entropy(probs.subspan(
        static_cast<std::size_t>(t) * vocab, static_cast<std::size_t>(vocab)));
  }
  return map;
}

/// Local causal average: each cell becomes the mean of itself and its
/// in-bounds upper-left, upper, upper-right, and left neighbors. Cells with
/// missing neighbors (first row, borders) average only the available terms.
/// Accumulated as self + mean(neighbor - self), so constant maps are exact
/// fixed points.
inline EntropyMap smooth_entropy_map(const EntropyMap& m) {
  if (m.h < 1 || m.w < 1 || m.size() != static_cast<int>(m.values.size())) {
    throw ValidationError("smooth_entropy_map: malformed grid");
  }
  EntropyMap out(m.h, m.w);
  for (int y = 0; y < m.h; ++y) {
    for (int x = 0; x < m.w; ++x) {
      const double self = m.at(y, x);
      double diff_sum = 0.0;
      int count = 1;
      const int offsets[4][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}};
      for (const auto& o : offsets) {
        const int ny = y + o[0];
        const int nx = x + o[1];
        if (ny >= 0 && ny < m.h && nx >= 0 && nx < m.w) {
          diff_sum += m.at(ny, nx) - self;
          ++count;
        }
      }
      out.at(y, x) = self + diff_sum / count;
    }
  }
  return out;
}

/// Spatial gradient magnitude of a (smoothed) entropy map. Interior cells use
/// central differences, border cells one-sided differences; magnitude is the
/// Euclidean norm of (g_x, g_y).
inline GradientMap entropy_gradient(const EntropyMap& m) {
  if (m.h < 2 || m.w < 2) {
    throw ValidationError("entropy_gradient: degenerate grid " +
                          std::to_string(m.h) + "x" + std::to_string(m.w) +
                          ", need at least 2x2");
  }
  GradientMap out(m.h, m.w);
  for (int y = 0; y < m.h; ++y) {
    for (int x = 0; x < m.w; ++x) {
      double gx;
      if (x == 0) {
        gx = m.at(y, 1) - m.at(y, 0);
      } else if (x == m.w - 1) {
        gx = m.at(y, x) - m.at(y, x - 1);
      } else {
        gx = (m.at(y, x + 1) - m.at(y, x - 1)) / 2.0;
      }
      double gy;
      if (y == 0) {
        gy = m.at(1, x) - m.at(0, x);
      } else if (y == m.h - 1) {
        gy = m.at(y, x) - m.at(y - 1, x);
      } else {
        gy = (m.at(y + 1, x) - m.at(y - 1, x)) / 2.0;
      }
      out.at(y, x) = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

/// Mean pairwise cosine similarity of the group's token embeddings at each
/// position: for position t, the average of cos(e_{t,j}, e_{t,k}) over all
/// j < k sample pairs. Entries land in [-1, 1].
inline std::vector<double> group_similarity(const EmbeddingGroup& g) {
  if (g.group < 2) {
    throw ValidationError("group_similarity: need at least 2 samples, got " +
                          std::to_string(g.group));
  }
  if (g.dim < 1 || g.positions < 1 ||
      g.data.size() != static_cast<std::size_t>(g.group) * g.positions * g.dim) {
    throw ValidationError("group_similarity: malformed embedding group");
  }

  // Norms first so a zero embedding is reported with its exact location.
  std::vector<double> norms(static_cast<std::size_t>(g.group) * g.positions);
  for (int s = 0; s < g.group; ++s) {
    for (int t = 0; t < g.positions; ++t) {
      double sq = 0.0;
      for (double v : g.at(s, t)) sq += v * v;
      if (sq <= 0.0) {
        throw ValidationError("group_similarity: zero-norm embedding at position " +
                              std::to_string(t) + ", sample " + std::to_string(s));
      }
      norms[static_cast<std::size_t>(s) * g.positions + t] = std::sqrt(sq);
    }
  }

  std::vector<double> profile(g.positions, 0.0);
  const double pairs = g.group * (g.group - 1) / 2.0;
  for (int t = 0; t < g.positions; ++t) {
    double acc = 0.0;
    for (int j = 0; j < g.group; ++j) {
      const auto ej = g.at(j, t);
      for (int k = j + 1; k < g.group; ++k) {
        const auto ek = g.at(k, t);
        double dot = 0.0;
        for (int i = 0; i < g.dim; ++i) dot += ej[i] * ek[i];
        acc += dot / (norms[static_cast<std::size_t>(j) * g.positions + t] *
                      norms[static_cast<std::size_t>(k) * g.positions + t]);
      }
    }
    profile[t] = std::clamp(acc / pairs, -1.0, 1.0);
  }
  return profile;
}

}  // namespace gcpo::stats
