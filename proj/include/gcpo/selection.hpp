#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gcpo/error.hpp"
#include "gcpo/token_stats.hpp"

namespace gcpo::selection {

// Critical-token selection: the kept set is the union of three subsets
// (initial tokens, high entropy-gradient tokens, low intra-group-similarity
// tokens). Ties always break toward the lower flat index, so selection is
// identical across runs and platforms.

struct Budget {
  double init_fraction = 0.10;
  double struct_fraction = 0.10;
  double sim_fraction = 0.10;
};

enum SubsetLabel : std::uint8_t {
  kInit = 1u << 0,
  kStruct = 1u << 1,
  kSim = 1u << 2,
};

struct Mask {
  std::vector<std::uint8_t> selected;  // 0/1 per position
  std::vector<std::uint8_t> labels;    // SubsetLabel bits per position

  int count() const {
    int n = 0;
    for (auto s : selected) n += s;
    return n;
  }
  double effective_ratio() const {
    return selected.empty() ? 0.0 : static_cast<double>(count()) / selected.size();
  }
};

/// Subset size for a fraction of an n-token sequence: ⌈fraction·n⌉, capped at n.
inline int budget_count(double fraction, int n) {
  if (fraction < 0.0 || fraction > 1.0) {
    throw ValidationError("selection fraction " + std::to_string(fraction) +
                          " outside [0, 1]");
  }
  return std::min(n, static_cast<int>(std::ceil(fraction * n)));
}

/// The first K_init positions of the sequence.
inline std::vector<int> select_initial(int n, const Budget& budget) {
  const int k = budget_count(budget.init_fraction, n);
  std::vector<int> out(k);
  std::iota(out.begin(), out.end(), 0);
  return out;
}

// Indices of the top-k values under `better`; ties go to the lower index.
namespace detail {
template <typename Better>
std::vector<int> rank_select(std::span<const double> values, int k, Better better) {
  std::vector<int> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (values[a] != values[b]) return better(values[a], values[b]);
    return a < b;
  });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}
}  // namespace detail

/// The K_struct positions with the largest gradient magnitudes. Rank-based:
/// any strictly monotone transform of the magnitudes selects the same set.
inline std::vector<int> select_structural(const stats::GradientMap& g,
                                          const Budget& budget) {
  const int n = g.size();
  const int k = budget_count(budget.struct_fraction, n);
  return detail::rank_select(g.values, k, [](double a, double b) { return a > b; });
}

/// The K_sim positions with the lowest mean intra-group similarity.
inline std::vector<int> select_diverse(std::span<const double> similarity,
                                       const Budget& budget) {
  const int n = static_cast<int>(similarity.size());
  const int k = budget_count(budget.sim_fraction, n);
  return detail::rank_select(similarity, k, [](double a, double b) { return a < b; });
}

/// Union of the three subsets, with per-position provenance labels. A position
/// picked by several subsets carries all of their labels but counts once.
inline Mask build_mask(std::span<const int> init, std::span<const int> structural,
                       std::span<const int> diverse, int n) {
  Mask mask;
  mask.selected.assign(n, 0);
  mask.labels.assign(n, 0);
  auto apply = [&](std::span<const int> indices, std::uint8_t label) {
    for (int t : indices) {
      if (t < 0 || t >= n) {
        throw ValidationError("build_mask: index " + std::to_string(t) +
                              " outside sequence of length " + std::to_string(n));
      }
      mask.selected[t] = 1;
      mask.labels[t] |= label;
    }
  };
  apply(init, kInit);
  apply(structural, kStruct);
  apply(diverse, kSim);
  return mask;
}

// ---------------------------------------------------------------------------
// Exports. CSV codes: 0 none, 1 init, 2 struct, 3 sim; a multi-label position
// exports its lowest code. The JSON sidecar keeps the exact label sets.
// ---------------------------------------------------------------------------

inline int export_code(std::uint8_t label_bits) {
  if (label_bits & kInit) return 1;
  if (label_bits & kStruct) return 2;
  if (label_bits & kSim) return 3;
  return 0;
}

inline void write_mask_csv(const Mask& mask, int h, int w, std::ostream& out) {
  if (static_cast<int>(mask.labels.size()) != h * w) {
    throw ValidationError("write_mask_csv: mask length " +
                          std::to_string(mask.labels.size()) +
                          " does not match grid " + std::to_string(h) + "x" +
                          std::to_string(w));
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (x > 0) out << ',';
      out << export_code(mask.labels[static_cast<std::size_t>(y) * w + x]);
    }
    out << '\n';
  }
}

inline nlohmann::json mask_sidecar(const Mask& mask) {
  nlohmann::json labels = nlohmann::json::array();
  for (std::uint8_t bits : mask.labels) {
    nlohmann::json cell = nlohmann::json::array();
    if (bits & kInit) cell.push_back("init");
    if (bits & kStruct) cell.push_back("struct");
    if (bits & kSim) cell.push_back("sim");
    labels.push_back(std::move(cell));
  }
  return nlohmann::json{{"labels", std::move(labels)},
                        {"selected_count", mask.count()},
                        {"effective_ratio", mask.effective_ratio()}};
}

}  // namespace gcpo::selection
