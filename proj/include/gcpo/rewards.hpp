#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gcpo/error.hpp"
#include "gcpo/grid.hpp"

namespace gcpo::rewards {

// Deterministic scalar rewards on token grids, all in [0, 1] and dense enough
// that a group of imperfect samples still spreads. border_structure is the
// structure task: its decisive cells sit on the grid boundary.

enum class Kind {
  kCount,            // 1 − |#target − n*| / N
  kRegion,           // inside-correct fraction × outside-clean fraction
  kBorderStructure,  // (border == a fraction + interior == b fraction) / 2
  kTwoRegion,        // mean of two region scores
};

struct Rect {
  int row = 0;
  int col = 0;
  int rows = 0;
  int cols = 0;

  bool contains(int y, int x) const {
    return y >= row && y < row + rows && x >= col && x < col + cols;
  }
};

struct RegionTarget {
  Rect rect;
  int token = 0;
};

struct Spec {
  Kind kind = Kind::kBorderStructure;
  // kCount
  int count_token = -1;
  int count_target = 0;
  // kRegion (1 entry) / kTwoRegion (2 entries)
  std::vector<RegionTarget> regions;
  // kBorderStructure
  int border_token = -1;
  int interior_token = -1;
};

/// Shape-level checks: region rectangles fit the grid, counts fit N, the
/// right number of regions is present.
inline void validate_shape(const Spec& spec, int h, int w) {
  switch (spec.kind) {
    case Kind::kCount:
      if (spec.count_target < 0 || spec.count_target > h * w) {
        throw ValidationError("reward spec: count target " +
                              std::to_string(spec.count_target) +
                              " outside [0, " + std::to_string(h * w) + "]");
      }
      break;
    case Kind::kRegion:
    case Kind::kTwoRegion: {
      const std::size_t want = spec.kind == Kind::kRegion ? 1 : 2;
      if (spec.regions.size() != want) {
        throw ValidationError("reward spec: expected " + std::to_string(want) +
                              " region(s), got " +
                              std::to_string(spec.regions.size()));
      }
      for (const auto& r : spec.regions) {
        if (r.rect.rows < 1 || r.rect.cols < 1 || r.rect.row < 0 ||
            r.rect.col < 0 || r.rect.row + r.rect.rows > h ||
            r.rect.col + r.rect.cols > w) {
          throw ValidationError("reward spec: rectangle outside " +
                                std::to_string(h) + "x" + std::to_string(w) +
                                " grid");
        }
      }
      break;
    }
    case Kind::kBorderStructure:
      break;
  }
}

/// Full validation: shape checks plus target-token ids against the vocab.
inline void validate(const Spec& spec, int h, int w, int vocab) {
  validate_shape(spec, h, w);
  auto check_token = [&](int id, const char* field) {
    if (id < 0 || id >= vocab) {
      throw ValidationError(std::string("reward spec: ") + field + " id " +
                            std::to_string(id) + " outside vocab of size " +
                            std::to_string(vocab));
    }
  };
  switch (spec.kind) {
    case Kind::kCount:
      check_token(spec.count_token, "count token");
      break;
    case Kind::kRegion:
    case Kind::kTwoRegion:
      for (const auto& r : spec.regions) check_token(r.token, "region token");
      break;
    case Kind::kBorderStructure:
      check_token(spec.border_token, "border token");
      check_token(spec.interior_token, "interior token");
      break;
  }
}

namespace detail {

inline double region_score(const RegionTarget& region, const TokenGrid& grid) {
  int inside = 0, inside_hit = 0, outside = 0, outside_clean = 0;
  for (int y = 0; y < grid.h; ++y) {
    for (int x = 0; x < grid.w; ++x) {
      const int tok = grid.tokens[static_cast<std::size_t>(y) * grid.w + x];
      if (region.rect.contains(y, x)) {
        ++inside;
        if (tok == region.token) ++inside_hit;
      } else {
        ++outside;
        if (tok != region.token) ++outside_clean;
      }
    }
  }
  const double in_frac = inside > 0 ? static_cast<double>(inside_hit) / inside : 1.0;
  const double out_frac =
      outside > 0 ? static_cast<double>(outside_clean) / outside : 1.0;
  return in_frac * out_frac;
}

}  // namespace detail

/// Score a grid against a spec. Pure; result always lands in [0, 1].
inline double evaluate(const Spec& spec, const TokenGrid& grid) {
  validate_shape(spec, grid.h, grid.w);
  const int n = grid.size();
  switch (spec.kind) {
    case Kind::kCount: {
      int hits = 0;
      for (int tok : grid.tokens) hits += tok == spec.count_token;
      return 1.0 - std::abs(hits - spec.count_target) / static_cast<double>(n);
    }
    case Kind::kRegion:
      return detail::region_score(spec.regions[0], grid);
    case Kind::kTwoRegion:
      return (detail::region_score(spec.regions[0], grid) +
              detail::region_score(spec.regions[1], grid)) /
             2.0;
    case Kind::kBorderStructure: {
      int border = 0, border_hit = 0, interior = 0, interior_hit = 0;
      for (int y = 0; y < grid.h; ++y) {
        for (int x = 0; x < grid.w; ++x) {
          const int tok = grid.tokens[static_cast<std::size_t>(y) * grid.w + x];
          const bool on_border =
              y == 0 || y == grid.h - 1 || x == 0 || x == grid.w - 1;
          if (on_border) {
            ++border;
            if (tok == spec.border_token) ++border_hit;
          } else {
            ++interior;
            if (tok == spec.interior_token) ++interior_hit;
          }
        }
      }
      const double bf =
          border > 0 ? static_cast<double>(border_hit) / border : 1.0;
      const double inf =
          interior > 0 ? static_cast<double>(interior_hit) / interior : 1.0;
      return (bf + inf) / 2.0;
    }
  }
  throw ValidationError("reward spec: unknown kind");
}

}  // namespace gcpo::rewards
