#pragma once

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "gcpo/error.hpp"

namespace gcpo {

/// Row-major h×w grid. Flat index t = y*w + x matches generation order:
/// raster scan, left to right, top to bottom.
template <typename T>
struct Grid {
  int h = 0;
  int w = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(int h_, int w_, T fill = T{})
      : h(h_), w(w_), values(static_cast<std::size_t>(h_) * w_, fill) {
    if (h_ < 1 || w_ < 1) {
      throw ValidationError("Grid: dimensions must be >= 1, got " +
                            std::to_string(h_) + "x" + std::to_string(w_));
    }
  }

  int size() const { return h * w; }

  T& at(int y, int x) { return values[static_cast<std::size_t>(y) * w + x]; }
  const T& at(int y, int x) const {
    return values[static_cast<std::size_t>(y) * w + x];
  }
  T& flat(int t) { return values[static_cast<std::size_t>(t)]; }
  const T& flat(int t) const { return values[static_cast<std::size_t>(t)]; }
};

/// One sampled grid "image": N = h*w discrete token ids in raster order.
struct TokenGrid {
  std::vector<int> tokens;
  int h = 0;
  int w = 0;

  int size() const { return static_cast<int>(tokens.size()); }
};

inline void validate_token_grid(const TokenGrid& grid, int vocab) {
  if (grid.h < 1 || grid.w < 1 ||
      grid.h * grid.w != static_cast<int>(grid.tokens.size())) {
    throw ValidationError("TokenGrid: shape " + std::to_string(grid.h) + "x" +
                          std::to_string(grid.w) + " does not match " +
                          std::to_string(grid.tokens.size()) + " tokens");
  }
  for (std::size_t t = 0; t < grid.tokens.size(); ++t) {
    if (grid.tokens[t] < 0 || grid.tokens[t] >= vocab) {
      throw ValidationError("TokenGrid: token id " +
                            std::to_string(grid.tokens[t]) + " at position " +
                            std::to_string(t) + " outside vocab of size " +
                            std::to_string(vocab));
    }
  }
}

// ---------------------------------------------------------------------------
// CSV grid format: row-major, %.6f, comma-delimited, no header.
// ---------------------------------------------------------------------------

inline void write_csv(const Grid<double>& grid, std::ostream& out) {
  char buf[64];
  for (int y = 0; y < grid.h; ++y) {
    for (int x = 0; x < grid.w; ++x) {
      std::snprintf(buf, sizeof(buf), "%.6f", grid.at(y, x));
      if (x > 0) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

inline void write_csv_file(const Grid<double>& grid, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_csv(grid, out);
  if (!out) throw IoError("write failed: " + path);
}

inline Grid<double> read_csv(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      row.push_back(std::stod(cell));
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ValidationError("CSV grid: ragged rows");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError("CSV grid: empty input");
  Grid<double> grid(static_cast<int>(rows.size()),
                    static_cast<int>(rows.front().size()));
  for (int y = 0; y < grid.h; ++y)
    for (int x = 0; x < grid.w; ++x) grid.at(y, x) = rows[y][x];
  return grid;
}

inline Grid<double> read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  return read_csv(in);
}

}  // namespace gcpo
