#include "spatfuse/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spatfuse/errors.hpp"

namespace spatfuse::grid {

int RegularGrid::land_cells() const {
  if (land.empty()) return cells();
  int n = 0;
  for (auto v : land) n += v != 0;
  return n;
}

void RegularGrid::validate() const {
  if (nrow <= 0 || ncol <= 0)
    throw DataError("grid dimensions must be positive, got " +
                    std::to_string(nrow) + "x" + std::to_string(ncol));
  if (!(cell_size > 0.0))
    throw DataError("grid cell size must be positive");
  if (!land.empty() && static_cast<int>(land.size()) != cells())
    throw DataError("land mask has " + std::to_string(land.size()) +
                    " entries, grid has " + std::to_string(cells()) + " cells");
}

int point_to_cell(const RegularGrid& g, double x, double y) {
  const double w = g.ncol * g.cell_size;
  const double h = g.nrow * g.cell_size;
  if (x < g.origin_x || x > g.origin_x + w || y < g.origin_y || y > g.origin_y + h)
    throw DataError("point (" + std::to_string(x) + ", " + std::to_string(y) +
                    ") lies outside the grid bounding box");
  // Containment is defined against the computed edge coordinates
  // origin + k * cell_size: cell k owns [edge(k), edge(k+1)), so an exact
  // interior edge belongs to the higher cell, and the outer max edge stays in
  // the last cell. floor() gives a candidate; the comparisons below remove
  // floating-point drift so the interval semantics hold exactly.
  auto locate = [](double v, double origin, double h, int n) {
    int k = static_cast<int>(std::floor((v - origin) / h));
    k = std::clamp(k, 0, n - 1);
    while (k > 0 && v < origin + k * h) --k;
    while (k < n - 1 && v >= origin + (k + 1) * h) ++k;
    return k;
  };
  int c = locate(x, g.origin_x, g.cell_size, g.ncol);
  int r = locate(y, g.origin_y, g.cell_size, g.nrow);
  return g.index(r, c);
}

MappingMatrix point_selection(const RegularGrid& g, const std::vector<double>& x,
                              const std::vector<double>& y) {
  if (x.size() != y.size())
    throw DataError("point selection: x and y lengths differ");
  MappingMatrix out;
  out.W.resize(static_cast<Eigen::Index>(x.size()), g.cells());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    trip.emplace_back(static_cast<int>(i), point_to_cell(g, x[i], y[i]), 1.0);
  out.W.setFromTriplets(trip.begin(), trip.end());
  out.excluded.assign(x.size(), 0);
  return out;
}

MappingMatrix cell_selection(const RegularGrid& g, const std::vector<int>& cells) {
  MappingMatrix out;
  out.W.resize(static_cast<Eigen::Index>(cells.size()), g.cells());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i] < 0 || cells[i] >= g.cells())
      throw DataError("cell selection: index " + std::to_string(cells[i]) +
                      " out of range");
    trip.emplace_back(static_cast<int>(i), cells[i], 1.0);
  }
  out.W.setFromTriplets(trip.begin(), trip.end());
  out.excluded.assign(cells.size(), 0);
  return out;
}

MappingMatrix overlap_weights(const RegularGrid& fine, const RegularGrid& coarse,
                              bool land_only, double retention) {
  fine.validate();
  coarse.validate();
  MappingMatrix out;
  out.W.resize(coarse.cells(), fine.cells());
  out.excluded.assign(coarse.cells(), 0);
  std::vector<Eigen::Triplet<double>> trip;

  const double fw = fine.ncol * fine.cell_size;
  const double fh = fine.nrow * fine.cell_size;
  const double cell_area = coarse.cell_size * coarse.cell_size;

  for (int j = 0; j < coarse.cells(); ++j) {
    auto [cr, cc] = coarse.rowcol(j);
    const double x0 = coarse.origin_x + cc * coarse.cell_size;
    const double x1 = x0 + coarse.cell_size;
    const double y0 = coarse.origin_y + cr * coarse.cell_size;
    const double y1 = y0 + coarse.cell_size;

    // fine index range intersecting [x0,x1] x [y0,y1]
    int cmin = std::max(0, static_cast<int>(std::floor((x0 - fine.origin_x) / fine.cell_size)));
    int cmax = std::min(fine.ncol - 1,
                        static_cast<int>(std::floor((x1 - fine.origin_x) / fine.cell_size)));
    int rmin = std::max(0, static_cast<int>(std::floor((y0 - fine.origin_y) / fine.cell_size)));
    int rmax = std::min(fine.nrow - 1,
                        static_cast<int>(std::floor((y1 - fine.origin_y) / fine.cell_size)));
    if (x1 <= fine.origin_x || x0 >= fine.origin_x + fw || y1 <= fine.origin_y ||
        y0 >= fine.origin_y + fh) {
      out.excluded[j] = 1;
      continue;
    }

    struct Hit {
      int cell;
      double area;
      bool land;
    };
    std::vector<Hit> hits;
    double total = 0.0, land_total = 0.0;
    for (int r = rmin; r <= rmax; ++r) {
      const double fy0 = fine.origin_y + r * fine.cell_size;
      const double oy = std::min(y1, fy0 + fine.cell_size) - std::max(y0, fy0);
      if (oy <= 0) continue;
      for (int c = cmin; c <= cmax; ++c) {
        const double fx0 = fine.origin_x + c * fine.cell_size;
        const double ox = std::min(x1, fx0 + fine.cell_size) - std::max(x0, fx0);
        if (ox <= 0) continue;
        const double a = ox * oy;
        const int cell = fine.index(r, c);
        const bool land = fine.is_land(cell);
        hits.push_back({cell, a, land});
        total += a;
        if (land) land_total += a;
      }
    }

    if (land_only) {
      // area beyond the fine extent is implicitly water: the denominator is
      // the full coarse cell area
      const double land_frac = land_total / cell_area;
      if (land_total <= 0.0 || land_frac <= retention + 1e-9) {
        out.excluded[j] = 1;
        continue;
      }
      for (const auto& h : hits)
        if (h.land) trip.emplace_back(j, h.cell, h.area / land_total);
    } else {
      if (total <= 0.0) {
        out.excluded[j] = 1;
        continue;
      }
      for (const auto& h : hits) trip.emplace_back(j, h.cell, h.area / total);
    }
  }
  out.W.setFromTriplets(trip.begin(), trip.end());
  return out;
}

std::vector<int> rook_neighbors(const RegularGrid& g, int idx) {
  auto [r, c] = g.rowcol(idx);
  std::vector<int> out;
  out.reserve(4);
  if (r > 0) out.push_back(g.index(r - 1, c));
  if (r < g.nrow - 1) out.push_back(g.index(r + 1, c));
  if (c > 0) out.push_back(g.index(r, c - 1));
  if (c < g.ncol - 1) out.push_back(g.index(r, c + 1));
  return out;
}

}  // namespace spatfuse::grid
