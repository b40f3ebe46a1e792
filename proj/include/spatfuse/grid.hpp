#pragma once

#include <Eigen/Sparse>
#include <cstdint>
#include <utility>
#include <vector>

namespace spatfuse::grid {

// Regular rectangular grid. Cells are linearised row-major: cell (r, c) has
// index r * ncol + c. x runs along columns, y along rows, and (origin_x,
// origin_y) is the outer corner of cell (0, 0). The optional land mask has one
// 0/1 entry per cell in linear order; empty means all land.
struct RegularGrid {
  int nrow = 0;
  int ncol = 0;
  double cell_size = 1.0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  std::vector<std::uint8_t> land;

  int cells() const { return nrow * ncol; }
  int index(int r, int c) const { return r * ncol + c; }
  std::pair<int, int> rowcol(int idx) const { return {idx / ncol, idx % ncol}; }
  double centroid_x(int idx) const {
    return origin_x + (idx % ncol + 0.5) * cell_size;
  }
  double centroid_y(int idx) const {
    return origin_y + (idx / ncol + 0.5) * cell_size;
  }
  bool is_land(int idx) const { return land.empty() || land[idx] != 0; }
  int land_cells() const;

  void validate() const;  // throws DataError on bad dimensions or mask length
};

// Cell containing a point. A point on a shared interior edge belongs to the
// cell with the larger index along the tied axis; the outer max edges belong
// to the last row/column so the whole bounding box is covered. Points outside
// the bounding box raise DataError.
int point_to_cell(const RegularGrid& g, double x, double y);

// Sparse map from grid cells onto some target support (observations, proxy
// pixels). `excluded` marks rows dropped by the water rule or empty overlap;
// excluded rows are all zero.
struct MappingMatrix {
  Eigen::SparseMatrix<double, Eigen::RowMajor> W;
  std::vector<std::uint8_t> excluded;
};

// One unit entry per point at its containing cell.
MappingMatrix point_selection(const RegularGrid& g, const std::vector<double>& x,
                              const std::vector<double>& y);

// One unit entry per listed cell index.
MappingMatrix cell_selection(const RegularGrid& g, const std::vector<int>& cells);

// Area-overlap weights from fine cells onto each coarse cell; retained rows
// sum to 1. With land_only, weights are renormalised over land cells and a
// row is excluded when its land fraction is at or below `retention` (the
// 60%-water rule at the default). Coarse area outside the fine extent counts
// as water.
MappingMatrix overlap_weights(const RegularGrid& fine, const RegularGrid& coarse,
                              bool land_only, double retention = 0.40);

// Rook (edge-sharing) neighbours of a cell.
std::vector<int> rook_neighbors(const RegularGrid& g, int idx);

}  // namespace spatfuse::grid
