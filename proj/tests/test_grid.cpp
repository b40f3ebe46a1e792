#include "spatfuse/grid.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "spatfuse/errors.hpp"
#include "spatfuse/rng.hpp"

using namespace spatfuse;
using grid::RegularGrid;

namespace {

// Containment oracle: scan every cell and test the point against its closed
// lower / open upper interval, with the upper edge closed on the last row and
// column. Ties on interior edges go to the larger index because later cells
// overwrite earlier ones.
int brute_force_cell(const RegularGrid& g, double x, double y) {
  int hit = -1;
  for (int r = 0; r < g.nrow; ++r) {
    for (int c = 0; c < g.ncol; ++c) {
      double x0 = g.origin_x + c * g.cell_size;
      double x1 = g.origin_x + (c + 1) * g.cell_size;
      double y0 = g.origin_y + r * g.cell_size;
      double y1 = g.origin_y + (r + 1) * g.cell_size;
      bool in_x = (x >= x0 && x < x1) || (c == g.ncol - 1 && x == x1);
      bool in_y = (y >= y0 && y < y1) || (r == g.nrow - 1 && y == y1);
      if (in_x && in_y) hit = g.index(r, c);
    }
  }
  return hit;
}

}  // namespace

TEST_CASE("grid validation") {
  RegularGrid g;
  g.nrow = 0;
  g.ncol = 4;
  g.cell_size = 1.0;
  CHECK_THROWS_AS(g.validate(), DataError);
  g.nrow = 4;
  g.cell_size = -1.0;
  CHECK_THROWS_AS(g.validate(), DataError);
  g.cell_size = 1.0;
  g.land.assign(3, 1);  // wrong length
  CHECK_THROWS_AS(g.validate(), DataError);
  g.land.assign(16, 1);
  CHECK_NOTHROW(g.validate());
}

TEST_CASE("point lookup hits the centroid's cell") {
  RegularGrid g;
  g.nrow = 7;
  g.ncol = 5;
  g.cell_size = 2.0;
  g.origin_x = -3.0;
  g.origin_y = 10.0;
  // centroid of cell (3, 2) lands on linear index 3*5 + 2 = 17
  double cx = g.origin_x + (2 + 0.5) * g.cell_size;
  double cy = g.origin_y + (3 + 0.5) * g.cell_size;
  CHECK(grid::point_to_cell(g, cx, cy) == 17);

  // round trip over every cell
  for (int i = 0; i < g.cells(); ++i) {
    auto [r, c] = g.rowcol(i);
    double x = g.origin_x + (c + 0.5) * g.cell_size;
    double y = g.origin_y + (r + 0.5) * g.cell_size;
    CHECK(grid::point_to_cell(g, x, y) == i);
  }
}

TEST_CASE("boundary ties go to the larger index") {
  RegularGrid g;
  g.nrow = 2;
  g.ncol = 6;
  g.cell_size = 1.0;
  // shared vertical edge between cells 10 = (1,4) and 11 = (1,5)
  CHECK(grid::point_to_cell(g, 5.0, 1.5) == 11);
  // horizontal edge between (0,2)=2 and (1,2)=8
  CHECK(grid::point_to_cell(g, 2.5, 1.0) == 8);
  // outer corner of the whole grid stays inside the last cell
  CHECK(grid::point_to_cell(g, 6.0, 2.0) == 11);
  // outside the bounding box is an error
  CHECK_THROWS_AS(grid::point_to_cell(g, 6.01, 1.0), DataError);
  CHECK_THROWS_AS(grid::point_to_cell(g, -0.01, 1.0), DataError);
}

TEST_CASE("point lookup agrees with the containment oracle") {
  Rng rng(20240811);
  for (int trial = 0; trial < 8; ++trial) {
    RegularGrid g;
    g.nrow = 3 + static_cast<int>(rng.integer(6));
    g.ncol = 3 + static_cast<int>(rng.integer(6));
    g.cell_size = 0.25 + rng.uniform();
    g.origin_x = rng.uniform(-5.0, 5.0);
    g.origin_y = rng.uniform(-5.0, 5.0);
    for (int k = 0; k < 200; ++k) {
      double x = g.origin_x + rng.uniform() * g.ncol * g.cell_size;
      double y = g.origin_y + rng.uniform() * g.nrow * g.cell_size;
      CHECK(grid::point_to_cell(g, x, y) == brute_force_cell(g, x, y));
    }
    // exact edges too
    for (int k = 0; k < 50; ++k) {
      int c = static_cast<int>(rng.integer(g.ncol + 1));
      int r = static_cast<int>(rng.integer(g.nrow + 1));
      double x = g.origin_x + c * g.cell_size;
      double y = g.origin_y + r * g.cell_size;
      CHECK(grid::point_to_cell(g, x, y) == brute_force_cell(g, x, y));
    }
  }
}

TEST_CASE("point selection rows are unit indicators") {
  RegularGrid g;
  g.nrow = 4;
  g.ncol = 4;
  g.cell_size = 1.0;
  std::vector<double> xs = {0.5, 3.2, 2.0};
  std::vector<double> ys = {0.5, 1.7, 3.9};
  auto sel = grid::point_selection(g, xs, ys);
  CHECK(sel.W.rows() == 3);
  CHECK(sel.W.cols() == 16);
  for (int i = 0; i < sel.W.rows(); ++i) {
    CHECK(sel.W.row(i).sum() == doctest::Approx(1.0));
    CHECK(sel.W.row(i).nonZeros() == 1);
  }
}

TEST_CASE("aligned 2x refinement gives quarter weights") {
  RegularGrid fine;
  fine.nrow = 4;
  fine.ncol = 4;
  fine.cell_size = 1.0;
  RegularGrid coarse;
  coarse.nrow = 2;
  coarse.ncol = 2;
  coarse.cell_size = 2.0;
  auto map = grid::overlap_weights(fine, coarse, false);
  CHECK(map.W.rows() == 4);
  CHECK(map.W.cols() == 16);
  for (int j = 0; j < 4; ++j) {
    CHECK(!map.excluded[j]);
    CHECK(map.W.row(j).nonZeros() == 4);
    CHECK(map.W.row(j).sum() == doctest::Approx(1.0).epsilon(1e-14));
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(map.W, j); it; ++it)
      CHECK(it.value() == doctest::Approx(0.25).epsilon(1e-14));
  }
}

TEST_CASE("overlap weights match a Monte Carlo area oracle") {
  Rng rng(991);
  RegularGrid fine;
  fine.nrow = 12;
  fine.ncol = 10;
  fine.cell_size = 1.0;
  fine.land.assign(fine.cells(), 1);
  for (auto& v : fine.land) v = rng.uniform() < 0.75 ? 1 : 0;

  RegularGrid coarse;
  coarse.nrow = 3;
  coarse.ncol = 3;
  coarse.cell_size = 3.1;
  coarse.origin_x = 0.2;  // deliberately misaligned
  coarse.origin_y = -0.3;

  auto map = grid::overlap_weights(fine, coarse, true);
  const int n_mc = 40000;
  for (int j = 0; j < coarse.cells(); ++j) {
    auto [rr, cc] = coarse.rowcol(j);
    double x0 = coarse.origin_x + cc * coarse.cell_size;
    double y0 = coarse.origin_y + rr * coarse.cell_size;
    std::vector<double> hits(fine.cells(), 0.0);
    double land_hits = 0;
    for (int k = 0; k < n_mc; ++k) {
      double x = x0 + rng.uniform() * coarse.cell_size;
      double y = y0 + rng.uniform() * coarse.cell_size;
      if (x < fine.origin_x || y < fine.origin_y ||
          x >= fine.origin_x + fine.ncol * fine.cell_size ||
          y >= fine.origin_y + fine.nrow * fine.cell_size)
        continue;
      int cell = grid::point_to_cell(fine, x, y);
      if (fine.land[cell]) {
        hits[cell] += 1.0;
        land_hits += 1.0;
      }
    }
    double land_frac_mc = land_hits / n_mc;
    if (map.excluded[j]) {
      // exclusion threshold is 0.40 land fraction; MC noise stays well away
      CHECK(land_frac_mc < 0.45);
      continue;
    }
    CHECK(map.W.row(j).sum() == doctest::Approx(1.0).epsilon(1e-12));
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(map.W, j); it; ++it) {
      double p = hits[it.col()] / land_hits;
      double se = std::sqrt(p * (1 - p) / land_hits) + 1e-12;
      CHECK(std::abs(it.value() - p) < 5.0 * se + 0.003);
    }
  }
}

TEST_CASE("water exclusion rule") {
  // one coarse cell exactly covering a 5x5 fine block
  RegularGrid cover;
  cover.nrow = 1;
  cover.ncol = 1;
  cover.cell_size = 5.0;

  RegularGrid fine;
  fine.nrow = 5;
  fine.ncol = 5;
  fine.cell_size = 1.0;
  fine.land.assign(25, 0);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 5; ++c) fine.land[fine.index(r, c)] = 1;

  // 10/25 land = exactly 60% water -> dropped
  auto map60 = grid::overlap_weights(fine, cover, true);
  CHECK(map60.excluded[0]);

  // 12/25 land = 52% water -> retained, weights renormalised over land
  fine.land[fine.index(2, 0)] = 1;
  fine.land[fine.index(2, 1)] = 1;
  auto map48 = grid::overlap_weights(fine, cover, true);
  CHECK(!map48.excluded[0]);
  CHECK(map48.W.row(0).nonZeros() == 12);
  CHECK(map48.W.row(0).sum() == doctest::Approx(1.0).epsilon(1e-12));
  for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(map48.W, 0); it; ++it)
    CHECK(it.value() == doctest::Approx(1.0 / 12).epsilon(1e-12));

  // zero land overlap: flagged, not an error
  fine.land.assign(25, 0);
  auto map0 = grid::overlap_weights(fine, cover, true);
  CHECK(map0.excluded[0]);
}

TEST_CASE("coarse cell outside the fine extent is excluded") {
  RegularGrid fine;
  fine.nrow = 4;
  fine.ncol = 4;
  fine.cell_size = 1.0;
  RegularGrid coarse;
  coarse.nrow = 1;
  coarse.ncol = 2;
  coarse.cell_size = 4.0;
  coarse.origin_x = 0.0;  // cell 0 covers the grid, cell 1 is fully outside
  auto map = grid::overlap_weights(fine, coarse, false);
  CHECK(!map.excluded[0]);
  CHECK(map.excluded[1]);
}

TEST_CASE("area outside the fine extent counts as water") {
  // coarse cell half on the grid (all land), half off: land fraction 0.5
  RegularGrid fine;
  fine.nrow = 2;
  fine.ncol = 2;
  fine.cell_size = 1.0;
  fine.land.assign(4, 1);
  RegularGrid coarse;
  coarse.nrow = 1;
  coarse.ncol = 1;
  coarse.cell_size = 2.0;
  coarse.origin_x = 1.0;  // covers x in [1,3], grid ends at 2
  auto half = grid::overlap_weights(fine, coarse, true);
  CHECK(!half.excluded[0]);  // 50% land > 40% threshold
  CHECK(half.W.row(0).sum() == doctest::Approx(1.0).epsilon(1e-12));

  coarse.origin_x = 1.5;  // now only 25% of the cell overlaps land
  auto quarter = grid::overlap_weights(fine, coarse, true);
  CHECK(quarter.excluded[0]);
}

TEST_CASE("rook neighbours are symmetric and boundary-aware") {
  RegularGrid g;
  g.nrow = 3;
  g.ncol = 4;
  g.cell_size = 1.0;
  for (int i = 0; i < g.cells(); ++i) {
    for (int j : grid::rook_neighbors(g, i)) {
      auto back = grid::rook_neighbors(g, j);
      CHECK(std::find(back.begin(), back.end(), i) != back.end());
    }
  }
  CHECK(grid::rook_neighbors(g, 0).size() == 2);              // corner
  CHECK(grid::rook_neighbors(g, g.index(1, 1)).size() == 4);  // interior
  CHECK(grid::rook_neighbors(g, g.index(0, 1)).size() == 3);  // edge
}
