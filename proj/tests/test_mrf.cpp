#include "spatfuse/mrf.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "spatfuse/errors.hpp"
#include "spatfuse/grid.hpp"
#include "spatfuse/linalg.hpp"
#include "spatfuse/rng.hpp"

using namespace spatfuse;
using grid::RegularGrid;

namespace {

RegularGrid make(int nrow, int ncol) {
  RegularGrid g;
  g.nrow = nrow;
  g.ncol = ncol;
  g.cell_size = 1.0;
  return g;
}

// Independent dense assembly of the thin-plate penalty: sum of squared
// interior-fitting second differences in rows and columns plus twice the
// squared cross differences.
Eigen::MatrixXd dense_tps_oracle(int nrow, int ncol) {
  auto idx = [&](int r, int c) { return r * ncol + c; };
  const int m = nrow * ncol;
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(m, m);
  auto add_op = [&](const std::vector<std::pair<int, double>>& op, double w) {
    for (auto [i, a] : op)
      for (auto [j, b] : op) Q(i, j) += w * a * b;
  };
  for (int r = 1; r < nrow - 1; ++r)
    for (int c = 0; c < ncol; ++c)
      add_op({{idx(r - 1, c), 1.0}, {idx(r, c), -2.0}, {idx(r + 1, c), 1.0}}, 1.0);
  for (int r = 0; r < nrow; ++r)
    for (int c = 1; c < ncol - 1; ++c)
      add_op({{idx(r, c - 1), 1.0}, {idx(r, c), -2.0}, {idx(r, c + 1), 1.0}}, 1.0);
  for (int r = 0; r + 1 < nrow; ++r)
    for (int c = 0; c + 1 < ncol; ++c)
      add_op({{idx(r, c), 1.0},
              {idx(r, c + 1), -1.0},
              {idx(r + 1, c), -1.0},
              {idx(r + 1, c + 1), 1.0}},
             2.0);
  return Q;
}

int zero_eigenvalues(const Eigen::MatrixXd& Q, double rel_tol = 1e-9) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q);
  double scale = es.eigenvalues().cwiseAbs().maxCoeff();
  int n = 0;
  for (int i = 0; i < es.eigenvalues().size(); ++i)
    if (std::abs(es.eigenvalues()[i]) < rel_tol * scale) ++n;
  return n;
}

}  // namespace

TEST_CASE("thin-plate precision matches the independent assembly") {
  for (auto [nrow, ncol] : std::vector<std::pair<int, int>>{{4, 4}, {5, 7}, {6, 5}}) {
    auto prior = mrf::tps_precision(make(nrow, ncol));
    Eigen::MatrixXd dense(prior.Q);
    Eigen::MatrixXd oracle = dense_tps_oracle(nrow, ncol);
    CHECK((dense - oracle).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((dense - dense.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("interior stencil is the 13-point biharmonic") {
  auto prior = mrf::tps_precision(make(7, 7));
  const int ncol = 7;
  auto idx = [&](int r, int c) { return r * ncol + c; };
  int i = idx(3, 3);  // two cells from every edge
  Eigen::MatrixXd Q(prior.Q);
  CHECK(Q(i, i) == doctest::Approx(20.0));
  for (auto [dr, dc] : std::vector<std::pair<int, int>>{{0, 1}, {0, -1}, {1, 0}, {-1, 0}})
    CHECK(Q(i, idx(3 + dr, 3 + dc)) == doctest::Approx(-8.0));
  for (auto [dr, dc] : std::vector<std::pair<int, int>>{{1, 1}, {1, -1}, {-1, 1}, {-1, -1}})
    CHECK(Q(i, idx(3 + dr, 3 + dc)) == doctest::Approx(2.0));
  for (auto [dr, dc] : std::vector<std::pair<int, int>>{{0, 2}, {0, -2}, {2, 0}, {-2, 0}})
    CHECK(Q(i, idx(3 + dr, 3 + dc)) == doctest::Approx(1.0));
  // nothing beyond the 13 points
  int nnz = 0;
  for (int j = 0; j < Q.cols(); ++j) nnz += Q(i, j) != 0.0;
  CHECK(nnz == 13);
}

TEST_CASE("thin-plate null space is the planar field") {
  auto g = make(6, 5);
  auto prior = mrf::tps_precision(g);
  CHECK(prior.rank_deficiency == 3);
  REQUIRE(prior.null_basis.cols() == 3);

  // rows sum to zero = constants annihilated
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(g.cells());
  CHECK((prior.Q * ones).cwiseAbs().maxCoeff() < 1e-10);

  // the declared basis {1, r, c} is annihilated
  for (int k = 0; k < 3; ++k)
    CHECK((prior.Q * prior.null_basis.col(k)).cwiseAbs().maxCoeff() < 1e-10);

  // quadratic-in-r fields are flattened only where every operator fits: the
  // deep interior rows of Q * r^2 vanish
  Eigen::VectorXd r2(g.cells());
  for (int i = 0; i < g.cells(); ++i) {
    int r = i / g.ncol;
    r2[i] = static_cast<double>(r) * r;
  }
  Eigen::VectorXd qr2 = prior.Q * r2;
  for (int r = 2; r < g.nrow - 2; ++r)
    for (int c = 2; c < g.ncol - 2; ++c)
      CHECK(std::abs(qr2[r * g.ncol + c]) < 1e-10);

  // exactly three zero eigenvalues
  CHECK(zero_eigenvalues(Eigen::MatrixXd(prior.Q)) == 3);
}

TEST_CASE("small grids are rejected") {
  CHECK_THROWS_AS(mrf::tps_precision(make(3, 8)), DataError);
  CHECK_THROWS_AS(mrf::tps_precision(make(8, 3)), DataError);
}

TEST_CASE("CAR precision is degree minus rook adjacency") {
  auto g = make(5, 6);
  auto prior = mrf::car_precision(g);
  CHECK(prior.rank_deficiency == 1);
  Eigen::MatrixXd Q(prior.Q);

  for (int i = 0; i < g.cells(); ++i) {
    auto nb = grid::rook_neighbors(g, i);
    CHECK(Q(i, i) == doctest::Approx(static_cast<double>(nb.size())));
    for (int j : nb) CHECK(Q(i, j) == doctest::Approx(-1.0));
    CHECK(Q.row(i).sum() == doctest::Approx(0.0).epsilon(1e-14));
  }

  CHECK((prior.Q * prior.null_basis.col(0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(zero_eigenvalues(Q) == 1);
}

TEST_CASE("conditional draw matches the dense posterior") {
  auto g = make(5, 5);
  auto prior = mrf::tps_precision(g);
  const int m = g.cells();
  const double kappa = 0.7;

  Rng rng(5150);
  std::vector<Eigen::Triplet<double>> ptrip;
  Eigen::VectorXd info(m);
  for (int i = 0; i < m; ++i) {
    ptrip.emplace_back(i, i, 0.5 + rng.uniform());
    info[i] = rng.normal();
  }
  auto obs_prec = linalg::sparse_symmetric(m, ptrip);

  Eigen::MatrixXd Vinv = Eigen::MatrixXd(obs_prec) + kappa * Eigen::MatrixXd(prior.Q);
  Eigen::MatrixXd V = Vinv.inverse();
  Eigen::VectorXd mean_oracle = V * info;

  const int draws = 10000;
  Eigen::MatrixXd xs(draws, m);
  for (int k = 0; k < draws; ++k)
    xs.row(k) = mrf::conditional_sample(prior, kappa, obs_prec, info, rng).transpose();

  Eigen::RowVectorXd mu = xs.colwise().mean();
  for (int i = 0; i < m; ++i)
    CHECK(std::abs(mu[i] - mean_oracle[i]) < 4.5 * std::sqrt(V(i, i) / draws));

  Eigen::MatrixXd centered = xs.rowwise() - mu;
  Eigen::MatrixXd cov = centered.transpose() * centered / (draws - 1);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      double se = std::sqrt((V(i, i) * V(j, j) + V(i, j) * V(i, j)) / draws);
      CHECK(std::abs(cov(i, j) - V(i, j)) < 5.0 * se + 1e-12);
    }
}
