#include "spatfuse/mrf.hpp"

#include <string>
#include <vector>

#include "spatfuse/errors.hpp"

namespace spatfuse::mrf {

namespace {

struct OpTerm {
  int cell;
  double coef;
};

void accumulate(std::vector<Eigen::Triplet<double>>& trip,
                const std::vector<OpTerm>& op, double weight) {
  for (const auto& a : op)
    for (const auto& b : op)
      trip.emplace_back(a.cell, b.cell, weight * a.coef * b.coef);
}

}  // namespace

IntrinsicPrecision tps_precision(const grid::RegularGrid& g) {
  g.validate();
  if (g.nrow < 4 || g.ncol < 4)
    throw DataError("thin-plate field needs at least a 4x4 grid, got " +
                    std::to_string(g.nrow) + "x" + std::to_string(g.ncol));
  const int m = g.cells();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(m) * 24);

  // row-direction second differences (column fixed)
  for (int r = 1; r < g.nrow - 1; ++r)
    for (int c = 0; c < g.ncol; ++c)
      accumulate(trip,
                 {{g.index(r - 1, c), 1.0}, {g.index(r, c), -2.0}, {g.index(r + 1, c), 1.0}},
                 1.0);
  // column-direction second differences (row fixed)
  for (int r = 0; r < g.nrow; ++r)
    for (int c = 1; c < g.ncol - 1; ++c)
      accumulate(trip,
                 {{g.index(r, c - 1), 1.0}, {g.index(r, c), -2.0}, {g.index(r, c + 1), 1.0}},
                 1.0);
  // cross differences, weight 2 for the mixed-curvature term
  for (int r = 0; r + 1 < g.nrow; ++r)
    for (int c = 0; c + 1 < g.ncol; ++c)
      accumulate(trip,
                 {{g.index(r, c), 1.0},
                  {g.index(r, c + 1), -1.0},
                  {g.index(r + 1, c), -1.0},
                  {g.index(r + 1, c + 1), 1.0}},
                 2.0);

  IntrinsicPrecision out;
  out.Q = linalg::sparse_symmetric(m, trip);
  out.rank_deficiency = 3;
  out.null_basis.resize(m, 3);
  for (int i = 0; i < m; ++i) {
    auto [r, c] = g.rowcol(i);
    out.null_basis(i, 0) = 1.0;
    out.null_basis(i, 1) = static_cast<double>(r);
    out.null_basis(i, 2) = static_cast<double>(c);
  }
  return out;
}

IntrinsicPrecision car_precision(const grid::RegularGrid& g) {
  g.validate();
  const int m = g.cells();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(m) * 5);
  for (int i = 0; i < m; ++i) {
    auto nb = grid::rook_neighbors(g, i);
    trip.emplace_back(i, i, static_cast<double>(nb.size()));
    for (int j : nb) trip.emplace_back(i, j, -1.0);
  }
  IntrinsicPrecision out;
  out.Q = linalg::sparse_symmetric(m, trip);
  out.rank_deficiency = 1;
  out.null_basis = Eigen::MatrixXd::Ones(m, 1);
  return out;
}

Eigen::VectorXd conditional_sample(const IntrinsicPrecision& prior, double kappa,
                                   const linalg::SparseSym& obs_prec,
                                   const Eigen::VectorXd& obs_info, Rng& rng) {
  if (!(kappa > 0)) throw NumericError("conditional field draw: kappa must be positive");
  linalg::SparseSym Vinv = obs_prec + kappa * prior.Q;
  linalg::CholeskyFactor f;
  f.factorize(Vinv);
  Eigen::VectorXd mean = f.solve(obs_info);
  return f.sample_from_precision(mean, rng);
}

}  // namespace spatfuse::mrf
