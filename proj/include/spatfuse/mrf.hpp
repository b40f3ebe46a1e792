#pragma once

#include <Eigen/Dense>

#include "spatfuse/grid.hpp"
#include "spatfuse/linalg.hpp"
#include "spatfuse/rng.hpp"

namespace spatfuse::mrf {

// Intrinsic Gaussian Markov random field prior on grid cells: improper density
// proportional to exp(-kappa/2 * phi' Q phi). Q is PSD with the stated rank
// deficiency; null_basis columns span the directions the prior leaves free.
struct IntrinsicPrecision {
  linalg::SparseSym Q;
  int rank_deficiency = 0;
  Eigen::MatrixXd null_basis;
};

// Thin-plate penalty: Q = D'D assembled from every interior-fitting second
// difference along rows and columns plus cross differences entering with
// weight 2, matching the integrated squared-curvature penalty
// (f_rr^2 + 2 f_rc^2 + f_cc^2). Interior rows carry the 13-point stencil
// {center 20, axial -8, diagonal 2, two-step axial 1}; boundary rows fall out
// of the same assembly. Rank deficiency 3, null basis {1, r, c}.
// Requires nrow, ncol >= 4.
IntrinsicPrecision tps_precision(const grid::RegularGrid& g);

// First-order intrinsic CAR: Q = degree - rook adjacency. Rank deficiency 1,
// null basis {1}.
IntrinsicPrecision car_precision(const grid::RegularGrid& g);

// One draw from the conditional field N(V * obs_info, V) with
// V^{-1} = obs_prec + kappa * Q.
Eigen::VectorXd conditional_sample(const IntrinsicPrecision& prior, double kappa,
                                   const linalg::SparseSym& obs_prec,
                                   const Eigen::VectorXd& obs_info, Rng& rng);

}  // namespace spatfuse::mrf
