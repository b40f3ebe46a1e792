#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <memory>
#include <vector>

#include "spatfuse/rng.hpp"

namespace spatfuse::linalg {

using SparseSym = Eigen::SparseMatrix<double>;

// Builds a sparse symmetric matrix from triplets (duplicates summed) and
// validates symmetry.
SparseSym sparse_symmetric(int dim, const std::vector<Eigen::Triplet<double>>& trip);

double quad_form(const SparseSym& A, const Eigen::VectorXd& x);

// Sparse Cholesky (LDL^T) of an SPD matrix with a fill-reducing ordering.
// Non-positive pivots (relative tolerance 1e-12 against the largest diagonal
// entry of the input) raise NumericError carrying the original row index.
// The symbolic analysis is reused across factorizations of the same pattern.
class CholeskyFactor {
 public:
  enum class Ordering { amd, natural };

  explicit CholeskyFactor(Ordering ord = Ordering::amd);
  ~CholeskyFactor();
  CholeskyFactor(CholeskyFactor&&) noexcept;
  CholeskyFactor& operator=(CholeskyFactor&&) noexcept;

  void factorize(const SparseSym& A);

  int dim() const;
  double log_det() const;
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& B) const;

  // x ~ N(mean, A^{-1}) where A is the factorized precision matrix
  Eigen::VectorXd sample_from_precision(const Eigen::VectorXd& mean, Rng& rng) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace spatfuse::linalg
