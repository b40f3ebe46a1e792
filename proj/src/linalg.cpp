#include "spatfuse/linalg.hpp"

#include <Eigen/SparseCholesky>
#include <cmath>
#include <string>

#include "spatfuse/errors.hpp"

namespace spatfuse::linalg {

SparseSym sparse_symmetric(int dim, const std::vector<Eigen::Triplet<double>>& trip) {
  SparseSym A(dim, dim);
  A.setFromTriplets(trip.begin(), trip.end());
  SparseSym At = SparseSym(A.transpose());
  SparseSym diff = A - At;
  double scale = 1.0;
  for (int k = 0; k < A.outerSize(); ++k)
    for (SparseSym::InnerIterator it(A, k); it; ++it)
      scale = std::max(scale, std::abs(it.value()));
  if (diff.coeffs().size() > 0 && diff.coeffs().abs().maxCoeff() > 1e-12 * scale)
    throw DataError("sparse symmetric build: matrix is not symmetric");
  A.makeCompressed();
  return A;
}

double quad_form(const SparseSym& A, const Eigen::VectorXd& x) {
  return x.dot(A * x);
}

namespace {
constexpr double kPivotRelTol = 1e-12;

template <typename Solver>
struct Backend {
  Solver solver;
  bool analyzed = false;
  int n = 0;

  void factorize_impl(const SparseSym& A) {
    n = static_cast<int>(A.rows());
    if (!analyzed) {
      solver.analyzePattern(A);
      analyzed = true;
    }
    solver.factorize(A);
    if (solver.info() != Eigen::Success)
      throw NumericError("sparse Cholesky failed: matrix is not positive definite");
    double max_diag = 0.0;
    for (int i = 0; i < n; ++i)
      max_diag = std::max(max_diag, std::abs(A.coeff(i, i)));
    const auto& D = solver.vectorD();
    for (int i = 0; i < n; ++i) {
      if (!(D[i] > kPivotRelTol * max_diag)) {
        // map the permuted pivot position back to the original row
        int orig = solver.permutationPinv().indices()[i];
        throw NumericError("sparse Cholesky failed: non-positive pivot at index " +
                           std::to_string(orig));
      }
    }
  }

  double log_det() const { return solver.vectorD().array().log().sum(); }

  // A = P^{-1} L D L^T P, so A^{-1} = P^{-1} L^{-T} D^{-1/2} (...)^T and a
  // draw with covariance A^{-1} is mean + P^{-1} L^{-T} D^{-1/2} z
  Eigen::VectorXd sample(const Eigen::VectorXd& mean, Rng& rng) const {
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z[i] = rng.normal();
    Eigen::VectorXd w = z.array() / solver.vectorD().array().sqrt();
    solver.matrixU().solveInPlace(w);
    return mean + solver.permutationPinv() * w;
  }
};

using AmdSolver =
    Eigen::SimplicialLDLT<SparseSym, Eigen::Lower, Eigen::AMDOrdering<int>>;
using NatSolver =
    Eigen::SimplicialLDLT<SparseSym, Eigen::Lower, Eigen::NaturalOrdering<int>>;
}  // namespace

struct CholeskyFactor::Impl {
  Ordering ord;
  Backend<AmdSolver> amd;
  Backend<NatSolver> nat;
};

CholeskyFactor::CholeskyFactor(Ordering ord) : impl_(new Impl) { impl_->ord = ord; }
CholeskyFactor::~CholeskyFactor() = default;
CholeskyFactor::CholeskyFactor(CholeskyFactor&&) noexcept = default;
CholeskyFactor& CholeskyFactor::operator=(CholeskyFactor&&) noexcept = default;

void CholeskyFactor::factorize(const SparseSym& A) {
  if (A.rows() != A.cols())
    throw DataError("Cholesky: matrix must be square");
  if (impl_->ord == Ordering::amd)
    impl_->amd.factorize_impl(A);
  else
    impl_->nat.factorize_impl(A);
}

int CholeskyFactor::dim() const {
  return impl_->ord == Ordering::amd ? impl_->amd.n : impl_->nat.n;
}

double CholeskyFactor::log_det() const {
  return impl_->ord == Ordering::amd ? impl_->amd.log_det() : impl_->nat.log_det();
}

Eigen::VectorXd CholeskyFactor::solve(const Eigen::VectorXd& b) const {
  return impl_->ord == Ordering::amd ? impl_->amd.solver.solve(b).eval()
                                     : impl_->nat.solver.solve(b).eval();
}

Eigen::MatrixXd CholeskyFactor::solve(const Eigen::MatrixXd& B) const {
  return impl_->ord == Ordering::amd ? impl_->amd.solver.solve(B).eval()
                                     : impl_->nat.solver.solve(B).eval();
}

Eigen::VectorXd CholeskyFactor::sample_from_precision(const Eigen::VectorXd& mean,
                                                      Rng& rng) const {
  return impl_->ord == Ordering::amd ? impl_->amd.sample(mean, rng)
                                     : impl_->nat.sample(mean, rng);
}

}  // namespace spatfuse::linalg
