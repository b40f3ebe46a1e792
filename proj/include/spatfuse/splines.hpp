#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace spatfuse {

// Low-rank radial smoothers in mixed-model form. A smooth term contributes an
// unpenalised linear block and a penalised block Z = R * P^{-1/2}, where R is
// the radial design at the knots and P is the knot kernel taken on its
// absolute spectrum (the kernel matrix itself is indefinite). A unit-variance
// ridge penalty on the Z coefficients then reproduces the generalized-ridge
// fit in the original basis, so variance components act as inverse smoothing
// parameters.
struct SmoothTerm {
  // knot coordinates; ky is empty for one-dimensional terms
  std::vector<double> kx;
  std::vector<double> ky;
  // P^{-1/2}, fixed at construction so that training and prediction supports
  // share one transform
  Eigen::MatrixXd kernel_inv_sqrt;

  bool planar() const { return !ky.empty(); }
  int size() const { return static_cast<int>(kx.size()); }

  // linear columns without the intercept: [x] or [x, y]
  Eigen::MatrixXd fixed(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd fixed(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const;

  // penalised radial columns, one per knot
  Eigen::MatrixXd penalized(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd penalized(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const;
};

// |r|^3 radial basis on the given knots
SmoothTerm cubic_rbf_basis(const std::vector<double>& knots);

// r^2 log r radial basis on the given planar knots
SmoothTerm tps2d_basis(const std::vector<double>& kx, const std::vector<double>& ky);

struct KnotResult {
  std::vector<double> knots;
  std::string warning;  // empty unless the requested count was reduced
};

// Knots at the k equally spaced interior quantiles j/(k+1). Duplicate values
// in the data can collapse adjacent quantiles; the deduplicated set is
// returned with a warning. All-equal data is an error.
KnotResult knots_quantile(const std::vector<double>& values, int k);

struct KnotLayout {
  std::vector<double> x;
  std::vector<double> y;
};

// Approximately k knots on a near-square grid covering the rectangle, placed
// at cell midpoints so none sit on the boundary.
KnotLayout plan_knots_2d(double xmin, double xmax, double ymin, double ymax, int k);

}  // namespace spatfuse
