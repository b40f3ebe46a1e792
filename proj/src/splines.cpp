#include "spatfuse/splines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "spatfuse/errors.hpp"

namespace spatfuse {

namespace {

double cubic_radial(double r) { return r * r * r; }

double tps_radial(double r) { return r > 0.0 ? r * r * std::log(r) : 0.0; }

// symmetric inverse square root on the absolute spectrum
Eigen::MatrixXd abs_inv_sqrt(const Eigen::MatrixXd& K, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
  if (es.info() != Eigen::Success)
    throw NumericError(std::string(what) + ": kernel eigendecomposition failed");
  Eigen::VectorXd a = es.eigenvalues().cwiseAbs();
  double cutoff = 1e-12 * a.maxCoeff();
  for (int i = 0; i < a.size(); ++i)
    if (a[i] <= cutoff)
      throw NumericError(std::string(what) +
                         ": knot kernel is singular, knots too close together");
  return es.eigenvectors() * a.cwiseSqrt().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

double quantile_type7(const std::vector<double>& sorted, double p) {
  double h = p * (static_cast<double>(sorted.size()) - 1.0);
  std::size_t i = static_cast<std::size_t>(std::floor(h));
  if (i + 1 >= sorted.size()) return sorted.back();
  return sorted[i] + (h - i) * (sorted[i + 1] - sorted[i]);
}

}  // namespace

Eigen::MatrixXd SmoothTerm::fixed(const Eigen::VectorXd& x) const {
  if (planar()) throw DataError("planar smooth evaluated with one coordinate");
  return x;
}

Eigen::MatrixXd SmoothTerm::fixed(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
  if (!planar()) throw DataError("scalar smooth evaluated with two coordinates");
  if (x.size() != y.size()) throw DataError("coordinate lengths differ");
  Eigen::MatrixXd F(x.size(), 2);
  F.col(0) = x;
  F.col(1) = y;
  return F;
}

Eigen::MatrixXd SmoothTerm::penalized(const Eigen::VectorXd& x) const {
  if (planar()) throw DataError("planar smooth evaluated with one coordinate");
  const int k = size();
  Eigen::MatrixXd R(x.size(), k);
  for (Eigen::Index i = 0; i < x.size(); ++i)
    for (int j = 0; j < k; ++j) R(i, j) = cubic_radial(std::abs(x[i] - kx[j]));
  return R * kernel_inv_sqrt;
}

Eigen::MatrixXd SmoothTerm::penalized(const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& y) const {
  if (!planar()) throw DataError("scalar smooth evaluated with two coordinates");
  if (x.size() != y.size()) throw DataError("coordinate lengths differ");
  const int k = size();
  Eigen::MatrixXd R(x.size(), k);
  for (Eigen::Index i = 0; i < x.size(); ++i)
    for (int j = 0; j < k; ++j)
      R(i, j) = tps_radial(std::hypot(x[i] - kx[j], y[i] - ky[j]));
  return R * kernel_inv_sqrt;
}

SmoothTerm cubic_rbf_basis(const std::vector<double>& knots) {
  if (knots.size() < 2) throw DataError("cubic smooth needs at least 2 knots");
  const int k = static_cast<int>(knots.size());
  Eigen::MatrixXd K(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) K(i, j) = cubic_radial(std::abs(knots[i] - knots[j]));
  SmoothTerm t;
  t.kx = knots;
  t.kernel_inv_sqrt = abs_inv_sqrt(K, "cubic smooth");
  return t;
}

SmoothTerm tps2d_basis(const std::vector<double>& kx, const std::vector<double>& ky) {
  if (kx.size() != ky.size()) throw DataError("planar knot coordinate lengths differ");
  if (kx.size() < 3) throw DataError("planar smooth needs at least 3 knots");
  const int k = static_cast<int>(kx.size());
  Eigen::MatrixXd K(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      K(i, j) = tps_radial(std::hypot(kx[i] - kx[j], ky[i] - ky[j]));
  SmoothTerm t;
  t.kx = kx;
  t.ky = ky;
  t.kernel_inv_sqrt = abs_inv_sqrt(K, "planar smooth");
  return t;
}

KnotResult knots_quantile(const std::vector<double>& values, int k) {
  if (k < 1) throw DataError("knot count must be positive");
  if (values.size() < 2) throw DataError("too few values to place knots");
  std::vector<double> sorted(values);
  std::sort(sorted.begin(), sorted.end());
  double range = sorted.back() - sorted.front();
  if (range <= 0.0) throw DataError("cannot place knots on a constant covariate");

  KnotResult res;
  for (int j = 1; j <= k; ++j)
    res.knots.push_back(quantile_type7(sorted, j / (k + 1.0)));

  // ties in the data collapse adjacent quantiles
  std::vector<double> unique;
  for (double v : res.knots)
    if (unique.empty() || v - unique.back() > 1e-12 * range) unique.push_back(v);
  if (static_cast<int>(unique.size()) < k) {
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "duplicate covariate values reduced knot count from %d to %d", k,
                  static_cast<int>(unique.size()));
    res.warning = buf;
    res.knots = std::move(unique);
  }
  return res;
}

KnotLayout plan_knots_2d(double xmin, double xmax, double ymin, double ymax, int k) {
  if (k < 1) throw DataError("knot count must be positive");
  if (!(xmax > xmin) || !(ymax > ymin)) throw DataError("degenerate knot rectangle");
  double w = xmax - xmin, h = ymax - ymin;
  // choose a grid at least k large with aspect ratio near the rectangle's
  int nx = std::max(1, static_cast<int>(std::round(std::sqrt(k * w / h))));
  int ny = (k + nx - 1) / nx;
  while (nx * ny < k) ++ny;
  KnotLayout out;
  for (int iy = 0; iy < ny && static_cast<int>(out.x.size()) < k; ++iy)
    for (int ix = 0; ix < nx && static_cast<int>(out.x.size()) < k; ++ix) {
      out.x.push_back(xmin + (ix + 0.5) * w / nx);
      out.y.push_back(ymin + (iy + 0.5) * h / ny);
    }
  return out;
}

}  // namespace spatfuse
