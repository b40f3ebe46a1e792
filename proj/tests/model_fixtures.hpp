#pragma once

// Random desk-scale model instances for the oracle comparisons. The oracle
// input builder re-derives the stacked dense system straight from the model
// definition, independently of the library's assembly and caching.

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "spatfuse/grid.hpp"
#include "spatfuse/model.hpp"
#include "spatfuse/mrf.hpp"
#include "spatfuse/rng.hpp"

namespace fixtures {

using spatfuse::FusionModelSpec;
using spatfuse::HyperState;
using spatfuse::ProxyNoise;
using spatfuse::Rng;
using spatfuse::SparseRow;

struct FixtureOptions {
  bool joint = false;
  bool include_discrepancy = true;
  bool allow_za = true;
  bool allow_countscaled = true;
  bool allow_colocated = true;
  bool allow_subsampled = true;
  bool smooth_block = true;
};

inline SparseRow selection_rows(int nrows, const std::vector<int>& cells, int ncols) {
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < nrows; ++i) t.emplace_back(i, cells[i], 1.0);
  SparseRow P(nrows, ncols);
  P.setFromTriplets(t.begin(), t.end());
  return P;
}

// cells must span two affine dimensions so that TPS null directions stay
// identifiable through a selection mapping
inline bool spans_plane(const std::vector<int>& cells, int ncol) {
  std::vector<std::pair<int, int>> uniq;
  for (int c : cells) {
    std::pair<int, int> rc{c / ncol, c % ncol};
    bool seen = false;
    for (auto& u : uniq) seen = seen || u == rc;
    if (!seen) uniq.push_back(rc);
  }
  if (uniq.size() < 3) return false;
  for (std::size_t i = 0; i < uniq.size(); ++i)
    for (std::size_t j = i + 1; j < uniq.size(); ++j)
      for (std::size_t k = j + 1; k < uniq.size(); ++k) {
        long ax = uniq[j].first - uniq[i].first, ay = uniq[j].second - uniq[i].second;
        long bx = uniq[k].first - uniq[i].first, by = uniq[k].second - uniq[i].second;
        if (ax * by - ay * bx != 0) return true;
      }
  return false;
}

inline std::vector<int> random_cells(Rng& rng, int count, int m, int ncol) {
  std::vector<int> cells(count);
  for (int tries = 0; tries < 100; ++tries) {
    for (int i = 0; i < count; ++i) cells[i] = static_cast<int>(rng.integer(m));
    if (spans_plane(cells, ncol)) return cells;
  }
  throw std::runtime_error("could not draw a plane-spanning cell set");
}

inline FusionModelSpec random_instance(Rng& rng, const FixtureOptions& opt = {}) {
  FusionModelSpec spec;
  const int nrow = 4 + static_cast<int>(rng.integer(3));
  const int ncol = 4 + static_cast<int>(rng.integer(3));
  const int mL = nrow * ncol;
  spatfuse::grid::RegularGrid g{nrow, ncol, 1.0, 0.0, 0.0, {}};

  // grid design: intercept, two fixed covariates, optionally a penalized pair
  const int pL = opt.smooth_block ? 5 : 3;
  spec.ZL = Eigen::MatrixXd(mL, pL);
  spec.ZL.col(0).setOnes();
  for (int j = 1; j < pL; ++j)
    for (int i = 0; i < mL; ++i) spec.ZL(i, j) = rng.normal();
  std::vector<int> groups;
  groups.insert(groups.end(), {-1, -1, -1});
  if (opt.smooth_block) groups.insert(groups.end(), {0, 0});

  const int py = rng.uniform() < 0.5 ? 2 : 0;
  const int n = 8 + static_cast<int>(rng.integer(8));
  spec.Zy = Eigen::MatrixXd(n, py);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < py; ++j) spec.Zy(i, j) = rng.normal();
  std::vector<int> gy(py, -1);
  groups.insert(groups.begin(), gy.begin(), gy.end());

  const int pa = (opt.allow_za && rng.uniform() < 0.5) ? 1 : 0;
  const int r = 8 + static_cast<int>(rng.integer(9));
  spec.Za = Eigen::MatrixXd::Ones(r, pa);
  for (int j = 0; j < pa; ++j) groups.push_back(-1);
  spec.coef_group = groups;

  spec.P_Y = selection_rows(n, random_cells(rng, n, mL, ncol), mL);
  std::vector<int> acells = random_cells(rng, r, mL, ncol);
  spec.P_A = selection_rows(r, acells, mL);
  spec.P_phi = spec.P_A;
  spec.Q_phi = rng.uniform() < 0.5 ? spatfuse::mrf::tps_precision(g)
                                   : spatfuse::mrf::car_precision(g);

  if (opt.joint) {
    spec.joint_fields = true;
    spec.P_Yc = spec.P_Y;
    spec.P_Ac = spec.P_A;
    spec.Q_g = rng.uniform() < 0.5 ? spatfuse::mrf::tps_precision(g)
                                   : spatfuse::mrf::car_precision(g);
  }

  spec.y = Eigen::VectorXd(n);
  for (int i = 0; i < n; ++i) spec.y[i] = 2.0 * rng.normal();
  spec.a = Eigen::VectorXd(r);
  for (int i = 0; i < r; ++i) spec.a[i] = 2.0 * rng.normal();

  spec.n_days = Eigen::VectorXd::Constant(n, 30.0);
  if (opt.allow_subsampled && rng.uniform() < 0.7)
    for (int i = 0; i < n; ++i)
      spec.n_days[i] = 10.0 + static_cast<double>(rng.integer(21));

  spec.colocated.assign(n, 0);
  int q = 0;
  if (opt.allow_colocated && rng.uniform() < 0.5) q = (n >= 12 && rng.uniform() < 0.5) ? 2 : 1;
  if (q > 0) {
    std::vector<Eigen::Triplet<double>> t;
    for (int s = 0; s < q; ++s) {
      spec.colocated[2 * s] = 1;
      spec.colocated[2 * s + 1] = 1;
      t.emplace_back(2 * s, s, 1.0);
      t.emplace_back(2 * s + 1, s, 1.0);
    }
    spec.P_delta = SparseRow(n, q);
    spec.P_delta.setFromTriplets(t.begin(), t.end());
  } else {
    spec.P_delta = SparseRow(n, 0);
  }

  if (opt.allow_countscaled && rng.uniform() < 0.35) {
    spec.proxy_noise = ProxyNoise::CountScaled;
    spec.proxy_counts = Eigen::VectorXd(r);
    for (int i = 0; i < r; ++i)
      spec.proxy_counts[i] = 5.0 + static_cast<double>(rng.integer(26));
  }

  spec.include_discrepancy = opt.include_discrepancy;
  return spec;
}

inline HyperState random_state(Rng& rng, const FusionModelSpec& spec) {
  HyperState th;
  th.beta1 = 0.7 + 0.3 * rng.normal();
  th.sigma2_sub = std::exp(0.5 * rng.normal());
  th.sigma2_A = 0.5 * std::exp(0.5 * rng.normal());
  th.sigma2_alpha = std::exp(0.5 * rng.normal());
  th.sigma2_h = 0.5 * std::exp(0.5 * rng.normal());
  th.kappa = std::exp(rng.normal());
  th.kappa_g = std::exp(rng.normal());
  th.smooth_var = Eigen::VectorXd(spec.n_smooth());
  for (int i = 0; i < th.smooth_var.size(); ++i)
    th.smooth_var[i] = std::exp(0.5 * rng.normal());
  th.delta = Eigen::VectorXd(spec.n_offsets());
  for (int i = 0; i < th.delta.size(); ++i) th.delta[i] = rng.normal();
  return th;
}

struct OracleInputs {
  Eigen::MatrixXd W;
  Eigen::VectorXd d;
  Eigen::VectorXd v;
  Eigen::MatrixXd H;   // zero columns when no field is integrated
  Eigen::MatrixXd Pf;  // field precision with kappa scaling applied
  int null_dim = 0;
  Eigen::VectorXd lambda;
};

// Re-derives the stacked dense system from the model definition: the design is
// [Z_y | P_Y Z_L | 0] over [0 | beta1 P_A Z_L | Z_a], the field enters the
// proxy rows (and in joint mode also the observation rows through g).
inline OracleInputs oracle_inputs(const FusionModelSpec& spec, const HyperState& th) {
  if (spec.proxy_as_covariate)
    throw std::runtime_error("oracle builder handles the standard variants only");
  const bool use_proxy = spec.include_proxy;
  const bool use_disc = use_proxy && spec.include_discrepancy;
  const int n = spec.n_obs();
  const int r = use_proxy ? spec.n_proxy() : 0;
  const int py = static_cast<int>(spec.Zy.cols());
  const int pL = static_cast<int>(spec.ZL.cols());
  const int pa = use_proxy ? static_cast<int>(spec.Za.cols()) : 0;
  const int p = py + pL + pa;

  OracleInputs in;
  in.W = Eigen::MatrixXd::Zero(n + r, p);
  if (py > 0) in.W.topLeftCorner(n, py) = spec.Zy;
  in.W.block(0, py, n, pL) = Eigen::MatrixXd(spec.P_Y) * spec.ZL;
  in.d = Eigen::VectorXd(n + r);
  Eigen::VectorXd yt = spec.y;
  if (spec.n_offsets() > 0) yt -= spec.P_delta * th.delta;
  in.d.head(n) = yt;
  in.v = Eigen::VectorXd(n + r);
  in.v.head(n) = spatfuse::obs_variance(spec, th);
  if (use_proxy) {
    in.W.block(n, py, r, pL) = th.beta1 * (Eigen::MatrixXd(spec.P_A) * spec.ZL);
    if (pa > 0) in.W.bottomRightCorner(r, pa) = spec.Za;
    in.d.tail(r) = spec.a;
    in.v.tail(r) = spatfuse::proxy_variance(spec, th);
  }

  in.lambda = Eigen::VectorXd(p);
  for (int j = 0; j < p; ++j) {
    int grp = spec.coef_group[j];
    in.lambda[j] = grp < 0 ? spec.fixed_var : th.smooth_var[grp];
  }

  if (spec.joint_fields) {
    const int mc = static_cast<int>(spec.P_Yc.cols());
    const int nf = use_disc ? 2 * mc : mc;
    in.H = Eigen::MatrixXd::Zero(n + r, nf);
    in.H.topLeftCorner(n, mc) = Eigen::MatrixXd(spec.P_Yc);
    in.H.block(n, 0, r, mc) = th.beta1 * Eigen::MatrixXd(spec.P_Ac);
    in.Pf = Eigen::MatrixXd::Zero(nf, nf);
    in.Pf.topLeftCorner(mc, mc) = th.kappa_g * Eigen::MatrixXd(spec.Q_g.Q);
    in.null_dim = spec.Q_g.rank_deficiency;
    if (use_disc) {
      in.H.bottomRightCorner(r, mc) = Eigen::MatrixXd(spec.P_Ac);
      in.Pf.bottomRightCorner(mc, mc) = th.kappa * Eigen::MatrixXd(spec.Q_phi.Q);
      in.null_dim += spec.Q_phi.rank_deficiency;
    }
  } else if (use_disc) {
    const int mphi = static_cast<int>(spec.P_phi.cols());
    in.H = Eigen::MatrixXd::Zero(n + r, mphi);
    in.H.bottomRows(r) = Eigen::MatrixXd(spec.P_phi);
    in.Pf = th.kappa * Eigen::MatrixXd(spec.Q_phi.Q);
    in.null_dim = spec.Q_phi.rank_deficiency;
  } else {
    in.H = Eigen::MatrixXd(n + r, 0);
    in.Pf = Eigen::MatrixXd(0, 0);
  }
  return in;
}

}  // namespace fixtures
