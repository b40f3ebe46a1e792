#include "spatfuse/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "spatfuse/errors.hpp"

namespace spatfuse {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_det_ldlt(const Eigen::LDLT<Eigen::MatrixXd>& ldlt, const char* what) {
  Eigen::VectorXd d = ldlt.vectorD();
  double s = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (!(d[i] > 0.0))
      throw NumericError(std::string(what) + ": not positive definite");
    s += std::log(d[i]);
  }
  return s;
}

// The data quadratic is a difference of same-scale positive forms, so its
// absolute error grows with the raw magnitude that cancels (roughly eps times
// the largest term). Near-zero noise variances push that error past the size
// of the result itself and the computed density becomes meaningless; such
// states are rejected rather than reported with an arbitrary value.
void check_quad(double quad, double mag) {
  const double slack = 1e-12 * mag;
  if (!std::isfinite(quad) || quad < -slack || slack > 0.5)
    throw NumericError("marginal quadratic form is beyond working precision");
}

Eigen::VectorXd sampling_factor(const Eigen::VectorXd& counts, double n_month,
                                const char* what) {
  Eigen::VectorXd k(counts.size());
  for (Eigen::Index i = 0; i < counts.size(); ++i) {
    if (counts[i] < 1.0)
      throw DataError(std::string(what) + ": averaging count below 1");
    if (counts[i] > n_month)
      throw DataError(std::string(what) + ": averaging count exceeds the month length");
    k[i] = 1.0 / counts[i] - 1.0 / n_month;
  }
  return k;
}

}  // namespace

int FusionModelSpec::n_smooth() const {
  int mx = -1;
  for (int g : coef_group) mx = std::max(mx, g);
  return mx + 1;
}

Eigen::VectorXd obs_variance(const FusionModelSpec& spec, const HyperState& th) {
  const int n = spec.n_obs();
  Eigen::VectorXd counts = spec.n_days.size() ? spec.n_days
                                              : Eigen::VectorXd::Constant(n, spec.n_month);
  if (counts.size() != n) throw DataError("n_days length does not match observations");
  Eigen::VectorXd k = sampling_factor(counts, spec.n_month, "observations");
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) {
    v[i] = spec.sigma2_eps_fixed / counts[i] + k[i] * th.sigma2_sub;
    bool coloc = i < static_cast<int>(spec.colocated.size()) && spec.colocated[i];
    if (!coloc) v[i] += th.sigma2_h;
  }
  return v;
}

Eigen::VectorXd proxy_variance(const FusionModelSpec& spec, const HyperState& th) {
  const int r = spec.n_proxy();
  if (spec.proxy_noise == ProxyNoise::Constant)
    return Eigen::VectorXd::Constant(r, th.sigma2_A);
  if (spec.proxy_counts.size() != r)
    throw DataError("count-scaled proxy noise requires per-cell retrieval counts");
  Eigen::VectorXd k = sampling_factor(spec.proxy_counts, spec.n_month, "proxy");
  return Eigen::VectorXd::Constant(r, th.sigma2_A) + k * th.sigma2_alpha;
}

Eigen::MatrixXd ProxyMarginal::apply(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd vx = va_inv.asDiagonal() * x;
  if (!prec) return vx;
  Eigen::MatrixXd t = P->transpose() * vx;
  return vx - va_inv.asDiagonal() * Eigen::MatrixXd(*P * prec->solve(t));
}

Eigen::MatrixXd StackedMarginal::apply(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd vx = v_inv.asDiagonal() * x;
  Eigen::MatrixXd t = H.transpose() * vx;
  return vx - v_inv.asDiagonal() * Eigen::MatrixXd(H * prec->solve(t));
}

OrthoResult orthogonalize(const Eigen::VectorXd& phi, const Eigen::VectorXd& L,
                          const std::vector<std::uint8_t>& mask) {
  if (phi.size() != L.size()) throw DataError("field lengths differ");
  double sw = 0, sl = 0, sll = 0, sp = 0, slp = 0;
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    sw += 1.0;
    sl += L[i];
    sll += L[i] * L[i];
    sp += phi[i];
    slp += L[i] * phi[i];
  }
  if (sw < 1.0) throw DataError("empty mask in orthogonalization");
  OrthoResult out;
  double varL = sll - sl * sl / sw;
  if (varL <= 1e-12 * std::max(1.0, sll)) {
    // numerically constant L: remove the mean only
    out.c0 = sp / sw;
    out.c1 = 0.0;
  } else {
    out.c1 = (slp - sl * sp / sw) / varL;
    out.c0 = (sp - out.c1 * sl) / sw;
  }
  out.phi_adj = phi.array() - out.c0 - out.c1 * L.array();
  return out;
}

// ---------------------------------------------------------------------------
// evaluator internals

struct MarginalEvaluator::Impl {
  // effective dimensions after variant reduction
  int n = 0, r = 0, p = 0, q = 0, py = 0, pL = 0, pa = 0;
  bool use_proxy = false, use_disc = false, joint = false;

  Eigen::MatrixXd ZL;           // grid design, possibly with the proxy column appended
  Eigen::MatrixXd ZY;           // n x p
  Eigen::MatrixXd UA;           // r x p, proxy design with the L block unscaled
  Eigen::MatrixXd UtU;          // UA' UA, constant-noise fast path
  Eigen::VectorXd scale_mask;   // 1 on columns multiplied by beta1, 0 elsewhere
  std::vector<int> coef_group;  // effective coefficient groups
  std::vector<ParamDesc> params;
  int n_smooth = 0;

  SparseSym Pphi_col;  // column-major copy for precision assembly
  SparseSym Qphi, Qg;
  int def_phi = 0, def_g = 0;
  int mphi = 0, mc = 0;

  // A-side cache for the separable path, keyed by the exact parameter values
  struct AEntry {
    double s2A = -1, s2al = -1, kap = -1;
    Eigen::MatrixXd G;  // UA' SigmaA^{-1} UA
    Eigen::VectorXd g;  // UA' SigmaA^{-1} a
    double qf = 0;      // a' SigmaA^{-1} a
    double mag = 0;     // raw a' V_A^{-1} a, the scale the field solve cancels
    double ld = 0;      // log |Sigma_A|^{-1/2} contribution
    std::shared_ptr<CholeskyFactor> factor;  // field posterior precision
    Eigen::VectorXd va_inv;
    std::uint64_t age = 0;
  };
  mutable std::vector<AEntry> acache;

  // stacked-path cache: everything except the coefficient prior and delta
  struct JEntry {
    std::array<double, 7> key{};  // s2sub, s2A, s2al, s2h, kappa, kappa_g, beta1
    Eigen::MatrixXd WSW;          // W' Sigma^{-1} W
    Eigen::VectorXd WSD;          // W' Sigma^{-1} [y; a]
    Eigen::MatrixXd WSE;          // W' Sigma^{-1} E
    Eigen::MatrixXd ESE;          // E' Sigma^{-1} E
    Eigen::VectorXd ESD;
    double DSD = 0;
    double mag = 0;  // raw [y;a]' V^{-1} [y;a] before the field solve
    double ld = 0;
    std::shared_ptr<CholeskyFactor> factor;  // joint field posterior precision
    Eigen::VectorXd v_inv;
    std::uint64_t age = 0;
  };
  mutable std::vector<JEntry> jcache;
  mutable std::uint64_t clock = 0;

  const FusionModelSpec* spec = nullptr;

  void apply_fixed(HyperState& th) const {
    if (spec->fix_kappa) th.kappa = *spec->fix_kappa;
    if (spec->fix_beta1) th.beta1 = *spec->fix_beta1;
  }

  Eigen::VectorXd beta1_scale(double beta1) const {
    return Eigen::VectorXd::Ones(p) + (beta1 - 1.0) * scale_mask;
  }

  Eigen::VectorXd lambda_inv(const HyperState& th) const {
    Eigen::VectorXd li(p);
    for (int j = 0; j < p; ++j) {
      int g = coef_group[j];
      if (g < 0) {
        li[j] = 1.0 / spec->fixed_var;
      } else {
        if (g >= th.smooth_var.size()) throw DataError("smooth variance vector too short");
        double v = th.smooth_var[g];
        if (!(v > 0)) throw NumericError("non-positive smooth variance");
        li[j] = 1.0 / v;
      }
    }
    return li;
  }

  double log_det_lambda(const HyperState& th) const {
    double s = 0;
    for (int j = 0; j < p; ++j) {
      int g = coef_group[j];
      s += std::log(g < 0 ? spec->fixed_var : th.smooth_var[g]);
    }
    return s;
  }

  const AEntry& a_entry(const HyperState& th) const;
  const JEntry& j_entry(const HyperState& th) const;

  double eval_separable(const HyperState& th, double lp) const;
  double eval_joint(const HyperState& th, double lp) const;

  // finalized design assembly: variant reduction, stacked designs, parameter list
  static void assemble(Impl& im, const FusionModelSpec& spec);
};

namespace {

// stacked field mapping and posterior precision shared by the cached path and
// the standalone marginalize_joint entry point
struct StackedParts {
  SparseSym H;
  std::shared_ptr<CholeskyFactor> factor;
  Eigen::VectorXd v_inv;
  double ld = 0.0;  // log |Sigma|^{-1/2} contribution, constants dropped
};

StackedParts build_stacked(const FusionModelSpec& spec, const HyperState& th,
                           bool use_disc) {
  const int n = spec.n_obs();
  const int r = spec.n_proxy();
  const int mc = static_cast<int>(spec.P_Yc.cols());
  const int nf = use_disc ? 2 * mc : mc;

  StackedParts sp;
  Eigen::VectorXd vy = obs_variance(spec, th);
  Eigen::VectorXd va = proxy_variance(spec, th);
  Eigen::VectorXd v(n + r);
  v << vy, va;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!(v[i] > 0)) throw NumericError("non-positive noise variance");
  sp.v_inv = v.cwiseInverse();

  std::vector<Eigen::Triplet<double>> trips;
  for (int i = 0; i < n; ++i)
    for (SparseRow::InnerIterator it(spec.P_Yc, i); it; ++it)
      trips.emplace_back(i, static_cast<int>(it.col()), it.value());
  for (int i = 0; i < r; ++i)
    for (SparseRow::InnerIterator it(spec.P_Ac, i); it; ++it) {
      trips.emplace_back(n + i, static_cast<int>(it.col()), th.beta1 * it.value());
      if (use_disc)
        trips.emplace_back(n + i, mc + static_cast<int>(it.col()), it.value());
    }
  sp.H.resize(n + r, nf);
  sp.H.setFromTriplets(trips.begin(), trips.end());

  SparseSym VH = sp.v_inv.asDiagonal() * sp.H;
  SparseSym prec = SparseSym(sp.H.transpose() * VH);
  {
    std::vector<Eigen::Triplet<double>> qt;
    for (int k = 0; k < spec.Q_g.Q.outerSize(); ++k)
      for (SparseSym::InnerIterator it(spec.Q_g.Q, k); it; ++it)
        qt.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                        th.kappa_g * it.value());
    if (use_disc)
      for (int k = 0; k < spec.Q_phi.Q.outerSize(); ++k)
        for (SparseSym::InnerIterator it(spec.Q_phi.Q, k); it; ++it)
          qt.emplace_back(mc + static_cast<int>(it.row()),
                          mc + static_cast<int>(it.col()), th.kappa * it.value());
    SparseSym Qs(nf, nf);
    Qs.setFromTriplets(qt.begin(), qt.end());
    prec = SparseSym(prec + Qs);
  }
  sp.factor = std::make_shared<CholeskyFactor>();
  sp.factor->factorize(prec);

  sp.ld = 0.5 * (mc - spec.Q_g.rank_deficiency) * std::log(th.kappa_g) -
          0.5 * v.array().log().sum() - 0.5 * sp.factor->log_det();
  if (use_disc)
    sp.ld += 0.5 * (mc - spec.Q_phi.rank_deficiency) * std::log(th.kappa);
  return sp;
}

}  // namespace

void MarginalEvaluator::Impl::assemble(Impl& im, const FusionModelSpec& spec) {
  im.spec = &spec;
  im.n = spec.n_obs();
  im.r = spec.n_proxy();
  im.q = spec.n_offsets();
  im.joint = spec.joint_fields;

  const int py = static_cast<int>(spec.Zy.cols());
  const int pL0 = static_cast<int>(spec.ZL.cols());
  const int pa0 = static_cast<int>(spec.Za.cols());
  if (py > 0 && spec.Zy.rows() != im.n) throw DataError("Zy rows do not match observations");
  if (pa0 > 0 && spec.Za.rows() != im.r) throw DataError("Za rows do not match proxy rows");
  if (static_cast<int>(spec.coef_group.size()) != py + pL0 + pa0)
    throw DataError("coefficient group labels do not match the design width");
  if (spec.P_Y.rows() != im.n || spec.P_Y.cols() != spec.ZL.rows())
    throw DataError("P_Y dimensions do not match the grid design");

  im.use_proxy = spec.include_proxy && !spec.proxy_as_covariate;
  im.use_disc = im.use_proxy && spec.include_discrepancy;
  if (im.joint && !im.use_proxy)
    throw ConfigError("joint fields require the proxy likelihood");

  im.ZL = spec.ZL;
  int pL = pL0;
  im.coef_group.assign(spec.coef_group.begin(), spec.coef_group.begin() + py + pL0);

  if (spec.proxy_as_covariate) {
    if (!spec.include_proxy)
      throw ConfigError("proxy_as_covariate requires the proxy to be present");
    if (spec.P_A.rows() != im.r || spec.P_A.cols() != spec.ZL.rows())
      throw DataError("P_A dimensions do not match the grid design");
    // proxy value becomes one grid-level covariate column; rows must map to
    // single cells for the value to have a well-defined support
    Eigen::VectorXd col = Eigen::VectorXd::Zero(spec.ZL.rows());
    for (int i = 0; i < im.r; ++i) {
      int nz = 0, cell = -1;
      for (SparseRow::InnerIterator it(spec.P_A, i); it; ++it) {
        ++nz;
        cell = static_cast<int>(it.col());
      }
      if (nz != 1)
        throw DataError("proxy_as_covariate requires proxy rows aligned with single cells");
      col[cell] = spec.a[i];
    }
    im.ZL.conservativeResize(Eigen::NoChange, pL0 + 1);
    im.ZL.col(pL0) = col;
    im.coef_group.push_back(-1);
    pL = pL0 + 1;
  }

  im.py = py;
  im.pL = pL;
  im.pa = im.use_proxy ? pa0 : 0;
  im.p = im.py + im.pL + im.pa;
  if (im.use_proxy)
    for (int j = 0; j < pa0; ++j) im.coef_group.push_back(spec.coef_group[py + pL0 + j]);

  im.n_smooth = 0;
  for (int g : im.coef_group) im.n_smooth = std::max(im.n_smooth, g + 1);

  // stacked observation design [Zy | P_Y ZL | 0]
  im.ZY = Eigen::MatrixXd::Zero(im.n, im.p);
  if (py > 0) im.ZY.leftCols(py) = spec.Zy;
  im.ZY.middleCols(py, pL) = spec.P_Y * im.ZL;

  im.scale_mask = Eigen::VectorXd::Zero(im.p);

  if (im.use_proxy) {
    if (spec.P_A.rows() != im.r || spec.P_A.cols() != spec.ZL.rows())
      throw DataError("P_A dimensions do not match the grid design");
    im.UA = Eigen::MatrixXd::Zero(im.r, im.p);
    im.UA.middleCols(py, pL) = spec.P_A * im.ZL;
    if (pa0 > 0) im.UA.rightCols(pa0) = spec.Za;
    im.UtU = im.UA.transpose() * im.UA;
    im.scale_mask.segment(py, pL).setOnes();
  }

  if (im.use_disc) {
    if (im.joint) {
      if (spec.P_Yc.rows() != im.n || spec.P_Ac.rows() != im.r)
        throw DataError("coarse-field mappings do not match the data");
      if (spec.P_Yc.cols() != spec.P_Ac.cols())
        throw DataError("coarse-field mappings disagree on the grid size");
      im.mc = static_cast<int>(spec.P_Yc.cols());
      im.Qg = spec.Q_g.Q;
      im.def_g = spec.Q_g.rank_deficiency;
      if (im.Qg.rows() != im.mc) throw DataError("coarse-field prior size mismatch");
      im.mphi = im.mc;
      im.Qphi = spec.Q_phi.Q;
      im.def_phi = spec.Q_phi.rank_deficiency;
      if (im.Qphi.rows() != im.mc)
        throw DataError("discrepancy prior must live on the coarse grid in joint mode");
    } else {
      if (spec.P_phi.rows() != im.r) throw DataError("P_phi rows do not match proxy rows");
      im.mphi = static_cast<int>(spec.P_phi.cols());
      im.Qphi = spec.Q_phi.Q;
      im.def_phi = spec.Q_phi.rank_deficiency;
      if (im.Qphi.rows() != im.mphi) throw DataError("discrepancy prior size mismatch");
      im.Pphi_col = SparseSym(spec.P_phi);
    }
  } else if (im.joint) {
    if (spec.P_Yc.rows() != im.n || spec.P_Ac.rows() != im.r)
      throw DataError("coarse-field mappings do not match the data");
    im.mc = static_cast<int>(spec.P_Yc.cols());
    im.Qg = spec.Q_g.Q;
    im.def_g = spec.Q_g.rank_deficiency;
  }

  // active parameters
  auto& ps = im.params;
  bool any_sub = false;
  for (Eigen::Index i = 0; i < spec.n_days.size(); ++i)
    if (spec.n_days[i] < spec.n_month) any_sub = true;
  ps.push_back({"sigma_h", ThetaField::SigmaH, -1, spec.sd_upper});
  if (any_sub) ps.push_back({"sigma_sub", ThetaField::SigmaSub, -1, spec.sd_upper});
  if (im.use_proxy) {
    ps.push_back({"sigma_A", ThetaField::SigmaA, -1, spec.sd_upper});
    if (spec.proxy_noise == ProxyNoise::CountScaled)
      ps.push_back({"sigma_alpha", ThetaField::SigmaAlpha, -1, spec.sd_upper});
    if (!spec.fix_beta1)
      ps.push_back({"beta1", ThetaField::Beta1, -1, spec.beta1_bound});
  }
  for (int g = 0; g < im.n_smooth; ++g)
    ps.push_back({"sigma_b_" + std::to_string(g), ThetaField::Smooth, g,
                  spec.smooth_sd_upper});
  if (im.use_disc && !spec.fix_kappa)
    ps.push_back({"kappa", ThetaField::Kappa, -1, spec.sd_upper});
  if (im.joint) ps.push_back({"kappa_g", ThetaField::KappaG, -1, spec.sd_upper});
}

std::vector<ParamDesc> active_parameters(const FusionModelSpec& spec) {
  MarginalEvaluator ev(spec);
  return ev.parameters();
}

double get_param(const HyperState& th, const ParamDesc& d) {
  switch (d.field) {
    case ThetaField::SigmaSub: return th.sigma2_sub;
    case ThetaField::SigmaA: return th.sigma2_A;
    case ThetaField::SigmaAlpha: return th.sigma2_alpha;
    case ThetaField::SigmaH: return th.sigma2_h;
    case ThetaField::Smooth: return th.smooth_var[d.index];
    case ThetaField::Kappa: return th.kappa;
    case ThetaField::KappaG: return th.kappa_g;
    case ThetaField::Beta1: return th.beta1;
  }
  throw NumericError("unknown parameter field");
}

void set_param(HyperState& th, const ParamDesc& d, double value) {
  switch (d.field) {
    case ThetaField::SigmaSub: th.sigma2_sub = value; return;
    case ThetaField::SigmaA: th.sigma2_A = value; return;
    case ThetaField::SigmaAlpha: th.sigma2_alpha = value; return;
    case ThetaField::SigmaH: th.sigma2_h = value; return;
    case ThetaField::Smooth: th.smooth_var[d.index] = value; return;
    case ThetaField::Kappa: th.kappa = value; return;
    case ThetaField::KappaG: th.kappa_g = value; return;
    case ThetaField::Beta1: th.beta1 = value; return;
  }
  throw NumericError("unknown parameter field");
}

// ---------------------------------------------------------------------------

MarginalEvaluator::MarginalEvaluator(const FusionModelSpec& spec)
    : spec_(spec), impl_(std::make_unique<Impl>()) {
  Impl::assemble(*impl_, spec_);
}

MarginalEvaluator::~MarginalEvaluator() = default;
MarginalEvaluator::MarginalEvaluator(MarginalEvaluator&& o) noexcept
    : spec_(std::move(o.spec_)), impl_(std::move(o.impl_)) {
  impl_->spec = &spec_;
}

int MarginalEvaluator::coef_count() const { return impl_->p; }

const std::vector<ParamDesc>& MarginalEvaluator::parameters() const {
  return impl_->params;
}

HyperState MarginalEvaluator::initial_state() const {
  HyperState th;
  th.smooth_var = Eigen::VectorXd::Ones(impl_->n_smooth);
  th.delta = Eigen::VectorXd::Zero(impl_->q);
  impl_->apply_fixed(th);
  return th;
}

double MarginalEvaluator::log_prior(const HyperState& th) const {
  double lp = 0;
  for (const auto& d : impl_->params) {
    double v = get_param(th, d);
    if (d.field == ThetaField::Beta1) {
      if (!(std::abs(v) <= d.upper)) return kNegInf;
      lp += -0.5 * v * v / (spec_.beta1_prior_sd * spec_.beta1_prior_sd);
    } else if (d.field == ThetaField::Kappa || d.field == ThetaField::KappaG) {
      // uniform prior on the sd-like scale kappa^{-1/2}
      if (!(v > 1.0 / (d.upper * d.upper))) return kNegInf;
      lp += -1.5 * std::log(v);
    } else {
      // uniform prior on the sd scale
      if (!(v > 0.0) || std::sqrt(v) >= d.upper) return kNegInf;
      lp += -0.5 * std::log(v);
    }
  }
  // shared-site offsets
  if (impl_->q > 0) {
    if (th.delta.size() != impl_->q) throw DataError("delta length mismatch");
    lp += -0.5 * impl_->q * std::log(th.sigma2_h) -
          0.5 * th.delta.squaredNorm() / th.sigma2_h;
  }
  return lp;
}

// separable-path A-side cache
const MarginalEvaluator::Impl::AEntry& MarginalEvaluator::Impl::a_entry(
    const HyperState& th) const {
  for (auto& e : acache)
    if (e.s2A == th.sigma2_A && e.s2al == th.sigma2_alpha && e.kap == th.kappa) {
      e.age = ++clock;
      return e;
    }
  AEntry e;
  e.s2A = th.sigma2_A;
  e.s2al = th.sigma2_alpha;
  e.kap = th.kappa;

  Eigen::VectorXd va = proxy_variance(*spec, th);
  for (int i = 0; i < r; ++i)
    if (!(va[i] > 0)) throw NumericError("non-positive proxy variance");
  e.va_inv = va.cwiseInverse();
  double ld_va = va.array().log().sum();

  if (use_disc && !joint) {
    // field posterior precision P' V_A^{-1} P + kappa Q
    SparseSym VP = e.va_inv.asDiagonal() * Pphi_col;
    SparseSym prec = SparseSym(Pphi_col.transpose() * VP) + SparseSym(th.kappa * Qphi);
    e.factor = std::make_shared<CholeskyFactor>();
    e.factor->factorize(prec);

    Eigen::MatrixXd VU = e.va_inv.asDiagonal() * UA;
    Eigen::VectorXd Va = e.va_inv.asDiagonal() * spec->a;
    Eigen::MatrixXd T = spec->P_phi.transpose() * VU;  // mphi x p
    Eigen::VectorXd t = spec->P_phi.transpose() * Va;  // mphi
    Eigen::MatrixXd ST = e.factor->solve(T);
    Eigen::VectorXd st = e.factor->solve(t);
    e.G = UA.transpose() * VU - T.transpose() * ST;
    e.g = UA.transpose() * Va - T.transpose() * st;
    e.mag = spec->a.dot(Va);
    e.qf = e.mag - t.dot(st);
    e.ld = 0.5 * (mphi - def_phi) * std::log(th.kappa) - 0.5 * ld_va -
           0.5 * e.factor->log_det();
  } else {
    // no discrepancy: Sigma_A = V_A
    if (spec->proxy_noise == ProxyNoise::Constant) {
      e.G = UtU / th.sigma2_A;
      e.g = UA.transpose() * spec->a / th.sigma2_A;
      e.qf = spec->a.squaredNorm() / th.sigma2_A;
    } else {
      Eigen::MatrixXd VU = e.va_inv.asDiagonal() * UA;
      e.G = UA.transpose() * VU;
      e.g = VU.transpose() * spec->a;
      e.qf = spec->a.dot(Eigen::VectorXd(e.va_inv.asDiagonal() * spec->a));
    }
    e.mag = e.qf;
    e.ld = -0.5 * ld_va;
  }

  e.age = ++clock;
  if (acache.size() >= 4) {
    std::size_t oldest = 0;
    for (std::size_t i = 1; i < acache.size(); ++i)
      if (acache[i].age < acache[oldest].age) oldest = i;
    acache[oldest] = std::move(e);
    return acache[oldest];
  }
  acache.push_back(std::move(e));
  return acache.back();
}

double MarginalEvaluator::Impl::eval_separable(const HyperState& th, double lp) const {
  Eigen::VectorXd vy = obs_variance(*spec, th);
  Eigen::VectorXd vy_inv = vy.cwiseInverse();
  Eigen::VectorXd yt = spec->y;
  if (q > 0) yt -= spec->P_delta * th.delta;

  Eigen::MatrixXd VZ = vy_inv.asDiagonal() * ZY;
  Eigen::MatrixXd G = ZY.transpose() * VZ;
  Eigen::VectorXd u = VZ.transpose() * yt;
  double quad = yt.dot(Eigen::VectorXd(vy_inv.asDiagonal() * yt));
  double mag = quad;
  double ld = -0.5 * vy.array().log().sum();

  if (use_proxy) {
    const AEntry& e = a_entry(th);
    Eigen::VectorXd s = beta1_scale(th.beta1);
    G += s.asDiagonal() * e.G * s.asDiagonal();
    u += s.asDiagonal() * e.g;
    quad += e.qf;
    mag += e.mag;
    ld += e.ld;
  }

  G += Eigen::MatrixXd(lambda_inv(th).asDiagonal());
  Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
  if (ldlt.info() != Eigen::Success)
    throw NumericError("coefficient posterior factorization failed");
  double ld_G = log_det_ldlt(ldlt, "coefficient posterior precision");
  double uvu = u.dot(ldlt.solve(u));
  quad -= uvu;
  mag += std::abs(uvu);
  check_quad(quad, mag);

  return lp - 0.5 * log_det_lambda(th) + ld - 0.5 * ld_G - 0.5 * quad;
}

// stacked-path cache
const MarginalEvaluator::Impl::JEntry& MarginalEvaluator::Impl::j_entry(
    const HyperState& th) const {
  std::array<double, 7> key{th.sigma2_sub, th.sigma2_A, th.sigma2_alpha,
                            th.sigma2_h,   th.kappa,    th.kappa_g,
                            th.beta1};
  for (auto& e : jcache)
    if (e.key == key) {
      e.age = ++clock;
      return e;
    }
  JEntry e;
  e.key = key;

  StackedParts parts = build_stacked(*spec, th, use_disc);
  e.factor = parts.factor;
  e.v_inv = parts.v_inv;
  e.ld = parts.ld;

  // W = [ZY; UA * S(beta1)]
  Eigen::VectorXd s = beta1_scale(th.beta1);
  Eigen::MatrixXd W(n + r, p);
  W.topRows(n) = ZY;
  W.bottomRows(r) = UA * s.asDiagonal();

  Eigen::VectorXd D(n + r);
  D << spec->y, spec->a;

  auto sigma_apply = [&](const Eigen::MatrixXd& x) {
    Eigen::MatrixXd vx = e.v_inv.asDiagonal() * x;
    Eigen::MatrixXd t = parts.H.transpose() * vx;
    return Eigen::MatrixXd(vx - e.v_inv.asDiagonal() *
                                    Eigen::MatrixXd(parts.H * e.factor->solve(t)));
  };

  Eigen::MatrixXd SW = sigma_apply(W);
  e.WSW = W.transpose() * SW;
  e.WSD = SW.transpose() * D;
  e.DSD = D.dot(sigma_apply(D).col(0));
  e.mag = D.dot(Eigen::VectorXd(e.v_inv.asDiagonal() * D));
  if (q > 0) {
    Eigen::MatrixXd E = Eigen::MatrixXd::Zero(n + r, q);
    E.topRows(n) = Eigen::MatrixXd(spec->P_delta);
    Eigen::MatrixXd SE = sigma_apply(E);
    e.WSE = W.transpose() * SE;
    e.ESE = E.transpose() * SE;
    e.ESD = SE.transpose() * D;
  }

  e.age = ++clock;
  if (jcache.size() >= 4) {
    std::size_t oldest = 0;
    for (std::size_t i = 1; i < jcache.size(); ++i)
      if (jcache[i].age < jcache[oldest].age) oldest = i;
    jcache[oldest] = std::move(e);
    return jcache[oldest];
  }
  jcache.push_back(std::move(e));
  return jcache.back();
}

double MarginalEvaluator::Impl::eval_joint(const HyperState& th, double lp) const {
  const JEntry& e = j_entry(th);
  Eigen::VectorXd u = e.WSD;
  double quad = e.DSD;
  double mag = e.mag;
  if (q > 0) {
    u -= e.WSE * th.delta;
    double dq = th.delta.dot(e.ESE * th.delta) - 2.0 * th.delta.dot(e.ESD);
    quad += dq;
    mag += std::abs(dq);
  }
  Eigen::MatrixXd G = e.WSW;
  G += Eigen::MatrixXd(lambda_inv(th).asDiagonal());
  Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
  if (ldlt.info() != Eigen::Success)
    throw NumericError("coefficient posterior factorization failed");
  double ld_G = log_det_ldlt(ldlt, "coefficient posterior precision");
  double uvu = u.dot(ldlt.solve(u));
  quad -= uvu;
  mag += std::abs(uvu);
  check_quad(quad, mag);
  return lp - 0.5 * log_det_lambda(th) + e.ld - 0.5 * ld_G - 0.5 * quad;
}

double MarginalEvaluator::log_marginal_posterior(const HyperState& th0) const {
  HyperState th = th0;
  impl_->apply_fixed(th);
  double lp = log_prior(th);
  if (!std::isfinite(lp)) return kNegInf;
  // in-support but numerically degenerate corners (vanishing noise variance
  // against a near-flat field prior) can defeat the factorizations; such
  // states carry no usable density and evaluate as an exact reject
  try {
    return impl_->joint ? impl_->eval_joint(th, lp) : impl_->eval_separable(th, lp);
  } catch (const NumericError&) {
    return kNegInf;
  }
}

double log_marginal_posterior(const FusionModelSpec& spec, const HyperState& th) {
  MarginalEvaluator ev(spec);
  return ev.log_marginal_posterior(th);
}

ProxyMarginal marginalize_phi(const FusionModelSpec& spec, const HyperState& th) {
  if (!spec.include_proxy || !spec.include_discrepancy)
    throw ConfigError("marginalize_phi requires the discrepancy field");
  if (!(th.kappa > 0)) throw NumericError("kappa must be positive");
  ProxyMarginal pm;
  Eigen::VectorXd va = proxy_variance(spec, th);
  pm.va_inv = va.cwiseInverse();
  pm.P = &spec.P_phi;
  SparseSym Pc(spec.P_phi);
  SparseSym VP = pm.va_inv.asDiagonal() * Pc;
  SparseSym prec = SparseSym(Pc.transpose() * VP) + SparseSym(th.kappa * spec.Q_phi.Q);
  pm.prec = std::make_shared<CholeskyFactor>();
  pm.prec->factorize(prec);
  int m = static_cast<int>(spec.P_phi.cols());
  pm.half_log_det = 0.5 * (m - spec.Q_phi.rank_deficiency) * std::log(th.kappa) -
                    0.5 * va.array().log().sum() - 0.5 * pm.prec->log_det();
  return pm;
}

StackedMarginal marginalize_joint(const FusionModelSpec& spec, const HyperState& th) {
  if (!spec.joint_fields) throw ConfigError("marginalize_joint requires joint fields");
  bool use_disc = spec.include_discrepancy;
  StackedParts parts = build_stacked(spec, th, use_disc);
  StackedMarginal sm;
  sm.v_inv = parts.v_inv;
  sm.prec = parts.factor;
  sm.H = parts.H;
  sm.half_log_det = parts.ld;
  return sm;
}

Eigen::VectorXd MarginalEvaluator::sample_delta(const HyperState& th0, Rng& rng) const {
  HyperState th = th0;
  impl_->apply_fixed(th);
  const Impl& im = *impl_;
  if (im.q == 0) return Eigen::VectorXd();

  Eigen::MatrixXd prec;   // q x q posterior precision of delta
  Eigen::VectorXd rhs;    // prec * mean
  Eigen::MatrixXd G;      // coefficient precision
  Eigen::VectorXd u_raw;  // coefficient information at delta = 0
  Eigen::MatrixXd cross;  // E' Sigma^{-1} W

  if (!im.joint) {
    Eigen::VectorXd vy_inv = obs_variance(spec_, th).cwiseInverse();
    Eigen::MatrixXd VZ = vy_inv.asDiagonal() * im.ZY;
    G = im.ZY.transpose() * VZ;
    u_raw = VZ.transpose() * spec_.y;
    if (im.use_proxy) {
      const auto& e = im.a_entry(th);
      Eigen::VectorXd s = im.beta1_scale(th.beta1);
      G += s.asDiagonal() * e.G * s.asDiagonal();
      u_raw += s.asDiagonal() * e.g;
    }
    Eigen::MatrixXd Pd = Eigen::MatrixXd(spec_.P_delta);
    Eigen::MatrixXd VPd = vy_inv.asDiagonal() * Pd;
    prec = Pd.transpose() * VPd;
    rhs = VPd.transpose() * spec_.y;
    cross = VPd.transpose() * im.ZY;
  } else {
    const auto& e = im.j_entry(th);
    G = e.WSW;
    u_raw = e.WSD;
    prec = e.ESE;
    rhs = e.ESD;
    cross = e.WSE.transpose();
  }

  G += Eigen::MatrixXd(im.lambda_inv(th).asDiagonal());
  Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
  if (ldlt.info() != Eigen::Success)
    throw NumericError("coefficient posterior factorization failed");
  prec -= cross * ldlt.solve(cross.transpose());
  rhs -= cross * ldlt.solve(u_raw);
  prec += Eigen::MatrixXd::Identity(im.q, im.q) / th.sigma2_h;

  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success)
    throw NumericError("offset conditional not positive definite");
  Eigen::VectorXd mean = llt.solve(rhs);
  Eigen::VectorXd z(im.q);
  for (int i = 0; i < im.q; ++i) z[i] = rng.normal();
  // x = mean + U^{-1} z with prec = U' U
  return mean + llt.matrixU().solve(z);
}

MarginalEvaluator::CoefConditional MarginalEvaluator::coef_conditional(
    const HyperState& th0) const {
  HyperState th = th0;
  impl_->apply_fixed(th);
  const Impl& im = *impl_;

  Eigen::MatrixXd G;
  Eigen::VectorXd u;
  if (!im.joint) {
    Eigen::VectorXd vy_inv = obs_variance(spec_, th).cwiseInverse();
    Eigen::VectorXd yt = spec_.y;
    if (im.q > 0) yt -= spec_.P_delta * th.delta;
    Eigen::MatrixXd VZ = vy_inv.asDiagonal() * im.ZY;
    G = im.ZY.transpose() * VZ;
    u = VZ.transpose() * yt;
    if (im.use_proxy) {
      const auto& e = im.a_entry(th);
      Eigen::VectorXd s = im.beta1_scale(th.beta1);
      G += s.asDiagonal() * e.G * s.asDiagonal();
      u += s.asDiagonal() * e.g;
    }
  } else {
    const auto& e = im.j_entry(th);
    G = e.WSW;
    u = e.WSD;
    if (im.q > 0) u -= e.WSE * th.delta;
  }
  G += Eigen::MatrixXd(im.lambda_inv(th).asDiagonal());
  Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
  if (ldlt.info() != Eigen::Success)
    throw NumericError("coefficient posterior factorization failed");
  CoefConditional out;
  out.cov = ldlt.solve(Eigen::MatrixXd::Identity(im.p, im.p));
  out.mean = ldlt.solve(u);
  return out;
}

MarginalEvaluator::FieldConditional MarginalEvaluator::phi_conditional(
    const HyperState& th0, const Eigen::VectorXd& b) const {
  HyperState th = th0;
  impl_->apply_fixed(th);
  const Impl& im = *impl_;
  if (!im.use_disc || im.joint)
    throw ConfigError("phi_conditional requires the separable discrepancy field");
  const auto& e = im.a_entry(th);
  Eigen::VectorXd s = im.beta1_scale(th.beta1);
  Eigen::VectorXd resid = spec_.a - im.UA * Eigen::VectorXd(s.asDiagonal() * b);
  FieldConditional fc;
  fc.prec = e.factor;
  fc.mean = e.factor->solve(
      Eigen::VectorXd(spec_.P_phi.transpose() * Eigen::VectorXd(e.va_inv.asDiagonal() * resid)));
  return fc;
}

LatentDraws MarginalEvaluator::sample_latents(const HyperState& th0, Rng& rng) const {
  HyperState th = th0;
  impl_->apply_fixed(th);
  const Impl& im = *impl_;

  CoefConditional cc = coef_conditional(th);
  Eigen::LLT<Eigen::MatrixXd> llt(cc.cov);
  if (llt.info() != Eigen::Success)
    throw NumericError("coefficient covariance not positive definite");
  Eigen::VectorXd z(im.p);
  for (int i = 0; i < im.p; ++i) z[i] = rng.normal();

  LatentDraws ld;
  ld.b = cc.mean + llt.matrixL() * z;
  ld.beta1_effective = th.beta1;

  if (im.use_disc && !im.joint) {
    FieldConditional fc = phi_conditional(th, ld.b);
    ld.phi = fc.prec->sample_from_precision(fc.mean, rng);
  } else if (im.joint) {
    const auto& e = im.j_entry(th);
    // conditional field information H' V^{-1} (d - W b), assembled blockwise
    Eigen::VectorXd s = im.beta1_scale(th.beta1);
    Eigen::VectorXd resid_y = spec_.y - im.ZY * ld.b;
    if (im.q > 0) resid_y -= spec_.P_delta * th.delta;
    Eigen::VectorXd resid_a = spec_.a - im.UA * Eigen::VectorXd(s.asDiagonal() * ld.b);
    Eigen::VectorXd vy_part = e.v_inv.head(im.n).asDiagonal() * resid_y;
    Eigen::VectorXd va_part = e.v_inv.tail(im.r).asDiagonal() * resid_a;
    const int nf = im.use_disc ? 2 * im.mc : im.mc;
    Eigen::VectorXd info = Eigen::VectorXd::Zero(nf);
    info.head(im.mc) = spec_.P_Yc.transpose() * vy_part +
                       th.beta1 * (spec_.P_Ac.transpose() * va_part);
    if (im.use_disc) info.tail(im.mc) += spec_.P_Ac.transpose() * va_part;
    Eigen::VectorXd mean = e.factor->solve(info);
    Eigen::VectorXd draw = e.factor->sample_from_precision(mean, rng);
    ld.g = draw.head(im.mc);
    if (im.use_disc) ld.phi = draw.tail(im.mc);
  }

  if (spec_.orthogonalize_draws && ld.phi.size() > 0) {
    if (!im.joint && ld.phi.size() == im.ZL.rows()) {
      Eigen::VectorXd L = field_L(ld.b);
      OrthoResult orth = orthogonalize(ld.phi, L);
      ld.phi = orth.phi_adj;
      ld.beta1_effective = th.beta1 + orth.c1;
    } else if (im.joint) {
      OrthoResult orth = orthogonalize(ld.phi, ld.g);
      ld.phi = orth.phi_adj;
      ld.beta1_effective = th.beta1 + orth.c1;
    }
  }
  return ld;
}

Eigen::VectorXd MarginalEvaluator::field_L(const Eigen::VectorXd& b) const {
  const Impl& im = *impl_;
  if (b.size() != im.p) throw DataError("coefficient draw has the wrong length");
  return im.ZL * b.segment(im.py, im.pL);
}

}  // namespace spatfuse
