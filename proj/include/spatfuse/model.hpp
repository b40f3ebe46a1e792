#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spatfuse/linalg.hpp"
#include "spatfuse/mrf.hpp"
#include "spatfuse/rng.hpp"

namespace spatfuse {

using SparseRow = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using linalg::CholeskyFactor;
using linalg::SparseSym;
using mrf::IntrinsicPrecision;

// proxy measurement-error structure: constant variance, or constant plus a
// within-month sampling term driven by per-cell retrieval counts
enum class ProxyNoise { Constant, CountScaled };

// Two-likelihood data fusion model. Observations Y are monthly averages at
// point sites; the proxy A lives on grid cells. The latent field L is a
// penalized regression on grid-level covariates (optionally with a spatial
// smooth among its columns); the proxy mean is beta1 * L plus a proxy-level
// design plus, when enabled, an intrinsic MRF discrepancy field phi. All
// Gaussian latents are integrated analytically; MCMC only ever sees the
// marginal posterior over the variance-type parameters, beta1, kappa and the
// shared-site offsets delta.
struct FusionModelSpec {
  // coefficient design blocks; the stacked coefficient vector is
  // b = [b_y; b_L; b_a]
  Eigen::MatrixXd Zy;  // n x py, observation-level columns (no intercept)
  Eigen::MatrixXd ZL;  // mL x pL, grid-level columns for L (intercept lives here)
  Eigen::MatrixXd Za;  // r x pa, proxy-level columns (may be empty)
  // coefficient prior groups: -1 for a fixed effect (variance fixed_var),
  // otherwise an index into HyperState::smooth_var
  std::vector<int> coef_group;
  double fixed_var = 1e6;

  // supports and mappings
  SparseRow P_Y;      // n x mL, observation sites onto the L grid
  SparseRow P_A;      // r x mL, proxy rows onto the L grid
  SparseRow P_phi;    // r x mphi, proxy rows onto the discrepancy grid
  SparseRow P_delta;  // n x q, rows of shared-site monitors onto their offsets
  IntrinsicPrecision Q_phi;  // discrepancy prior (unscaled)

  // stacked-field mode: the spatial part of L is itself an intrinsic field g
  // on a coarse grid, integrated jointly with phi
  bool joint_fields = false;
  SparseRow P_Yc;  // n x mc
  SparseRow P_Ac;  // r x mc
  IntrinsicPrecision Q_g;

  // data
  Eigen::VectorXd y;       // n
  Eigen::VectorXd n_days;  // per-site averaging counts n_i
  double n_month = 30.0;
  std::vector<std::uint8_t> colocated;  // per observation; offsets sampled
  Eigen::VectorXd a;                    // r
  Eigen::VectorXd proxy_counts;         // r, CountScaled mode only
  ProxyNoise proxy_noise = ProxyNoise::Constant;

  // variants
  bool include_proxy = true;
  bool include_discrepancy = true;
  bool proxy_as_covariate = false;
  std::optional<double> fix_kappa;
  std::optional<double> fix_beta1;
  bool orthogonalize_draws = false;

  // priors: uniform(0, sd_upper) on every standard deviation scale,
  // uniform(0, smooth_sd_upper) for smooth-term sds, bounded normal for beta1
  double sd_upper = 100.0;
  double smooth_sd_upper = 10.0;
  double beta1_prior_sd = 100.0;
  double beta1_bound = 500.0;
  double sigma2_eps_fixed = 1.5;  // replicate-level variance, fixed

  int n_obs() const { return static_cast<int>(y.size()); }
  int n_proxy() const { return static_cast<int>(a.size()); }
  int n_offsets() const { return static_cast<int>(P_delta.cols()); }
  int n_smooth() const;
};

struct HyperState {
  double beta1 = 1.0;
  double sigma2_sub = 1.0;    // subsampling variance, active when some n_i < n_month
  double sigma2_A = 1.0;      // proxy noise floor
  double sigma2_alpha = 1.0;  // proxy count-scaled noise, CountScaled mode
  double sigma2_h = 1.0;      // site-offset variance, sampled and integrated uses
  double kappa = 1.0;         // discrepancy smoothing precision
  double kappa_g = 1.0;       // coarse-field smoothing precision, joint mode
  Eigen::VectorXd smooth_var;
  Eigen::VectorXd delta;
};

struct LatentDraws {
  int draw_index = 0;
  Eigen::VectorXd b;
  Eigen::VectorXd phi;  // empty unless a discrepancy field is present
  Eigen::VectorXd g;    // empty unless joint_fields
  double beta1_effective = 0.0;  // beta1 plus any orthogonalization relabeling
};

// parameters the sampler may move, derived from the variant flags
enum class ThetaField { SigmaSub, SigmaA, SigmaAlpha, SigmaH, Smooth, Kappa, KappaG, Beta1 };
struct ParamDesc {
  std::string name;
  ThetaField field;
  int index = -1;       // smooth_var index for Smooth
  double upper = 0.0;   // sd-scale upper bound; beta1 uses the hard bound
};
std::vector<ParamDesc> active_parameters(const FusionModelSpec& spec);
double get_param(const HyperState& th, const ParamDesc& d);
void set_param(HyperState& th, const ParamDesc& d, double value);

// diagonal observation variance: sigma2_eps/n_i + (1/n_i - 1/n_month) *
// sigma2_sub, plus sigma2_h for monitors whose offset is integrated out
Eigen::VectorXd obs_variance(const FusionModelSpec& spec, const HyperState& th);

// diagonal proxy variance: sigma2_A, plus the count-scaled term in
// CountScaled mode
Eigen::VectorXd proxy_variance(const FusionModelSpec& spec, const HyperState& th);

// inverse-covariance applicator for the proxy block after integrating the
// discrepancy field: Sigma_A^{-1} x = V_A^{-1} x - V_A^{-1} P_phi
// (P_phi' V_A^{-1} P_phi + kappa Q)^{-1} P_phi' V_A^{-1} x
struct ProxyMarginal {
  Eigen::VectorXd va_inv;                // diagonal of V_A^{-1}
  std::shared_ptr<CholeskyFactor> prec;  // factor of the field posterior precision
  const SparseRow* P = nullptr;          // mapping used in the Woodbury identity
  double half_log_det = 0.0;  // log |Sigma_A|^{-1/2} up to a data-independent constant

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};
ProxyMarginal marginalize_phi(const FusionModelSpec& spec, const HyperState& th);

// stacked-field analogue: integrates the coarse field g (and phi when
// present) jointly; the applicator acts on stacked [obs; proxy] vectors
struct StackedMarginal {
  Eigen::VectorXd v_inv;  // stacked V^{-1} diagonal
  std::shared_ptr<CholeskyFactor> prec;
  SparseSym H;  // stacked data-to-field mapping
  double half_log_det = 0.0;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};
StackedMarginal marginalize_joint(const FusionModelSpec& spec, const HyperState& th);

// orthogonalization of a discrepancy draw against span{1, L}: least-squares
// coefficients phi ~ c0 + c1 L over the masked cells, removed everywhere
struct OrthoResult {
  Eigen::VectorXd phi_adj;
  double c0 = 0.0;
  double c1 = 0.0;
};
OrthoResult orthogonalize(const Eigen::VectorXd& phi, const Eigen::VectorXd& L,
                          const std::vector<std::uint8_t>& mask = {});

class MarginalEvaluator {
 public:
  explicit MarginalEvaluator(const FusionModelSpec& spec);
  ~MarginalEvaluator();
  MarginalEvaluator(MarginalEvaluator&&) noexcept;

  // log of the marginal posterior over (theta, delta), up to a constant:
  // priors + determinant terms + quadratic exponent
  double log_marginal_posterior(const HyperState& th) const;
  double log_prior(const HyperState& th) const;

  // exact Gibbs draw of the shared-site offsets given theta
  Eigen::VectorXd sample_delta(const HyperState& th, Rng& rng) const;

  // offline latent draws: b given (theta, delta), then fields given b
  LatentDraws sample_latents(const HyperState& th, Rng& rng) const;

  // conditional mean and precision of the discrepancy field at fixed b
  struct FieldConditional {
    Eigen::VectorXd mean;
    std::shared_ptr<CholeskyFactor> prec;
  };
  FieldConditional phi_conditional(const HyperState& th, const Eigen::VectorXd& b) const;

  // coefficient posterior given (theta, delta)
  struct CoefConditional {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
  };
  CoefConditional coef_conditional(const HyperState& th) const;

  // grid-level L field implied by a coefficient draw (covariate part; the
  // caller adds interpolated g in joint mode)
  Eigen::VectorXd field_L(const Eigen::VectorXd& b) const;

  // starting state consistent with the variant flags and fixed components
  HyperState initial_state() const;

  const FusionModelSpec& spec() const { return spec_; }
  // effective design dimensions after variant reduction
  int coef_count() const;
  // parameters the sampler may move under the active variant
  const std::vector<ParamDesc>& parameters() const;

 private:
  struct Impl;
  FusionModelSpec spec_;
  std::unique_ptr<Impl> impl_;
};

// convenience entry point: one evaluation without a persistent cache
double log_marginal_posterior(const FusionModelSpec& spec, const HyperState& th);

}  // namespace spatfuse
