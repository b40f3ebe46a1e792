#pragma once
// Synthetic-study generator: Matern Gaussian surfaces, covariate layers with
// deliberate fitting misspecification, within-pixel variability, and the
// proxy/observation assembly for the six study scenarios.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "spatfuse/grid.hpp"
#include "spatfuse/rng.hpp"

namespace spatfuse {
namespace sim {

// Matern correlation at distance d with smoothness nu and inverse-range decay.
// Requires d >= 0, nu > 0, decay > 0; matern_correlation(0, ...) is 1.
double matern_correlation(double d, double nu, double decay);

// decay such that the correlation falls to `target` at distance `range`
double matern_decay_for_range(double range, double nu, double target = 0.05);

// Scenario list:
//   1  both discrepancy scales, proxy tracks the truth
//   2  both discrepancy scales, proxy carries no truth signal
//   3  no spatial discrepancy
//   4  large-scale discrepancy only
//   5  small-scale discrepancy only
//   6  scenario 1 with sparse observations (n = 40)
struct ScenarioConfig {
  int scenario = 1;
  int nrow = 60;  // reference study scale is 175 x 100
  int ncol = 40;
  int n_obs = -1;  // -1 selects 171, or 40 in scenario 6

  double proxy_noise_sd = 0.55;
  double obs_noise_sd = 1.73;
  double gp_sd = 2.5;          // residual spatial surface of the truth
  double small_disc_sd = 1.64;
  double large_disc_sd = 2.0;
  double covariate_effect_sd = 0.93;  // combined land-use effect, over land
  double water_fraction = 0.134;

  // effective ranges in cells at the 175-row reference scale; working values
  // shrink with the grid so range-to-domain ratios are preserved
  double nu = 2.0;
  double range_g_ref = 340.0;
  double range_large_ref = 413.0;
  double range_small_ref = 24.0;

  std::array<double, 5> coefs{0.2, -0.3, 0.01, 0.01, 0.1};

  int replicates = 10;
  std::uint64_t seed = 1;

  bool beta1_active() const { return scenario != 2; }
  bool large_disc_active() const { return scenario != 3 && scenario != 5; }
  bool small_disc_active() const { return scenario != 3 && scenario != 4; }
  int observations() const { return n_obs >= 0 ? n_obs : (scenario == 6 ? 40 : 171); }
  double range_g() const { return range_g_ref * nrow / 175.0; }
  double range_large() const { return range_large_ref * nrow / 175.0; }
  double range_small() const { return range_small_ref * nrow / 175.0; }
};

struct ReplicateData {
  grid::RegularGrid grid;  // land mask filled

  // truth on the full grid
  Eigen::VectorXd L;          // covariate effect plus residual surface
  Eigen::VectorXd gp;         // residual surface alone
  Eigen::VectorXd phi_small;  // zero when the scenario disables it
  Eigen::VectorXd phi_large;
  double beta1 = 1.0;

  // covariate tables: the generation transforms (scaled so the stated
  // coefficients produce the target effect variance) and the misspecified
  // fitting columns (standardized over land)
  Eigen::MatrixXd cov_gen;  // cells x 5
  Eigen::MatrixXd cov_fit;  // cells x 4
  std::vector<std::string> fit_names;

  // proxy over the land cells
  std::vector<int> proxy_cells;
  Eigen::VectorXd a;

  // observations
  std::vector<int> obs_cells;
  Eigen::VectorXd y;
  Eigen::VectorXd local_true;  // generated within-pixel component
  Eigen::MatrixXd obs_fit;     // n x 2 truncated road-distance columns
};

// One field draw: exact dense factorization at feasible sizes, above that a
// coarse-grid draw refined bilinearly. The correlation is a function of
// distance in grid coordinates.
Eigen::VectorXd sample_gp(const grid::RegularGrid& g, double variance,
                          const std::function<double(double)>& correlation,
                          Rng& rng);

// Full replicate per the scenario recipe. All randomness is drawn from
// substreams of `rng`, so scenarios sharing a seed share their land mask,
// covariates, truth surfaces, and observation stream; only the proxy-side
// components the scenario toggles differ.
ReplicateData generate_scenario(const ScenarioConfig& cfg, Rng& rng);

// Serializes a replicate to the CSV files the fitting tools read:
// grid.csv, covariates.csv, observations.csv, proxy.csv, truth.csv.
void write_replicate(const ReplicateData& rep, const std::string& dir);

}  // namespace sim
}  // namespace spatfuse
