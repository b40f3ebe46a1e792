#pragma once
// Variogram-based diagnostics for the fitted discrepancy scale, prediction
// scoring, and site-held-out cross-validation.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "spatfuse/grid.hpp"
#include "spatfuse/mcmc.hpp"
#include "spatfuse/model.hpp"

namespace spatfuse {
namespace diagnostics {

struct VariogramOptions {
  double bin_width = 0;     // bins centered on multiples of the width; 0
                            // selects the grid cell size
  double max_distance = 0;  // 0 selects half the grid diagonal
  long pair_budget = 1000000;  // uniform pair subsample above this count
  std::uint64_t seed = 1;
};

struct Variogram {
  Eigen::VectorXd bin_centers;   // non-empty bins only
  Eigen::VectorXd semivariance;  // half the mean squared difference per bin
  Eigen::VectorXi pair_counts;
};

// classical semivariance over cell pairs of a gridded field; masked cells are
// excluded, and pairs are subsampled uniformly above the budget
Variogram empirical_variogram(const grid::RegularGrid& g,
                              const Eigen::VectorXd& field,
                              const std::vector<std::uint8_t>& mask = {},
                              const VariogramOptions& opt = {});

struct DiagnosticCurve {
  Eigen::VectorXd bin_centers;
  Eigen::VectorXd mean_ratio;   // posterior mean of the draw-wise curves
  Eigen::MatrixXd draw_ratios;  // draws by bin; NaN where a denominator is 0
};

// proportion of proxy variation carried by the discrepancy, by distance:
// per draw, Variog(phi) / (Variog(phi + beta1 L) + Variog(beta1 L)); bins
// whose denominator vanishes in every draw are omitted
DiagnosticCurve discrepancy_diagnostic(const grid::RegularGrid& g,
                                       const std::vector<Eigen::VectorXd>& phi,
                                       const std::vector<Eigen::VectorXd>& L,
                                       const Eigen::VectorXd& beta1,
                                       const std::vector<std::uint8_t>& mask = {},
                                       const VariogramOptions& opt = {});

// mean squared prediction error over unmasked entries
double mspe(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth,
            const std::vector<std::uint8_t>& mask = {});

// two-sided 90% interval half-width in standard deviations
inline constexpr double kCoverageZ = 1.6448536269514722;

struct PredScore {
  double r2 = 0.0;       // squared correlation; 0 when predictions are flat
  double rmspe = 0.0;
  double coverage = 0.0; // fraction of observations inside mean +- z sd
};

PredScore score_predictions(const Eigen::VectorXd& predicted_mean,
                            const Eigen::VectorXd& predicted_sd,
                            const Eigen::VectorXd& observed,
                            double z = kCoverageZ);

struct CVOptions {
  mcmc::ChainConfig chain;
  int workers = 1;  // fold-level parallelism; results identical at any count
};

struct CVFold {
  std::vector<int> held_out_rows;
  PredScore score;
};

struct CVResult {
  std::vector<CVFold> folds;
  PredScore pooled;
  Eigen::VectorXd predicted_mean;  // aligned with the observation rows
  Eigen::VectorXd predicted_sd;
  std::vector<std::string> warnings;
};

// site-held-out cross-validation: co-located monitors leave together; each
// fold refits the model and predicts the held-out observations from the
// posterior predictive of the regression surface plus all variance terms
CVResult cross_validate(const FusionModelSpec& spec, int folds,
                        const CVOptions& opt);

}  // namespace diagnostics
}  // namespace spatfuse
