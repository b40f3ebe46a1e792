#pragma once
// Assembles fusion problems from the CSV data formats and drives the fit,
// predict, diagnose, and cross-validation commands. The simulation study
// shares the same assembly path, so generated and on-disk data fit
// identically.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "spatfuse/config.hpp"
#include "spatfuse/grid.hpp"
#include "spatfuse/model.hpp"
#include "spatfuse/rng.hpp"
#include "spatfuse/sim.hpp"

namespace spatfuse {
namespace cli {

// data in memory, before any model structure is chosen
struct RawData {
  grid::RegularGrid grid;
  Eigen::MatrixXd covariates;  // cells x k
  std::vector<std::string> covariate_names;

  Eigen::VectorXd y;
  std::vector<int> obs_cells;
  Eigen::VectorXd n_days;
  std::vector<std::uint8_t> colocated;
  std::vector<int> site;  // shared-site ids; -1 for independent monitors
  Eigen::MatrixXd obs_cov;
  std::vector<std::string> obs_cov_names;

  std::vector<int> proxy_cells;
  Eigen::VectorXd a;
  Eigen::VectorXd proxy_counts;  // empty unless the proxy file carries counts

  Eigen::VectorXd truth;  // empty without a truth file
};

RawData load_data(const RunConfig& cfg);
RawData from_replicate(const sim::ReplicateData& rep);

struct Problem {
  grid::RegularGrid grid;
  FusionModelSpec spec;
  std::vector<std::string> warnings;
};

// ZL = intercept | standardized grid covariates | spatial smooth (planar
// radial basis, or the intrinsic joint field when configured). Observation
// covariates are centered at their sample means: the monitor regression has
// no intercept of its own, so an uncentered local-source column would push
// its mean effect into the field intercept and shift every prediction.
Problem build_problem(const RawData& data, const ModelOptions& opt);

struct FitResult {
  mcmc::ChainOutput chain;
  Eigen::VectorXd field_mean;  // latent-field summaries over grid cells
  Eigen::VectorXd field_sd;
  std::vector<Eigen::VectorXd> field_draws;
  std::vector<Eigen::VectorXd> phi_draws;  // empty without a discrepancy field
  Eigen::VectorXd beta1_eff;               // per retained latent draw
};

FitResult run_fit(const Problem& prob, const mcmc::ChainConfig& chain, Rng& rng);

int cmd_fit(const RunConfig& cfg);
int cmd_predict(const RunConfig& cfg);
int cmd_diagnose(const RunConfig& cfg);
int cmd_cv(const RunConfig& cfg);

}  // namespace cli
}  // namespace spatfuse
