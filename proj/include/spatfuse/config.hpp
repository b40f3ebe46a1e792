#pragma once
// Run configuration: one JSON document drives every command, and command-line
// --set overrides rewrite keys before parsing. Relative paths in the document
// resolve against the config file's directory, so a manifest embedding the
// resolved document is sufficient to re-run.
//
// Schema (all keys optional, defaults shown by RunConfig):
//   seed, output_dir
//   data:      grid, observations, covariates, proxy, truth
//   model:     include_proxy, include_discrepancy, proxy_as_covariate,
//              joint_field, orthogonalize, fix_kappa (0 = free), fix_beta1,
//              beta1_value, discrepancy_prior (tps|car), knots,
//              obs_covariates, grid_covariates (empty = every column)
//   chain:     burn_in, post_burn, thin, latent_stride, adapt_after_burn_in,
//              target_acceptance, blocks
//   variogram: bin_width, max_distance, pair_budget
//   study:     scenarios, variants, replicates, nrow, ncol, n_obs, workers
//   cv:        folds, workers
//   predict:   cells

#include <cstdint>
#include <string>
#include <vector>

#include "spatfuse/diagnostics.hpp"
#include "spatfuse/mcmc.hpp"

namespace spatfuse {
namespace cli {

struct DataPaths {
  std::string grid;
  std::string observations;
  std::string covariates;
  std::string proxy;
  std::string truth;  // optional; enables scoring against a known field
};

struct ModelOptions {
  bool include_proxy = true;
  bool include_discrepancy = true;
  bool proxy_as_covariate = false;
  bool joint_field = false;  // intrinsic-field spatial term instead of the knot smooth
  bool orthogonalize = false;
  double fix_kappa = 0.0;  // 0 keeps the discrepancy smoothing precision free
  bool fix_beta1 = false;
  double beta1_value = 1.0;
  std::string discrepancy_prior = "tps";  // or "car"
  int knots = 100;  // spatial smooth size; 0 drops the smooth entirely
  std::vector<std::string> obs_covariates{"dist1", "dist2"};
  std::vector<std::string> grid_covariates;  // empty selects every data column
};

struct StudyOptions {
  std::vector<int> scenarios{1, 2, 3, 4, 5, 6};
  std::vector<std::string> variants{"full",       "no_proxy",  "no_discrepancy",
                                    "large_scale", "fix_beta1", "proxy_covariate"};
  int replicates = 10;
  int nrow = 60;
  int ncol = 40;
  int n_obs = -1;  // overrides scenarios 1-5; the sparse scenario keeps 40
  int workers = 1;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  DataPaths data;
  ModelOptions model;
  mcmc::ChainConfig chain;
  diagnostics::VariogramOptions variogram;
  StudyOptions study;
  int cv_folds = 5;
  int cv_workers = 1;
  std::string predict_cells;

  // Both parsers reject unknown keys, mistyped values, and mutually
  // inconsistent flags before any compute. Overrides are "key.path=value"
  // with the value read as JSON when it parses, as a bare string otherwise.
  static RunConfig from_file(const std::string& path,
                             const std::vector<std::string>& overrides = {});
  static RunConfig from_text(const std::string& text, const std::string& origin,
                             const std::vector<std::string>& overrides = {});

  // resolved document (defaults filled in, paths absolute); embedded in run
  // manifests and parseable by from_text
  std::string to_json() const;
};

}  // namespace cli
}  // namespace spatfuse
