#include "spatfuse/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "json.hpp"
#include "spatfuse/csv.hpp"
#include "spatfuse/diagnostics.hpp"
#include "spatfuse/errors.hpp"
#include "spatfuse/mrf.hpp"
#include "spatfuse/splines.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace spatfuse {
namespace cli {

namespace {

void require_file(const std::string& path, const char* key) {
  if (path.empty()) throw ConfigError(std::string("data.") + key + " is required");
  if (!fs::exists(path))
    throw ConfigError(std::string("data.") + key + " does not exist: " + path);
}

void check_finite(const std::vector<double>& v, const std::string& path,
                  const std::string& col) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      throw DataError(path + ": non-finite value in column " + col + ", row " +
                      std::to_string(i + 2));
}

// full-coverage tables carry one row per grid cell, in any order
std::vector<int> coverage_cells(const CsvTable& t, const std::string& path, int m) {
  if (static_cast<int>(t.rows()) != m)
    throw DataError(path + ": expected one row per grid cell");
  auto cells = t.col_int("cell");
  std::vector<char> seen(m, 0);
  for (int c : cells) {
    if (c < 0 || c >= m) throw DataError(path + ": cell index out of range");
    if (seen[c]) throw DataError(path + ": duplicate cell index");
    seen[c] = 1;
  }
  return cells;
}

std::vector<std::uint8_t> land_of(const grid::RegularGrid& g) {
  std::vector<std::uint8_t> mask(g.cells());
  for (int i = 0; i < g.cells(); ++i) mask[i] = g.is_land(i) ? 1 : 0;
  return mask;
}

// standardize over land cells; a constant column is zeroed and reported
bool standardize_land(Eigen::VectorXd& col, const grid::RegularGrid& g) {
  double s = 0.0;
  int n = 0;
  for (int i = 0; i < col.size(); ++i)
    if (g.is_land(i)) {
      s += col[i];
      ++n;
    }
  double mean = s / n;
  double v = 0.0;
  for (int i = 0; i < col.size(); ++i)
    if (g.is_land(i)) {
      double d = col[i] - mean;
      v += d * d;
    }
  double sd = std::sqrt(v / n);
  if (sd < 1e-12) {
    col.setZero();
    return false;
  }
  col = (col.array() - mean) / sd;
  return true;
}

}  // namespace

RawData load_data(const RunConfig& cfg) {
  RawData d;

  require_file(cfg.data.grid, "grid");
  {
    CsvTable t = CsvTable::read_file(cfg.data.grid);
    if (t.rows() != 1) throw DataError(cfg.data.grid + ": expected exactly one row");
    d.grid.nrow = t.col_int("nrow")[0];
    d.grid.ncol = t.col_int("ncol")[0];
    d.grid.cell_size = t.col_double("cell_size")[0];
    d.grid.validate();
  }
  const int m = d.grid.cells();

  if (!cfg.data.covariates.empty()) {
    require_file(cfg.data.covariates, "covariates");
    CsvTable t = CsvTable::read_file(cfg.data.covariates);
    auto cells = coverage_cells(t, cfg.data.covariates, m);
    if (t.has_column("land")) {
      auto land = t.col_int("land");
      d.grid.land.assign(m, 0);
      for (std::size_t i = 0; i < land.size(); ++i) {
        if (land[i] != 0 && land[i] != 1)
          throw DataError(cfg.data.covariates + ": land column must be 0 or 1");
        d.grid.land[cells[i]] = static_cast<std::uint8_t>(land[i]);
      }
      if (d.grid.land_cells() == 0)
        throw DataError(cfg.data.covariates + ": the land mask excludes every cell");
    }
    for (const auto& name : t.columns()) {
      if (name == "cell" || name == "land") continue;
      auto vals = t.col_double(name);
      check_finite(vals, cfg.data.covariates, name);
      Eigen::VectorXd col(m);
      for (int i = 0; i < m; ++i) col[cells[i]] = vals[i];
      d.covariates.conservativeResize(m, d.covariates.cols() + 1);
      d.covariates.col(d.covariates.cols() - 1) = col;
      d.covariate_names.push_back(name);
    }
  }

  require_file(cfg.data.observations, "observations");
  {
    const std::string& path = cfg.data.observations;
    CsvTable t = CsvTable::read_file(path);
    const int n = static_cast<int>(t.rows());
    if (n == 0) throw DataError(path + ": no observations");
    auto y = t.col_double("y");
    check_finite(y, path, "y");
    d.y = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
    d.obs_cells = t.col_int("cell");
    for (int c : d.obs_cells)
      if (c < 0 || c >= m) throw DataError(path + ": observation cell out of range");

    d.n_days = Eigen::VectorXd::Constant(n, 30.0);
    if (t.has_column("n_days")) {
      auto nd = t.col_double("n_days");
      for (int i = 0; i < n; ++i) {
        if (!(nd[i] > 0) || nd[i] > 30.0)
          throw DataError(path + ": n_days must lie in (0, 30], row " +
                          std::to_string(i + 2));
        d.n_days[i] = nd[i];
      }
    }
    d.colocated.assign(n, 0);
    if (t.has_column("colocated")) {
      auto co = t.col_int("colocated");
      for (int i = 0; i < n; ++i) {
        if (co[i] != 0 && co[i] != 1)
          throw DataError(path + ": colocated column must be 0 or 1");
        d.colocated[i] = static_cast<std::uint8_t>(co[i]);
      }
    }
    d.site.assign(n, -1);
    if (t.has_column("site")) d.site = t.col_int("site");

    d.obs_cov.resize(n, static_cast<int>(cfg.model.obs_covariates.size()));
    for (std::size_t j = 0; j < cfg.model.obs_covariates.size(); ++j) {
      const std::string& name = cfg.model.obs_covariates[j];
      if (!t.has_column(name))
        throw ConfigError("configured observation covariate not in " + path + ": " + name);
      auto vals = t.col_double(name);
      check_finite(vals, path, name);
      for (int i = 0; i < n; ++i) d.obs_cov(i, static_cast<int>(j)) = vals[i];
    }
    d.obs_cov_names = cfg.model.obs_covariates;
  }

  if (cfg.model.include_proxy) {
    if (cfg.data.proxy.empty())
      throw ConfigError("data.proxy is required when model.include_proxy is set");
    require_file(cfg.data.proxy, "proxy");
    CsvTable t = CsvTable::read_file(cfg.data.proxy);
    const int r = static_cast<int>(t.rows());
    if (r == 0) throw DataError(cfg.data.proxy + ": no proxy rows");
    d.proxy_cells = t.col_int("cell");
    for (int c : d.proxy_cells)
      if (c < 0 || c >= m) throw DataError(cfg.data.proxy + ": proxy cell out of range");
    auto vals = t.col_double("value");
    check_finite(vals, cfg.data.proxy, "value");
    d.a = Eigen::Map<const Eigen::VectorXd>(vals.data(), r);
    if (t.has_column("count")) {
      auto counts = t.col_double("count");
      for (int i = 0; i < r; ++i)
        if (!(counts[i] > 0))
          throw DataError(cfg.data.proxy + ": counts must be positive, row " +
                          std::to_string(i + 2));
      d.proxy_counts = Eigen::Map<const Eigen::VectorXd>(counts.data(), r);
    }
  }

  if (!cfg.data.truth.empty()) {
    require_file(cfg.data.truth, "truth");
    CsvTable t = CsvTable::read_file(cfg.data.truth);
    auto cells = coverage_cells(t, cfg.data.truth, m);
    auto vals = t.col_double("L");
    check_finite(vals, cfg.data.truth, "L");
    d.truth.resize(m);
    for (int i = 0; i < m; ++i) d.truth[cells[i]] = vals[i];
  }
  return d;
}

RawData from_replicate(const sim::ReplicateData& rep) {
  RawData d;
  d.grid = rep.grid;
  d.covariates = rep.cov_fit;
  d.covariate_names = rep.fit_names;
  d.y = rep.y;
  d.obs_cells = rep.obs_cells;
  const int n = static_cast<int>(rep.y.size());
  d.n_days = Eigen::VectorXd::Constant(n, 30.0);
  d.colocated.assign(n, 0);
  d.site.assign(n, -1);
  d.obs_cov = rep.obs_fit;
  d.obs_cov_names = {"dist1", "dist2"};
  d.proxy_cells = rep.proxy_cells;
  d.a = rep.a;
  d.truth = rep.L;
  return d;
}

Problem build_problem(const RawData& data, const ModelOptions& opt) {
  Problem p;
  p.grid = data.grid;
  p.grid.validate();
  const int m = p.grid.cells();
  FusionModelSpec& spec = p.spec;

  // grid covariate selection
  std::vector<int> sel;
  if (opt.grid_covariates.empty()) {
    for (int j = 0; j < data.covariates.cols(); ++j) sel.push_back(j);
  } else {
    for (const auto& name : opt.grid_covariates) {
      auto it = std::find(data.covariate_names.begin(), data.covariate_names.end(), name);
      if (it == data.covariate_names.end())
        throw ConfigError("configured grid covariate not present: " + name);
      sel.push_back(static_cast<int>(it - data.covariate_names.begin()));
    }
  }
  const int ncov = static_cast<int>(sel.size());

  const bool smooth = opt.knots > 0 && !opt.joint_field;
  Eigen::MatrixXd fixed_xy, radial;
  if (smooth) {
    auto kl = plan_knots_2d(p.grid.origin_x, p.grid.origin_x + p.grid.ncol * p.grid.cell_size,
                            p.grid.origin_y, p.grid.origin_y + p.grid.nrow * p.grid.cell_size,
                            opt.knots);
    SmoothTerm st = tps2d_basis(kl.x, kl.y);
    if (st.size() < 4) throw ConfigError("model.knots must place at least four knots");
    Eigen::VectorXd cx(m), cy(m);
    for (int i = 0; i < m; ++i) {
      cx[i] = p.grid.centroid_x(i);
      cy[i] = p.grid.centroid_y(i);
    }
    fixed_xy = st.fixed(cx, cy);
    radial = st.penalized(cx, cy);
  }
  const int nk = smooth ? static_cast<int>(radial.cols()) : 0;

  const int pL = 1 + ncov + (smooth ? 2 + nk : 0);
  spec.ZL = Eigen::MatrixXd::Zero(m, pL);
  spec.ZL.col(0).setOnes();
  for (int j = 0; j < ncov; ++j) {
    Eigen::VectorXd col = data.covariates.col(sel[j]);
    if (!standardize_land(col, p.grid))
      p.warnings.push_back("covariate " + data.covariate_names[sel[j]] +
                           " is constant over land and was dropped");
    spec.ZL.col(1 + j) = col;
  }
  if (smooth) {
    for (int j = 0; j < 2; ++j) {
      Eigen::VectorXd col = fixed_xy.col(j);
      standardize_land(col, p.grid);
      spec.ZL.col(1 + ncov + j) = col;
    }
    // the radial block's scale is calibrated to its penalty; left untouched
    spec.ZL.rightCols(nk) = radial;
  }

  spec.Zy = data.obs_cov;
  for (int j = 0; j < spec.Zy.cols(); ++j)
    spec.Zy.col(j).array() -= spec.Zy.col(j).mean();
  const int py = static_cast<int>(spec.Zy.cols());
  spec.coef_group.assign(py, -1);
  for (int j = 0; j < 1 + ncov + (smooth ? 2 : 0); ++j) spec.coef_group.push_back(-1);
  for (int j = 0; j < nk; ++j) spec.coef_group.push_back(0);

  spec.y = data.y;
  spec.n_days = data.n_days;
  spec.colocated = data.colocated;
  spec.P_Y = grid::cell_selection(p.grid, data.obs_cells).W;

  // shared-site offsets: one column per distinct site id among co-located rows
  const int n = static_cast<int>(data.y.size());
  {
    std::map<int, int> col_of;
    std::vector<Eigen::Triplet<double>> trips;
    for (int i = 0; i < n; ++i) {
      if (!data.colocated[i]) continue;
      if (data.site[i] < 0)
        throw DataError("co-located observation without a site id, row " +
                        std::to_string(i + 1));
      auto [it, fresh] = col_of.try_emplace(data.site[i], static_cast<int>(col_of.size()));
      trips.emplace_back(i, it->second, 1.0);
    }
    SparseRow pd(n, static_cast<int>(col_of.size()));
    pd.setFromTriplets(trips.begin(), trips.end());
    spec.P_delta = pd;
  }

  spec.include_proxy = opt.include_proxy;
  spec.include_discrepancy = opt.include_discrepancy;
  spec.proxy_as_covariate = opt.proxy_as_covariate;
  if (opt.fix_kappa > 0) spec.fix_kappa = opt.fix_kappa;
  if (opt.fix_beta1) spec.fix_beta1 = opt.beta1_value;
  spec.orthogonalize_draws = opt.orthogonalize;

  if (opt.include_proxy) {
    if (data.a.size() == 0) throw ConfigError("model.include_proxy requires proxy data");
    spec.P_A = grid::cell_selection(p.grid, data.proxy_cells).W;
    spec.a = data.a;
    if (data.proxy_counts.size() > 0) {
      spec.proxy_noise = ProxyNoise::CountScaled;
      spec.proxy_counts = data.proxy_counts;
    }
  }

  const bool disc_field =
      opt.include_proxy && !opt.proxy_as_covariate && opt.include_discrepancy;
  if (disc_field) {
    spec.Q_phi = opt.discrepancy_prior == "car" ? mrf::car_precision(p.grid)
                                                : mrf::tps_precision(p.grid);
    if (!opt.joint_field) spec.P_phi = spec.P_A;
  }
  if (opt.joint_field) {
    spec.joint_fields = true;
    spec.P_Yc = spec.P_Y;
    spec.P_Ac = spec.P_A;
    spec.Q_g = mrf::tps_precision(p.grid);
  }
  return p;
}

FitResult run_fit(const Problem& prob, const mcmc::ChainConfig& chain, Rng& rng) {
  FitResult out;
  out.chain = mcmc::run_chain(prob.spec, chain, rng);
  if (out.chain.latents.empty())
    throw ConfigError("no latent draws were retained; chain.latent_stride must be positive");

  MarginalEvaluator ev(prob.spec);
  const int T = static_cast<int>(out.chain.latents.size());
  const int m = prob.grid.cells();
  out.field_draws.reserve(T);
  out.beta1_eff.resize(T);
  for (int t = 0; t < T; ++t) {
    const LatentDraws& ld = out.chain.latents[t];
    Eigen::VectorXd f = ev.field_L(ld.b);
    if (prob.spec.joint_fields) {
      if (ld.g.size() != f.size())
        throw NumericError("joint field draw does not match the grid");
      f += ld.g;
    }
    out.field_draws.push_back(std::move(f));
    if (ld.phi.size() > 0) out.phi_draws.push_back(ld.phi);
    out.beta1_eff[t] = ld.beta1_effective;
  }
  if (!out.phi_draws.empty() && static_cast<int>(out.phi_draws.size()) != T)
    throw NumericError("discrepancy draws are incomplete");

  out.field_mean = Eigen::VectorXd::Zero(m);
  for (const auto& f : out.field_draws) out.field_mean += f;
  out.field_mean /= T;
  out.field_sd = Eigen::VectorXd::Zero(m);
  for (const auto& f : out.field_draws)
    out.field_sd += (f - out.field_mean).cwiseAbs2();
  out.field_sd = (out.field_sd / T).cwiseSqrt();
  return out;
}

namespace {

void write_manifest(const RunConfig& cfg, const std::string& command,
                    const std::vector<std::string>& outputs,
                    const std::vector<std::string>& warnings) {
  json man;
  man["command"] = command;
  man["config"] = json::parse(cfg.to_json());
  man["outputs"] = outputs;
  man["warnings"] = warnings;
  write_text_file((fs::path(cfg.output_dir) / "manifest.json").string(),
                  man.dump(2) + "\n");
}

void write_traces(const std::string& dir, const mcmc::ChainOutput& chain) {
  std::vector<std::string> cols = {"draw"};
  cols.insert(cols.end(), chain.param_names.begin(), chain.param_names.end());
  for (int j = 0; j < chain.delta.cols(); ++j) cols.push_back("delta_" + std::to_string(j));
  CsvWriter w(cols);
  for (int i = 0; i < chain.theta.rows(); ++i) {
    std::vector<double> row = {static_cast<double>(i + 1)};
    for (int j = 0; j < chain.theta.cols(); ++j) row.push_back(chain.theta(i, j));
    for (int j = 0; j < chain.delta.cols(); ++j) row.push_back(chain.delta(i, j));
    w.append(row);
  }
  w.write_file((fs::path(dir) / "traces.csv").string());
}

void write_chain_summary(const std::string& dir, const mcmc::ChainOutput& chain) {
  CsvWriter w({"param", "mean", "sd", "ess"});
  for (int j = 0; j < chain.theta.cols(); ++j) {
    Eigen::VectorXd col = chain.theta.col(j);
    double mean = col.mean();
    double sd = std::sqrt((col.array() - mean).square().mean());
    w.append_raw({chain.param_names[j], format_double(mean), format_double(sd),
                  format_double(chain.ess[j])});
  }
  w.write_file((fs::path(dir) / "chain_summary.csv").string());
}

void write_blocks(const std::string& dir, const mcmc::ChainOutput& chain) {
  CsvWriter w({"block", "proposals", "accepts", "acceptance_rate", "scale"});
  for (const auto& b : chain.blocks) {
    std::string name;
    for (const auto& p : b.names) name += (name.empty() ? "" : "+") + p;
    w.append_raw({name, std::to_string(b.proposals), std::to_string(b.accepts),
                  format_double(b.acceptance_rate), format_double(b.scale)});
  }
  w.write_file((fs::path(dir) / "blocks.csv").string());
}

void write_field(const std::string& dir, const char* name, const Eigen::VectorXd& v) {
  CsvWriter w({"cell", "value"});
  for (int i = 0; i < v.size(); ++i)
    w.append_raw({std::to_string(i), format_double(v[i])});
  w.write_file((fs::path(dir) / name).string());
}

void write_variogram(const std::string& dir, const char* name,
                     const diagnostics::Variogram& v) {
  CsvWriter w({"distance", "semivariance", "pairs"});
  for (int i = 0; i < v.bin_centers.size(); ++i)
    w.append_raw({format_double(v.bin_centers[i]), format_double(v.semivariance[i]),
                  std::to_string(v.pair_counts[i])});
  w.write_file((fs::path(dir) / name).string());
}

// M(d) is defined by the two-likelihood fit; callers gate on phi draws
void write_md_curve(const std::string& dir, const RunConfig& cfg, const Problem& prob,
                    const FitResult& fr) {
  diagnostics::DiagnosticCurve curve = diagnostics::discrepancy_diagnostic(
      prob.grid, fr.phi_draws, fr.field_draws, fr.beta1_eff, land_of(prob.grid),
      cfg.variogram);
  CsvWriter w({"distance", "ratio"});
  for (int i = 0; i < curve.bin_centers.size(); ++i)
    w.append_raw({format_double(curve.bin_centers[i]), format_double(curve.mean_ratio[i])});
  w.write_file((fs::path(dir) / "md_curve.csv").string());
}

}  // namespace

int cmd_fit(const RunConfig& cfg) {
  if (cfg.chain.latent_stride <= 0)
    throw ConfigError("fit requires chain.latent_stride > 0");
  RawData data = load_data(cfg);
  Problem prob = build_problem(data, cfg.model);
  Rng rng(Rng::derive(cfg.seed, 0xF17));
  FitResult fr = run_fit(prob, cfg.chain, rng);

  fs::create_directories(cfg.output_dir);
  std::vector<std::string> outputs = {"traces.csv", "chain_summary.csv", "blocks.csv",
                                      "prediction_mean.csv", "prediction_sd.csv"};
  write_traces(cfg.output_dir, fr.chain);
  write_chain_summary(cfg.output_dir, fr.chain);
  write_blocks(cfg.output_dir, fr.chain);
  write_field(cfg.output_dir, "prediction_mean.csv", fr.field_mean);
  write_field(cfg.output_dir, "prediction_sd.csv", fr.field_sd);
  if (!fr.phi_draws.empty()) {
    write_md_curve(cfg.output_dir, cfg, prob, fr);
    outputs.push_back("md_curve.csv");
  }
  if (data.truth.size() > 0) {
    CsvWriter w({"metric", "value"});
    w.append_raw({"mspe_land",
                  format_double(diagnostics::mspe(fr.field_mean, data.truth,
                                                  land_of(prob.grid)))});
    w.write_file((fs::path(cfg.output_dir) / "scores.csv").string());
    outputs.push_back("scores.csv");
  }
  outputs.push_back("manifest.json");
  write_manifest(cfg, "fit", outputs, prob.warnings);
  return 0;
}

int cmd_predict(const RunConfig& cfg) {
  if (cfg.chain.latent_stride <= 0)
    throw ConfigError("predict requires chain.latent_stride > 0");
  if (cfg.predict_cells.empty())
    throw ConfigError("predict requires predict.cells");
  if (!fs::exists(cfg.predict_cells))
    throw ConfigError("predict.cells does not exist: " + cfg.predict_cells);

  RawData data = load_data(cfg);
  Problem prob = build_problem(data, cfg.model);
  CsvTable t = CsvTable::read_file(cfg.predict_cells);
  auto cells = t.col_int("cell");
  for (int c : cells)
    if (c < 0 || c >= prob.grid.cells())
      throw DataError(cfg.predict_cells + ": cell index out of range");

  Rng rng(Rng::derive(cfg.seed, 0xF17));
  FitResult fr = run_fit(prob, cfg.chain, rng);

  fs::create_directories(cfg.output_dir);
  CsvWriter w({"cell", "mean", "sd"});
  for (int c : cells)
    w.append_raw({std::to_string(c), format_double(fr.field_mean[c]),
                  format_double(fr.field_sd[c])});
  w.write_file((fs::path(cfg.output_dir) / "predictions.csv").string());
  write_manifest(cfg, "predict", {"predictions.csv", "manifest.json"}, prob.warnings);
  return 0;
}

int cmd_diagnose(const RunConfig& cfg) {
  if (!cfg.model.include_proxy || cfg.model.proxy_as_covariate ||
      !cfg.model.include_discrepancy)
    throw ConfigError(
        "diagnose requires the two-likelihood model with a discrepancy field");
  if (cfg.chain.latent_stride <= 0)
    throw ConfigError("diagnose requires chain.latent_stride > 0");

  RawData data = load_data(cfg);
  Problem prob = build_problem(data, cfg.model);
  Rng rng(Rng::derive(cfg.seed, 0xF17));
  FitResult fr = run_fit(prob, cfg.chain, rng);

  fs::create_directories(cfg.output_dir);
  write_md_curve(cfg.output_dir, cfg, prob, fr);
  Eigen::VectorXd phi_mean = Eigen::VectorXd::Zero(prob.grid.cells());
  for (const auto& f : fr.phi_draws) phi_mean += f;
  phi_mean /= static_cast<double>(fr.phi_draws.size());
  auto land = land_of(prob.grid);
  write_variogram(cfg.output_dir, "variogram_phi.csv",
                  diagnostics::empirical_variogram(prob.grid, phi_mean, land, cfg.variogram));
  write_variogram(cfg.output_dir, "variogram_field.csv",
                  diagnostics::empirical_variogram(prob.grid, fr.field_mean, land,
                                                   cfg.variogram));
  write_chain_summary(cfg.output_dir, fr.chain);
  write_manifest(cfg, "diagnose",
                 {"md_curve.csv", "variogram_phi.csv", "variogram_field.csv",
                  "chain_summary.csv", "manifest.json"},
                 prob.warnings);
  return 0;
}

int cmd_cv(const RunConfig& cfg) {
  RawData data = load_data(cfg);
  Problem prob = build_problem(data, cfg.model);

  diagnostics::CVOptions opt;
  opt.chain = cfg.chain;
  opt.workers = cfg.cv_workers;
  diagnostics::CVResult res = diagnostics::cross_validate(prob.spec, cfg.cv_folds, opt);

  fs::create_directories(cfg.output_dir);
  {
    CsvWriter w({"fold", "held_out", "r2", "rmspe", "coverage"});
    for (std::size_t f = 0; f < res.folds.size(); ++f) {
      const auto& fold = res.folds[f];
      w.append_raw({std::to_string(f + 1), std::to_string(fold.held_out_rows.size()),
                    format_double(fold.score.r2), format_double(fold.score.rmspe),
                    format_double(fold.score.coverage)});
    }
    w.append_raw({"pooled", std::to_string(data.y.size()), format_double(res.pooled.r2),
                  format_double(res.pooled.rmspe), format_double(res.pooled.coverage)});
    w.write_file((fs::path(cfg.output_dir) / "cv_scores.csv").string());
  }
  {
    CsvWriter w({"row", "observed", "predicted_mean", "predicted_sd"});
    for (int i = 0; i < res.predicted_mean.size(); ++i)
      w.append_raw({std::to_string(i), format_double(data.y[i]),
                    format_double(res.predicted_mean[i]),
                    format_double(res.predicted_sd[i])});
    w.write_file((fs::path(cfg.output_dir) / "cv_predictions.csv").string());
  }
  std::vector<std::string> warnings = prob.warnings;
  warnings.insert(warnings.end(), res.warnings.begin(), res.warnings.end());
  write_manifest(cfg, "cv", {"cv_scores.csv", "cv_predictions.csv", "manifest.json"},
                 warnings);
  return 0;
}

}  // namespace cli
}  // namespace spatfuse
