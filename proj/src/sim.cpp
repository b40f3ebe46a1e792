#include "spatfuse/sim.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <filesystem>

#include "spatfuse/csv.hpp"
#include "spatfuse/errors.hpp"

namespace spatfuse {
namespace sim {

double matern_correlation(double d, double nu, double decay) {
  if (d <= 0) return 1.0;
  double x = decay * d;
  // limit is 1 from below; far under machine resolution the Bessel/power
  // product would round through inf * 0
  if (x < 1e-12) return 1.0;
  double c = std::exp((1.0 - nu) * 0.6931471805599453 - std::lgamma(nu));
  double v = c * std::pow(x, nu) * std::cyl_bessel_k(nu, x);
  return std::min(v, 1.0);
}

double matern_decay_for_range(double range, double nu, double target) {
  if (!(range > 0) || !(nu > 0) || !(target > 0) || !(target < 1))
    throw ConfigError("effective range, smoothness, and target correlation must be positive (target below one)");
  double lo = 1e-12;
  double hi = 1.0;
  while (matern_correlation(range, nu, hi) >= target) {
    hi *= 2.0;
    if (hi > 1e12) throw NumericError("no decay rate reaches the target correlation at this range");
  }
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (matern_correlation(range, nu, mid) >= target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

namespace {

constexpr int kDenseCells = 3600;  // largest grid factored exactly

Eigen::VectorXd dense_draw(const grid::RegularGrid& g, double variance,
                           const std::function<double(double)>& correlation,
                           Rng& rng) {
  const int m = g.cells();
  // correlations depend on the row/column offset only
  Eigen::MatrixXd table(g.nrow, g.ncol);
  for (int dr = 0; dr < g.nrow; ++dr)
    for (int dc = 0; dc < g.ncol; ++dc)
      table(dr, dc) = correlation(g.cell_size * std::hypot(double(dr), double(dc)));
  Eigen::MatrixXd C(m, m);
  for (int i = 0; i < m; ++i) {
    auto [ri, ci] = g.rowcol(i);
    for (int j = 0; j <= i; ++j) {
      auto [rj, cj] = g.rowcol(j);
      double v = variance * table(std::abs(ri - rj), std::abs(ci - cj));
      C(i, j) = v;
      C(j, i) = v;
    }
  }
  C.diagonal().array() += variance * 1e-8;
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success)
    throw NumericError("simulated field covariance is not positive definite");
  Eigen::VectorXd z(m);
  for (int i = 0; i < m; ++i) z[i] = rng.normal();
  return llt.matrixL() * z;
}

}  // namespace

Eigen::VectorXd sample_gp(const grid::RegularGrid& g, double variance,
                          const std::function<double(double)>& correlation,
                          Rng& rng) {
  g.validate();
  if (!(variance > 0)) throw ConfigError("field variance must be positive");
  if (g.cells() <= kDenseCells) return dense_draw(g, variance, correlation, rng);

  // above the exact-factorization size, draw on a coarse grid and refine
  // bilinearly; structure below the coarse spacing is smoothed out
  int k = 2;
  auto coarse_cells = [&](int kk) {
    return ((g.nrow + kk - 1) / kk) * ((g.ncol + kk - 1) / kk);
  };
  while (coarse_cells(k) > kDenseCells) ++k;
  grid::RegularGrid coarse;
  coarse.nrow = (g.nrow + k - 1) / k;
  coarse.ncol = (g.ncol + k - 1) / k;
  coarse.cell_size = g.cell_size * k;
  coarse.origin_x = g.origin_x;
  coarse.origin_y = g.origin_y;
  Eigen::VectorXd cv = dense_draw(coarse, variance, correlation, rng);

  Eigen::VectorXd out(g.cells());
  for (int idx = 0; idx < g.cells(); ++idx) {
    double cx = (g.centroid_x(idx) - g.origin_x) / coarse.cell_size - 0.5;
    double cy = (g.centroid_y(idx) - g.origin_y) / coarse.cell_size - 0.5;
    int j0 = std::clamp(int(std::floor(cx)), 0, std::max(coarse.ncol - 2, 0));
    int i0 = std::clamp(int(std::floor(cy)), 0, std::max(coarse.nrow - 2, 0));
    int j1 = std::min(j0 + 1, coarse.ncol - 1);
    int i1 = std::min(i0 + 1, coarse.nrow - 1);
    double fx = std::clamp(cx - j0, 0.0, 1.0);
    double fy = std::clamp(cy - i0, 0.0, 1.0);
    double top = (1 - fx) * cv[coarse.index(i0, j0)] + fx * cv[coarse.index(i0, j1)];
    double bot = (1 - fx) * cv[coarse.index(i1, j0)] + fx * cv[coarse.index(i1, j1)];
    out[idx] = (1 - fy) * top + fy * bot;
  }
  return out;
}

namespace {

// standard t with 3 degrees of freedom, for heavy-tailed covariate noise
double draw_t3(Rng& rng) {
  double z = rng.normal();
  double s = 0.0;
  for (int i = 0; i < 3; ++i) {
    double w = rng.normal();
    s += w * w;
  }
  return z / std::sqrt(s / 3.0);
}

double land_mean(const Eigen::VectorXd& v, const grid::RegularGrid& g) {
  double s = 0.0;
  int n = 0;
  for (int i = 0; i < v.size(); ++i)
    if (g.is_land(i)) {
      s += v[i];
      ++n;
    }
  return s / n;
}

double land_sd(const Eigen::VectorXd& v, const grid::RegularGrid& g) {
  double mu = land_mean(v, g);
  double s = 0.0;
  int n = 0;
  for (int i = 0; i < v.size(); ++i)
    if (g.is_land(i)) {
      double d = v[i] - mu;
      s += d * d;
      ++n;
    }
  return std::sqrt(s / n);
}

}  // namespace

ReplicateData generate_scenario(const ScenarioConfig& cfg, Rng& rng) {
  if (cfg.scenario < 1 || cfg.scenario > 6)
    throw ConfigError("scenario must be between 1 and 6");
  if (cfg.observations() < 1)
    throw ConfigError("at least one observation is required");

  ReplicateData rep;
  rep.grid.nrow = cfg.nrow;
  rep.grid.ncol = cfg.ncol;
  rep.grid.cell_size = 1.0;
  rep.grid.validate();
  const int m = rep.grid.cells();

  // Fixed substream ids per component: scenarios sharing a seed share every
  // stream a scenario does not switch off, so paired comparisons across
  // scenarios see identical land, covariates, truth, and observations.
  Rng rng_land = rng.substream(1);
  Rng rng_cov = rng.substream(2);
  Rng rng_g = rng.substream(3);
  Rng rng_large = rng.substream(4);
  Rng rng_small = rng.substream(5);
  Rng rng_pnoise = rng.substream(6);
  Rng rng_obs = rng.substream(7);

  auto matern_of = [&](double range) -> std::function<double(double)> {
    double decay = matern_decay_for_range(range, cfg.nu);
    double nu = cfg.nu;
    return [nu, decay](double d) { return matern_correlation(d, nu, decay); };
  };

  // land: threshold a smooth surface at the water-fraction quantile
  {
    Eigen::VectorXd f = sample_gp(rep.grid, 1.0, matern_of(0.4 * cfg.nrow), rng_land);
    int nw = int(std::floor(cfg.water_fraction * m));
    rep.grid.land.assign(m, 1);
    if (nw > 0) {
      std::vector<double> v(f.data(), f.data() + m);
      std::nth_element(v.begin(), v.begin() + nw, v.end());
      double thresh = v[nw];
      for (int i = 0; i < m; ++i) rep.grid.land[i] = f[i] >= thresh ? 1 : 0;
    }
  }
  std::vector<int> land_list;
  for (int i = 0; i < m; ++i)
    if (rep.grid.is_land(i)) land_list.push_back(i);
  if (land_list.empty()) throw ConfigError("water fraction leaves no land");

  // Covariate layers, drawn over the whole grid. Generation uses log
  // population, log elevation, sqrt class-1/2 road densities, and sqrt
  // emissions; the fitting table deliberately degrades those into linear
  // truncated elevation, the class-3 road density, and log emissions.
  Eigen::VectorXd log_pop(m), elev(m), road1(m), road2(m), road3(m), emis(m);
  {
    Eigen::VectorXd s_pop = sample_gp(rep.grid, 1.0, matern_of(0.30 * cfg.nrow), rng_cov);
    for (int i = 0; i < m; ++i) log_pop[i] = s_pop[i] + 0.25 * draw_t3(rng_cov);
    Eigen::VectorXd s_elev = sample_gp(rep.grid, 1.0, matern_of(0.45 * cfg.nrow), rng_cov);
    for (int i = 0; i < m; ++i)
      elev[i] = 400.0 * std::exp(0.9 * s_elev[i] + 0.1 * draw_t3(rng_cov));
    for (Eigen::VectorXd* road : {&road1, &road2, &road3}) {
      Eigen::VectorXd r = sample_gp(rep.grid, 1.0, matern_of(0.15 * cfg.nrow), rng_cov);
      for (int i = 0; i < m; ++i) {
        double v = 1.5 * r[i];
        (*road)[i] = v * v;
      }
    }
    // emissions are constant within square county blocks
    int b = std::max(3, cfg.nrow / 12);
    int nbc = (cfg.ncol + b - 1) / b;
    int nbr = (cfg.nrow + b - 1) / b;
    Eigen::VectorXd county(nbr * nbc);
    for (int i = 0; i < county.size(); ++i) county[i] = std::exp(rng_cov.normal());
    for (int i = 0; i < m; ++i) {
      auto [r, c] = rep.grid.rowcol(i);
      emis[i] = county[(r / b) * nbc + c / b];
    }
  }

  rep.cov_gen.resize(m, 5);
  rep.cov_gen.col(0) = log_pop;
  rep.cov_gen.col(1) = elev.array().log();
  rep.cov_gen.col(2) = road1.array().sqrt();
  rep.cov_gen.col(3) = road2.array().sqrt();
  rep.cov_gen.col(4) = emis.array().sqrt();

  // one common rescale pins the combined effect's land sd at the target
  // without disturbing the stated coefficient ratios
  Eigen::Map<const Eigen::VectorXd> coefs(cfg.coefs.data(), 5);
  double raw_sd = land_sd(rep.cov_gen * coefs, rep.grid);
  if (!(raw_sd > 0)) throw NumericError("covariate effect surface is degenerate");
  rep.cov_gen *= cfg.covariate_effect_sd / raw_sd;

  rep.fit_names = {"pop_log", "elev_trunc", "road3", "emis_log"};
  rep.cov_fit.resize(m, 4);
  rep.cov_fit.col(0) = log_pop;
  rep.cov_fit.col(1) = elev.array().min(500.0);
  rep.cov_fit.col(2) = road3;
  rep.cov_fit.col(3) = emis.array().log();
  for (int k = 0; k < 4; ++k) {
    Eigen::VectorXd col = rep.cov_fit.col(k);
    double sd = land_sd(col, rep.grid);
    if (sd < 1e-12) {
      rep.cov_fit.col(k).setZero();
    } else {
      rep.cov_fit.col(k) = (col.array() - land_mean(col, rep.grid)) / sd;
    }
  }

  rep.gp = sample_gp(rep.grid, cfg.gp_sd * cfg.gp_sd, matern_of(cfg.range_g()), rng_g);
  rep.phi_large = cfg.large_disc_active()
                      ? sample_gp(rep.grid, cfg.large_disc_sd * cfg.large_disc_sd,
                                  matern_of(cfg.range_large()), rng_large)
                      : Eigen::VectorXd::Zero(m);
  rep.phi_small = cfg.small_disc_active()
                      ? sample_gp(rep.grid, cfg.small_disc_sd * cfg.small_disc_sd,
                                  matern_of(cfg.range_small()), rng_small)
                      : Eigen::VectorXd::Zero(m);
  rep.L = rep.cov_gen * coefs + rep.gp;
  rep.beta1 = cfg.beta1_active() ? 1.0 : 0.0;

  rep.proxy_cells = land_list;
  rep.a.resize(int(land_list.size()));
  for (int j = 0; j < rep.a.size(); ++j) {
    int cell = land_list[j];
    rep.a[j] = rep.beta1 * rep.L[cell] + rep.phi_large[cell] + rep.phi_small[cell] +
               cfg.proxy_noise_sd * rng_pnoise.normal();
  }

  // Sites land uniformly (repeats allowed); the within-pixel component decays
  // as a power of two road distances drawn log-uniform on [35m, 4000m]. One
  // fixed draw tuple per site keeps a sparse-observation scenario a prefix of
  // its dense counterpart.
  const int n = cfg.observations();
  rep.obs_cells.resize(n);
  rep.y.resize(n);
  rep.local_true.resize(n);
  rep.obs_fit.resize(n, 2);
  const double lo = std::log(35.0), hi = std::log(4000.0);
  for (int i = 0; i < n; ++i) {
    int cell = land_list[rng_obs.integer(land_list.size())];
    double d1 = std::exp(rng_obs.uniform(lo, hi));
    double d2 = std::exp(rng_obs.uniform(lo, hi));
    double z = rng_obs.normal();
    rep.obs_cells[i] = cell;
    rep.local_true[i] = 50.0 * std::pow(d1, -0.77) + 10.0 * std::pow(d2, -0.77);
    rep.y[i] = rep.L[cell] + rep.local_true[i] + cfg.obs_noise_sd * z;
    rep.obs_fit(i, 0) = std::clamp(d1, 10.0, 500.0);
    rep.obs_fit(i, 1) = std::clamp(d2, 10.0, 500.0);
  }
  return rep;
}

void write_replicate(const ReplicateData& rep, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto path = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };

  {
    CsvWriter w({"nrow", "ncol", "cell_size"});
    w.append_raw({std::to_string(rep.grid.nrow), std::to_string(rep.grid.ncol),
                  format_double(rep.grid.cell_size)});
    w.write_file(path("grid.csv"));
  }
  {
    std::vector<std::string> cols = {"cell", "land"};
    cols.insert(cols.end(), rep.fit_names.begin(), rep.fit_names.end());
    CsvWriter w(cols);
    for (int i = 0; i < rep.grid.cells(); ++i) {
      std::vector<std::string> row = {std::to_string(i),
                                      std::to_string(rep.grid.is_land(i) ? 1 : 0)};
      for (int k = 0; k < rep.cov_fit.cols(); ++k)
        row.push_back(format_double(rep.cov_fit(i, k)));
      w.append_raw(row);
    }
    w.write_file(path("covariates.csv"));
  }
  {
    CsvWriter w({"y", "cell", "n_days", "colocated", "site", "dist1", "dist2"});
    for (int i = 0; i < rep.y.size(); ++i)
      w.append_raw({format_double(rep.y[i]), std::to_string(rep.obs_cells[i]), "30", "0",
                    "-1", format_double(rep.obs_fit(i, 0)), format_double(rep.obs_fit(i, 1))});
    w.write_file(path("observations.csv"));
  }
  {
    CsvWriter w({"cell", "value"});
    for (std::size_t j = 0; j < rep.proxy_cells.size(); ++j)
      w.append_raw({std::to_string(rep.proxy_cells[j]), format_double(rep.a[int(j)])});
    w.write_file(path("proxy.csv"));
  }
  {
    CsvWriter w({"cell", "L", "gp", "phi_small", "phi_large"});
    for (int i = 0; i < rep.grid.cells(); ++i)
      w.append_raw({std::to_string(i), format_double(rep.L[i]), format_double(rep.gp[i]),
                    format_double(rep.phi_small[i]), format_double(rep.phi_large[i])});
    w.write_file(path("truth.csv"));
  }
}

}  // namespace sim
}  // namespace spatfuse
