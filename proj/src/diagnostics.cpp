#include "spatfuse/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <utility>

#include "spatfuse/errors.hpp"
#include "spatfuse/rng.hpp"

namespace spatfuse {
namespace diagnostics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// pair enumeration shared by all variogram-based estimators: cells in play,
// one bin index per pair, and per-bin pair counts
struct PairPlan {
  std::vector<int> a, b;  // cell indices per pair
  std::vector<int> bin;   // 0-based bin per pair
  Eigen::VectorXd centers;
  Eigen::VectorXi counts;
};

PairPlan plan_pairs(const grid::RegularGrid& g, const std::vector<std::uint8_t>& mask,
                    const VariogramOptions& opt) {
  g.validate();
  if (!mask.empty() && static_cast<int>(mask.size()) != g.cells())
    throw DataError("variogram mask length does not match the grid");

  std::vector<int> cells;
  for (int i = 0; i < g.cells(); ++i)
    if (g.is_land(i) && (mask.empty() || mask[i])) cells.push_back(i);
  const long nc = static_cast<long>(cells.size());
  if (nc < 2) throw DataError("variogram needs at least two active cells");

  const double bw = opt.bin_width > 0 ? opt.bin_width : g.cell_size;
  const double maxd =
      opt.max_distance > 0
          ? opt.max_distance
          : 0.5 * g.cell_size * std::hypot(g.nrow - 1.0, g.ncol - 1.0);
  const int nbins = static_cast<int>(std::floor(maxd / bw + 0.5));

  PairPlan plan;
  plan.centers.resize(nbins);
  for (int k = 0; k < nbins; ++k) plan.centers[k] = (k + 1) * bw;
  plan.counts = Eigen::VectorXi::Zero(nbins);
  if (nbins == 0) return plan;

  auto classify = [&](int ia, int ib) {
    auto [ra, ca] = g.rowcol(ia);
    auto [rb, cb] = g.rowcol(ib);
    double d = g.cell_size * std::hypot(double(ra - rb), double(ca - cb));
    int k = static_cast<int>(std::floor(d / bw + 0.5)) - 1;
    return (k >= 0 && k < nbins) ? k : -1;
  };

  const long total = nc * (nc - 1) / 2;
  if (total <= opt.pair_budget) {
    for (long i = 0; i < nc; ++i)
      for (long j = i + 1; j < nc; ++j) {
        int k = classify(cells[i], cells[j]);
        if (k < 0) continue;
        plan.a.push_back(cells[i]);
        plan.b.push_back(cells[j]);
        plan.bin.push_back(k);
        ++plan.counts[k];
      }
  } else {
    Rng rng(opt.seed);
    for (long s = 0; s < opt.pair_budget; ++s) {
      long i = static_cast<long>(rng.integer(nc));
      long j = static_cast<long>(rng.integer(nc - 1));
      if (j >= i) ++j;
      int k = classify(cells[i], cells[j]);
      if (k < 0) continue;
      plan.a.push_back(cells[i]);
      plan.b.push_back(cells[j]);
      plan.bin.push_back(k);
      ++plan.counts[k];
    }
  }
  return plan;
}

// per-bin semivariance of one field over a fixed plan; bins keep their slot
Eigen::VectorXd accumulate(const PairPlan& plan, const Eigen::VectorXd& f) {
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(plan.centers.size());
  for (std::size_t p = 0; p < plan.a.size(); ++p) {
    double d = f[plan.a[p]] - f[plan.b[p]];
    sums[plan.bin[p]] += d * d;
  }
  for (int k = 0; k < sums.size(); ++k)
    if (plan.counts[k] > 0) sums[k] *= 0.5 / plan.counts[k];
  return sums;
}

}  // namespace

Variogram empirical_variogram(const grid::RegularGrid& g,
                              const Eigen::VectorXd& field,
                              const std::vector<std::uint8_t>& mask,
                              const VariogramOptions& opt) {
  if (field.size() != g.cells())
    throw DataError("variogram field length does not match the grid");
  PairPlan plan = plan_pairs(g, mask, opt);
  Eigen::VectorXd gamma = accumulate(plan, field);

  Variogram out;
  const int kept = (plan.counts.array() > 0).count();
  out.bin_centers.resize(kept);
  out.semivariance.resize(kept);
  out.pair_counts.resize(kept);
  int w = 0;
  for (int k = 0; k < plan.centers.size(); ++k) {
    if (plan.counts[k] == 0) continue;
    out.bin_centers[w] = plan.centers[k];
    out.semivariance[w] = gamma[k];
    out.pair_counts[w] = plan.counts[k];
    ++w;
  }
  return out;
}

DiagnosticCurve discrepancy_diagnostic(const grid::RegularGrid& g,
                                       const std::vector<Eigen::VectorXd>& phi,
                                       const std::vector<Eigen::VectorXd>& L,
                                       const Eigen::VectorXd& beta1,
                                       const std::vector<std::uint8_t>& mask,
                                       const VariogramOptions& opt) {
  const int T = static_cast<int>(phi.size());
  if (T == 0) throw DataError("discrepancy diagnostic needs at least one draw");
  if (static_cast<int>(L.size()) != T || beta1.size() != T)
    throw DataError("discrepancy diagnostic draws are misaligned");
  for (int t = 0; t < T; ++t)
    if (phi[t].size() != g.cells() || L[t].size() != g.cells())
      throw DataError("diagnostic fields do not match the grid");

  PairPlan plan = plan_pairs(g, mask, opt);
  const int nb = static_cast<int>(plan.centers.size());
  Eigen::MatrixXd ratios(T, nb);
  for (int t = 0; t < T; ++t) {
    Eigen::VectorXd bl = beta1[t] * L[t];
    Eigen::VectorXd num = accumulate(plan, phi[t]);
    Eigen::VectorXd den = accumulate(plan, phi[t] + bl);
    den += accumulate(plan, bl);
    for (int k = 0; k < nb; ++k)
      ratios(t, k) = (plan.counts[k] > 0 && den[k] > 0.0) ? num[k] / den[k] : kNaN;
  }

  // keep bins that have pairs and a finite value in at least one draw
  DiagnosticCurve out;
  std::vector<int> keep;
  for (int k = 0; k < nb; ++k) {
    if (plan.counts[k] == 0) continue;
    int finite = 0;
    for (int t = 0; t < T; ++t)
      if (std::isfinite(ratios(t, k))) ++finite;
    if (finite > 0) keep.push_back(k);
  }
  out.bin_centers.resize(keep.size());
  out.mean_ratio.resize(keep.size());
  out.draw_ratios.resize(T, static_cast<int>(keep.size()));
  for (std::size_t w = 0; w < keep.size(); ++w) {
    const int k = keep[w];
    out.bin_centers[w] = plan.centers[k];
    double sum = 0.0;
    int finite = 0;
    for (int t = 0; t < T; ++t) {
      out.draw_ratios(t, w) = ratios(t, k);
      if (std::isfinite(ratios(t, k))) {
        sum += ratios(t, k);
        ++finite;
      }
    }
    out.mean_ratio[w] = sum / finite;
  }
  return out;
}

double mspe(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth,
            const std::vector<std::uint8_t>& mask) {
  if (predicted.size() != truth.size())
    throw DataError("prediction and truth lengths differ");
  if (!mask.empty() && static_cast<int>(mask.size()) != predicted.size())
    throw DataError("mask length does not match the predictions");
  double sum = 0.0;
  long n = 0;
  for (int i = 0; i < predicted.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    double d = predicted[i] - truth[i];
    sum += d * d;
    ++n;
  }
  if (n == 0) throw DataError("no cells selected for prediction error");
  return sum / n;
}

PredScore score_predictions(const Eigen::VectorXd& predicted_mean,
                            const Eigen::VectorXd& predicted_sd,
                            const Eigen::VectorXd& observed, double z) {
  const int n = static_cast<int>(observed.size());
  if (predicted_mean.size() != n || predicted_sd.size() != n)
    throw DataError("prediction vectors are misaligned");
  if (n == 0) throw DataError("nothing to score");

  PredScore s;
  s.rmspe = std::sqrt((predicted_mean - observed).squaredNorm() / n);
  double mp = predicted_mean.mean(), mo = observed.mean();
  Eigen::VectorXd cp = predicted_mean.array() - mp, co = observed.array() - mo;
  double vp = cp.squaredNorm(), vo = co.squaredNorm();
  if (vp > 0.0 && vo > 0.0) {
    double c = cp.dot(co);
    s.r2 = (c * c) / (vp * vo);
  }
  long inside = 0;
  for (int i = 0; i < n; ++i)
    if (std::abs(observed[i] - predicted_mean[i]) <= z * predicted_sd[i]) ++inside;
  s.coverage = static_cast<double>(inside) / n;
  return s;
}

namespace {

// observation-row subset of a spec; shared sites keep or lose their offset
// column as a unit since folds are formed by site
FusionModelSpec subset_obs(const FusionModelSpec& spec, const std::vector<int>& keep) {
  FusionModelSpec s = spec;
  const int nk = static_cast<int>(keep.size());
  const int py = static_cast<int>(spec.Zy.cols());
  s.y.resize(nk);
  s.n_days.resize(nk);
  s.colocated.assign(nk, 0);
  s.Zy.resize(nk, py);
  for (int i = 0; i < nk; ++i) {
    s.y[i] = spec.y[keep[i]];
    s.n_days[i] = spec.n_days[keep[i]];
    if (!spec.colocated.empty()) s.colocated[i] = spec.colocated[keep[i]];
    if (py > 0) s.Zy.row(i) = spec.Zy.row(keep[i]);
  }

  std::vector<Eigen::Triplet<double>> ty;
  for (int i = 0; i < nk; ++i)
    for (SparseRow::InnerIterator it(spec.P_Y, keep[i]); it; ++it)
      ty.emplace_back(i, it.col(), it.value());
  s.P_Y = SparseRow(nk, spec.P_Y.cols());
  s.P_Y.setFromTriplets(ty.begin(), ty.end());
  if (spec.joint_fields) {
    std::vector<Eigen::Triplet<double>> tc;
    for (int i = 0; i < nk; ++i)
      for (SparseRow::InnerIterator it(spec.P_Yc, keep[i]); it; ++it)
        tc.emplace_back(i, it.col(), it.value());
    s.P_Yc = SparseRow(nk, spec.P_Yc.cols());
    s.P_Yc.setFromTriplets(tc.begin(), tc.end());
  }

  // offset columns survive iff their rows survive (always all or none)
  const int q = spec.n_offsets();
  std::vector<int> newcol(q, -1);
  std::vector<Eigen::Triplet<double>> td;
  int qk = 0;
  for (int i = 0; i < nk; ++i)
    for (SparseRow::InnerIterator it(spec.P_delta, keep[i]); it; ++it) {
      if (newcol[it.col()] < 0) newcol[it.col()] = qk++;
      td.emplace_back(i, newcol[it.col()], it.value());
    }
  s.P_delta = SparseRow(nk, qk);
  s.P_delta.setFromTriplets(td.begin(), td.end());
  return s;
}

struct FoldOut {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
};

FoldOut run_fold(const FusionModelSpec& spec, const std::vector<int>& held,
                 const std::vector<int>& kept, const mcmc::ChainConfig& base,
                 std::uint64_t stream) {
  FusionModelSpec sub = subset_obs(spec, kept);
  mcmc::ChainConfig cfg = base;
  cfg.latent_stride = cfg.thin;  // one latent draw per retained state
  Rng rng(Rng::derive(base.seed, stream));
  mcmc::ChainOutput out = mcmc::run_chain(sub, cfg, rng);

  const int T = static_cast<int>(out.latents.size());
  if (T == 0 || out.theta.rows() != T)
    throw NumericError("cross-validation chain produced no aligned draws");

  // held rows scored as fresh sites: no offset information, full variance
  FusionModelSpec pred = subset_obs(spec, held);
  pred.colocated.assign(held.size(), 0);
  MarginalEvaluator sub_ev(sub);
  const std::vector<ParamDesc>& params = sub_ev.parameters();
  const int nh = static_cast<int>(held.size());
  const int py = static_cast<int>(spec.Zy.cols());
  const int pL = static_cast<int>(spec.ZL.cols());

  Eigen::VectorXd sum_mean = Eigen::VectorXd::Zero(nh);
  Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(nh);
  Eigen::VectorXd sum_var = Eigen::VectorXd::Zero(nh);
  HyperState th = sub_ev.initial_state();
  for (int t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < params.size(); ++i)
      set_param(th, params[i], out.theta(t, static_cast<int>(i)));
    const Eigen::VectorXd& b = out.latents[t].b;
    Eigen::VectorXd m = pred.P_Y * Eigen::VectorXd(spec.ZL * b.segment(py, pL));
    if (py > 0) m += pred.Zy * b.head(py);
    if (spec.joint_fields) m += pred.P_Yc * out.latents[t].g;
    sum_mean += m;
    sum_sq += m.cwiseProduct(m);
    sum_var += obs_variance(pred, th);
  }
  FoldOut fo;
  fo.mean = sum_mean / T;
  Eigen::VectorXd between = sum_sq / T - fo.mean.cwiseProduct(fo.mean);
  fo.sd = (sum_var / T + between.cwiseMax(0.0)).cwiseSqrt();
  return fo;
}

}  // namespace

CVResult cross_validate(const FusionModelSpec& spec, int folds,
                        const CVOptions& opt) {
  if (folds < 2) throw ConfigError("cross-validation needs at least two folds");
  const int n = spec.n_obs();

  // sites: one per offset column, then singletons for uncovered rows
  std::vector<std::vector<int>> sites(spec.n_offsets());
  std::vector<char> covered(n, 0);
  for (int i = 0; i < n; ++i)
    for (SparseRow::InnerIterator it(spec.P_delta, i); it; ++it) {
      sites[it.col()].push_back(i);
      covered[i] = 1;
    }
  for (int i = 0; i < n; ++i)
    if (!covered[i]) sites.push_back({i});
  const int ns = static_cast<int>(sites.size());
  if (ns < 2) throw DataError("cross-validation needs at least two sites");

  CVResult res;
  if (folds > ns) {
    res.warnings.push_back("more folds than sites; reduced to one site per fold");
    folds = ns;
  }

  // deterministic site shuffle, round-robin assignment
  std::vector<int> order(ns);
  for (int i = 0; i < ns; ++i) order[i] = i;
  Rng shuf(Rng::derive(opt.chain.seed, 0xCF01));
  shuf.shuffle(order);
  std::vector<std::vector<int>> fold_sites(folds);
  for (int i = 0; i < ns; ++i) fold_sites[i % folds].push_back(order[i]);

  // merge undersized folds into their predecessor
  for (int f = static_cast<int>(fold_sites.size()) - 1; f >= 0; --f) {
    if (fold_sites.size() <= 1) break;
    if (static_cast<int>(fold_sites[f].size()) >= 2) continue;
    int target = f > 0 ? f - 1 : 1;
    auto& dst = fold_sites[target];
    dst.insert(dst.end(), fold_sites[f].begin(), fold_sites[f].end());
    fold_sites.erase(fold_sites.begin() + f);
    res.warnings.push_back("fold with fewer than two sites merged into a neighbor");
  }
  const int nf = static_cast<int>(fold_sites.size());

  std::vector<std::vector<int>> held(nf), kept(nf);
  for (int f = 0; f < nf; ++f) {
    std::vector<char> out_row(n, 0);
    for (int sid : fold_sites[f])
      for (int row : sites[sid]) out_row[row] = 1;
    for (int i = 0; i < n; ++i) (out_row[i] ? held[f] : kept[f]).push_back(i);
  }

  std::vector<FoldOut> outs(nf);
  const int workers = std::max(1, opt.workers);
  for (int start = 0; start < nf; start += workers) {
    const int stop = std::min(nf, start + workers);
    std::vector<std::future<FoldOut>> wave;
    for (int f = start + 1; f < stop; ++f)
      wave.push_back(std::async(std::launch::async, [&, f] {
        return run_fold(spec, held[f], kept[f], opt.chain, 0xF0 + f);
      }));
    outs[start] = run_fold(spec, held[start], kept[start], opt.chain, 0xF0 + start);
    for (int f = start + 1; f < stop; ++f) outs[f] = wave[f - start - 1].get();
  }

  res.predicted_mean = Eigen::VectorXd::Constant(n, kNaN);
  res.predicted_sd = Eigen::VectorXd::Constant(n, kNaN);
  for (int f = 0; f < nf; ++f) {
    const int nh = static_cast<int>(held[f].size());
    Eigen::VectorXd obs(nh);
    for (int i = 0; i < nh; ++i) {
      obs[i] = spec.y[held[f][i]];
      res.predicted_mean[held[f][i]] = outs[f].mean[i];
      res.predicted_sd[held[f][i]] = outs[f].sd[i];
    }
    CVFold cf;
    cf.held_out_rows = held[f];
    cf.score = score_predictions(outs[f].mean, outs[f].sd, obs);
    res.folds.push_back(std::move(cf));
  }
  res.pooled = score_predictions(res.predicted_mean, res.predicted_sd, spec.y);
  return res;
}

}  // namespace diagnostics
}  // namespace spatfuse
