#include "spatfuse/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "spatfuse/errors.hpp"

namespace spatfuse {
namespace mcmc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// variance components move as log standard deviations, smoothing precisions
// as log precisions, the proxy coefficient on its natural axis
double to_chain(const ParamDesc& d, double natural) {
  switch (d.field) {
    case ThetaField::Beta1:
      return natural;
    case ThetaField::Kappa:
    case ThetaField::KappaG:
      return std::log(natural);
    default:
      return 0.5 * std::log(natural);
  }
}

double from_chain(const ParamDesc& d, double t) {
  switch (d.field) {
    case ThetaField::Beta1:
      return t;
    case ThetaField::Kappa:
    case ThetaField::KappaG:
      return std::exp(t);
    default:
      return std::exp(2.0 * t);
  }
}

double log_jacobian(const ParamDesc& d, double t) {
  switch (d.field) {
    case ThetaField::Beta1:
      return 0.0;
    case ThetaField::Kappa:
    case ThetaField::KappaG:
      return t;
    default:
      return std::log(2.0) + 2.0 * t;
  }
}

// bounded adaptation: through a flat stretch of posterior the acceptance
// recursion would otherwise inflate the proposal without limit, teleport the
// block onto a ridge it cannot leave, and freeze the chain there
constexpr double kScaleLogBelow = 6.9;  // scale may fall to 1/1000 of seed
constexpr double kScaleLogAbove = 2.3;  // and rise to 10x the seed
constexpr double kCovAxisCap = 25.0;    // adapted variance cap per axis

struct Block {
  std::vector<int> idx;
  double log_scale = 0.0;
  double log_scale0 = 0.0;
  long updates = 0;  // adaptation clock
  long proposals = 0;
  long accepts = 0;
  Eigen::VectorXd mu;
  Eigen::MatrixXd cov;
  Eigen::MatrixXd chol;  // lower factor of cov, refreshed lazily
  bool dirty = true;

  void refresh() {
    if (!dirty) return;
    const int d = static_cast<int>(idx.size());
    Eigen::LLT<Eigen::MatrixXd> llt(cov + 1e-12 * Eigen::MatrixXd::Identity(d, d));
    chol = llt.matrixL();
    dirty = false;
  }
};

std::string dump_state(const std::vector<ParamDesc>& params,
                       const HyperState& th, long iteration) {
  std::ostringstream os;
  os << " at iteration " << iteration << "; state:";
  for (const auto& d : params) os << " " << d.name << "=" << get_param(th, d);
  return os.str();
}

}  // namespace

std::vector<std::vector<std::string>> default_blocks(const FusionModelSpec& spec) {
  std::vector<std::string> obs, noise, smooth, structure;
  for (const auto& d : active_parameters(spec)) {
    switch (d.field) {
      case ThetaField::SigmaH:
      case ThetaField::SigmaSub:
        obs.push_back(d.name);
        break;
      case ThetaField::SigmaA:
      case ThetaField::SigmaAlpha:
        noise.push_back(d.name);
        break;
      case ThetaField::Smooth:
        smooth.push_back(d.name);
        break;
      default:
        structure.push_back(d.name);
        break;
    }
  }
  std::vector<std::vector<std::string>> out;
  for (auto* fam : {&obs, &noise, &smooth, &structure})
    if (!fam->empty()) out.push_back(*fam);
  return out;
}

EssResult effective_sample_size(const Eigen::VectorXd& trace) {
  const int n = static_cast<int>(trace.size());
  if (n < 50) throw DataError("trace too short for autocorrelation estimation");
  if (trace.maxCoeff() == trace.minCoeff()) return {0.0, true};

  Eigen::VectorXd c = trace.array() - trace.mean();
  const double g0 = c.squaredNorm() / n;
  auto gamma = [&](int k) { return c.head(n - k).dot(c.tail(n - k)) / n; };

  // sum of positive, monotone non-increasing lag-pair autocovariances
  double total = 0.0;
  double prev = std::numeric_limits<double>::max();
  for (int m = 0; 2 * m + 1 < n; ++m) {
    double pair = gamma(2 * m) + gamma(2 * m + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev);
    total += pair;
    prev = pair;
  }
  double tau = 2.0 * total / g0 - 1.0;
  tau = std::max(tau, 1e-3);  // antithetic traces still get a finite answer
  return {static_cast<double>(n) / tau, false};
}

ChainOutput run_chain(const FusionModelSpec& spec, const ChainConfig& config,
                      Rng& rng) {
  if (config.burn_in < 0 || config.post_burn <= 0 || config.thin <= 0)
    throw ConfigError("chain lengths must be positive");
  if (config.post_burn % config.thin != 0)
    throw ConfigError("thinning stride must divide the sampling length");

  MarginalEvaluator ev(spec);
  const std::vector<ParamDesc>& params = ev.parameters();
  const int np = static_cast<int>(params.size());
  const int q = spec.n_offsets();

  // resolve the block partition onto parameter indices
  std::vector<std::vector<std::string>> names =
      config.blocks.empty() ? default_blocks(spec) : config.blocks;
  std::vector<Block> blocks;
  std::set<int> seen;
  for (const auto& group : names) {
    Block b;
    for (const auto& name : group) {
      int found = -1;
      for (int i = 0; i < np; ++i)
        if (params[i].name == name) found = i;
      if (found < 0) throw ConfigError("unknown parameter in block layout: " + name);
      if (!seen.insert(found).second)
        throw ConfigError("parameter assigned to two blocks: " + name);
      b.idx.push_back(found);
    }
    const int d = static_cast<int>(b.idx.size());
    b.log_scale = std::log(2.38 / std::sqrt(static_cast<double>(d)));
    b.log_scale0 = b.log_scale;
    b.mu = Eigen::VectorXd::Zero(d);
    b.cov = 0.04 * Eigen::MatrixXd::Identity(d, d);
    blocks.push_back(std::move(b));
  }
  if (static_cast<int>(seen.size()) != np)
    throw ConfigError("block layout does not cover every active parameter");

  HyperState th = config.init ? *config.init : ev.initial_state();
  if (th.delta.size() != q) {
    if (th.delta.size() != 0)
      throw ConfigError("initial offset vector has the wrong length");
    th.delta = Eigen::VectorXd::Zero(q);
  }
  if (th.smooth_var.size() != spec.n_smooth())
    throw ConfigError("initial smooth-variance vector has the wrong length");

  Eigen::VectorXd t(np);
  for (int i = 0; i < np; ++i) t[i] = to_chain(params[i], get_param(th, params[i]));

  auto log_target = [&](const HyperState& state, const Eigen::VectorXd& tv) {
    double lp = ev.log_marginal_posterior(state);
    if (lp == kNegInf) return kNegInf;
    for (int i = 0; i < np; ++i) lp += log_jacobian(params[i], tv[i]);
    return lp;
  };

  double lp = log_target(th, t);
  if (!std::isfinite(lp))
    throw NumericError("initial state has non-finite posterior density" +
                       dump_state(params, th, 0));

  const long total = static_cast<long>(config.burn_in) + config.post_burn;
  const int rows = config.post_burn / config.thin;
  ChainOutput out;
  for (const auto& d : params) out.param_names.push_back(d.name);
  out.theta.resize(rows, np);
  out.delta.resize(rows, q);

  for (long iter = 1; iter <= total; ++iter) {
    const bool warm = iter <= config.burn_in;
    const bool adapting = warm || config.adapt_after_burn_in;

    for (auto& b : blocks) {
      const int d = static_cast<int>(b.idx.size());
      b.refresh();
      Eigen::VectorXd z(d);
      for (int i = 0; i < d; ++i) z[i] = rng.normal();
      Eigen::VectorXd step = std::exp(b.log_scale) * (b.chol * z);

      Eigen::VectorXd t_prop = t;
      HyperState th_prop = th;
      for (int i = 0; i < d; ++i) {
        t_prop[b.idx[i]] += step[i];
        set_param(th_prop, params[b.idx[i]],
                  from_chain(params[b.idx[i]], t_prop[b.idx[i]]));
      }
      double lp_prop = log_target(th_prop, t_prop);
      if (std::isnan(lp_prop))
        throw NumericError("non-finite marginal posterior" +
                           dump_state(params, th_prop, iter));

      double lr = lp_prop - lp;
      double acc_prob = lr >= 0.0 ? 1.0 : std::exp(lr);
      if (rng.uniform() < acc_prob) {
        t = t_prop;
        th = th_prop;
        lp = lp_prop;
        if (!warm) ++b.accepts;
      }
      if (!warm) ++b.proposals;

      if (adapting) {
        ++b.updates;
        double g = std::pow(static_cast<double>(b.updates), -0.6);
        b.log_scale += g * (acc_prob - config.target_acceptance);
        b.log_scale = std::clamp(b.log_scale, b.log_scale0 - kScaleLogBelow,
                                 b.log_scale0 + kScaleLogAbove);
        Eigen::VectorXd x(d);
        for (int i = 0; i < d; ++i) x[i] = t[b.idx[i]];
        b.mu += g * (x - b.mu);
        b.cov += g * ((x - b.mu) * (x - b.mu).transpose() - b.cov);
        double tr = b.cov.trace();
        if (tr > kCovAxisCap * d) b.cov *= kCovAxisCap * d / tr;
        b.dirty = true;
      }
    }

    if (q > 0) {
      th.delta = ev.sample_delta(th, rng);
      lp = log_target(th, t);
    }

    if (!warm) {
      const long k = iter - config.burn_in;
      if (k % config.thin == 0) {
        const long row = k / config.thin - 1;
        for (int i = 0; i < np; ++i) out.theta(row, i) = get_param(th, params[i]);
        if (q > 0) out.delta.row(row) = th.delta.transpose();
      }
      if (config.latent_stride > 0 && k % config.latent_stride == 0) {
        LatentDraws ld = ev.sample_latents(th, rng);
        ld.draw_index = iter;
        out.latents.push_back(std::move(ld));
      }
    }
  }

  for (const auto& b : blocks) {
    BlockStats s;
    for (int i : b.idx) s.names.push_back(params[i].name);
    s.proposals = b.proposals;
    s.accepts = b.accepts;
    s.acceptance_rate =
        b.proposals > 0 ? static_cast<double>(b.accepts) / b.proposals : 0.0;
    s.scale = std::exp(b.log_scale);
    out.blocks.push_back(std::move(s));
  }

  out.ess = Eigen::VectorXd::Zero(np);
  if (rows >= 50)
    for (int i = 0; i < np; ++i)
      out.ess[i] = effective_sample_size(out.theta.col(i)).ess;
  return out;
}

}  // namespace mcmc
}  // namespace spatfuse
