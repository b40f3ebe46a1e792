#include "spatfuse/study.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <future>
#include <limits>
#include <map>

#include "json.hpp"
#include "spatfuse/csv.hpp"
#include "spatfuse/diagnostics.hpp"
#include "spatfuse/errors.hpp"
#include "spatfuse/runner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace spatfuse {
namespace cli {

namespace {

const std::vector<std::string> kVariantOrder = {
    "full", "no_proxy", "no_discrepancy", "large_scale", "fix_beta1", "proxy_covariate"};

int variant_code(const std::string& v) {
  auto it = std::find(kVariantOrder.begin(), kVariantOrder.end(), v);
  if (it == kVariantOrder.end()) throw ConfigError("unknown study variant: " + v);
  return static_cast<int>(it - kVariantOrder.begin());
}

ModelOptions variant_options(const ModelOptions& base, const std::string& v) {
  ModelOptions o = base;
  o.include_proxy = true;
  o.include_discrepancy = true;
  o.proxy_as_covariate = false;
  o.fix_kappa = 0.0;
  o.fix_beta1 = false;
  o.joint_field = false;
  if (v == "no_proxy") {
    o.include_proxy = false;
  } else if (v == "no_discrepancy") {
    o.include_discrepancy = false;
  } else if (v == "large_scale") {
    o.fix_kappa = 1000.0;
  } else if (v == "fix_beta1") {
    o.fix_beta1 = true;
    o.beta1_value = 1.0;
  } else if (v == "proxy_covariate") {
    o.proxy_as_covariate = true;
  }
  return o;
}

struct JobOut {
  double mspe = std::numeric_limits<double>::quiet_NaN();
  std::string error;
};

JobOut fit_replicate(const sim::ReplicateData& rep, const ModelOptions& opt,
                     mcmc::ChainConfig chain, std::uint64_t seed) {
  JobOut out;
  try {
    RawData data = from_replicate(rep);
    Problem prob = build_problem(data, opt);
    chain.seed = seed;
    Rng rng(seed);
    FitResult fr = run_fit(prob, chain, rng);
    std::vector<std::uint8_t> land(prob.grid.cells());
    for (int i = 0; i < prob.grid.cells(); ++i) land[i] = prob.grid.is_land(i) ? 1 : 0;
    out.mspe = diagnostics::mspe(fr.field_mean, data.truth, land);
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

struct MeanSe {
  int n = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
};

MeanSe mean_se(const std::vector<double>& v) {
  MeanSe r;
  double s = 0.0;
  for (double x : v)
    if (std::isfinite(x)) {
      s += x;
      ++r.n;
    }
  if (r.n == 0) return r;
  r.mean = s / r.n;
  if (r.n >= 2) {
    double ss = 0.0;
    for (double x : v)
      if (std::isfinite(x)) {
        double d = x - r.mean;
        ss += d * d;
      }
    r.se = std::sqrt(ss / (r.n - 1)) / std::sqrt(static_cast<double>(r.n));
  }
  return r;
}

}  // namespace

StudyResult run_study(const RunConfig& cfg) {
  if (cfg.chain.latent_stride <= 0)
    throw ConfigError("simulate-study requires chain.latent_stride > 0");
  const StudyOptions& st = cfg.study;
  StudyResult res;

  ModelOptions base = cfg.model;
  if (base.joint_field) {
    res.warnings.push_back(
        "study fits share the low-rank field representation across variants; "
        "model.joint_field is ignored");
    base.joint_field = false;
  }

  const int R = st.replicates;
  const auto& scen = st.scenarios;
  const auto& vars = st.variants;

  // scenarios below 6 share observations, so the proxy-free fit is shared
  int shared_scen = 0;
  for (int s : scen)
    if (s <= 5 && (shared_scen == 0 || s < shared_scen)) shared_scen = s;

  for (const auto& v : vars)
    for (int s : scen) {
      StudyCell c;
      c.scenario = s;
      c.variant = v;
      c.mspe.assign(R, std::numeric_limits<double>::quiet_NaN());
      res.cells.push_back(std::move(c));
    }
  auto cell_at = [&](const std::string& v, int s) -> StudyCell& {
    for (auto& c : res.cells)
      if (c.variant == v && c.scenario == s) return c;
    throw std::logic_error("study cell lookup");
  };

  struct Job {
    int scenario = 0;
    std::string variant;
    std::uint64_t seed = 0;
    const sim::ReplicateData* data = nullptr;
  };

  for (int rep = 0; rep < R; ++rep) {
    const std::uint64_t data_seed = Rng::derive(cfg.seed, 0xDA7A00 + rep);
    std::map<int, sim::ReplicateData> data;
    for (int s : scen)
      if (!data.count(s)) {
        sim::ScenarioConfig sc;
        sc.scenario = s;
        sc.nrow = st.nrow;
        sc.ncol = st.ncol;
        sc.n_obs = s == 6 ? -1 : st.n_obs;
        sc.seed = data_seed;
        Rng rng(data_seed);
        data.emplace(s, sim::generate_scenario(sc, rng));
      }

    std::vector<Job> jobs;
    for (const auto& v : vars) {
      const bool shared = v == "no_proxy";
      for (int s : scen) {
        if (shared && s <= 5 && s != shared_scen) continue;
        Job j;
        j.scenario = s;
        j.variant = v;
        std::uint64_t code =
            static_cast<std::uint64_t>((rep * 7 + s) * 16 + variant_code(v));
        j.seed = Rng::derive(cfg.seed, 0xC4A100 + code);
        j.data = &data.at(s);
        jobs.push_back(std::move(j));
      }
    }

    const int workers = std::max(1, st.workers);
    for (std::size_t base_i = 0; base_i < jobs.size(); base_i += workers) {
      const std::size_t hi = std::min(jobs.size(), base_i + workers);
      std::vector<std::future<JobOut>> futs;
      for (std::size_t i = base_i + 1; i < hi; ++i) {
        const Job& j = jobs[i];
        ModelOptions opt = variant_options(base, j.variant);
        futs.push_back(std::async(std::launch::async, fit_replicate, std::cref(*j.data),
                                  opt, cfg.chain, j.seed));
      }
      std::vector<JobOut> outs;
      outs.push_back(
          fit_replicate(*jobs[base_i].data, variant_options(base, jobs[base_i].variant),
                        cfg.chain, jobs[base_i].seed));
      for (auto& f : futs) outs.push_back(f.get());

      for (std::size_t i = base_i; i < hi; ++i) {
        const Job& j = jobs[i];
        const JobOut& o = outs[i - base_i];
        if (!o.error.empty())
          res.failures.push_back({j.scenario, j.variant, rep, o.error});
        if (j.variant == "no_proxy" && j.scenario <= 5) {
          for (int s : scen)
            if (s <= 5) cell_at(j.variant, s).mspe[rep] = o.mspe;
        } else {
          cell_at(j.variant, j.scenario).mspe[rep] = o.mspe;
        }
      }
    }
  }
  return res;
}

int cmd_simulate_study(const RunConfig& cfg) {
  StudyResult res = run_study(cfg);
  fs::create_directories(cfg.output_dir);

  {
    CsvWriter w({"variant", "scenario", "replicates", "failures", "mean_mspe", "se_mspe"});
    for (const auto& c : res.cells) {
      MeanSe ms = mean_se(c.mspe);
      w.append_raw({c.variant, std::to_string(c.scenario), std::to_string(ms.n),
                    std::to_string(static_cast<int>(c.mspe.size()) - ms.n),
                    format_double(ms.mean), format_double(ms.se)});
    }
    w.write_file((fs::path(cfg.output_dir) / "study_mspe.csv").string());
  }

  {
    CsvWriter w({"scenario", "variant_a", "variant_b", "pairs", "mean_diff", "se_diff"});
    const auto& vars = cfg.study.variants;
    for (int s : cfg.study.scenarios)
      for (std::size_t i = 0; i < vars.size(); ++i)
        for (std::size_t j = i + 1; j < vars.size(); ++j) {
          const StudyCell* a = nullptr;
          const StudyCell* b = nullptr;
          for (const auto& c : res.cells) {
            if (c.scenario != s) continue;
            if (c.variant == vars[i]) a = &c;
            if (c.variant == vars[j]) b = &c;
          }
          std::vector<double> diffs;
          for (std::size_t r = 0; r < a->mspe.size(); ++r)
            if (std::isfinite(a->mspe[r]) && std::isfinite(b->mspe[r]))
              diffs.push_back(a->mspe[r] - b->mspe[r]);
          if (diffs.empty()) continue;
          MeanSe ms = mean_se(diffs);
          w.append_raw({std::to_string(s), vars[i], vars[j], std::to_string(ms.n),
                        format_double(ms.mean), format_double(ms.se)});
        }
    w.write_file((fs::path(cfg.output_dir) / "study_paired.csv").string());
  }

  {
    CsvWriter w({"scenario", "variant", "replicate", "message"});
    for (const auto& f : res.failures) {
      std::string msg = f.message;
      for (char& ch : msg)
        if (ch == ',' || ch == '\n') ch = ';';
      w.append_raw({std::to_string(f.scenario), f.variant, std::to_string(f.replicate),
                    msg});
    }
    w.write_file((fs::path(cfg.output_dir) / "study_failures.csv").string());
  }

  json man;
  man["command"] = "simulate-study";
  man["config"] = json::parse(cfg.to_json());
  man["outputs"] = {"study_mspe.csv", "study_paired.csv", "study_failures.csv",
                    "manifest.json"};
  man["warnings"] = res.warnings;
  write_text_file((fs::path(cfg.output_dir) / "manifest.json").string(),
                  man.dump(2) + "\n");
  return 0;
}

}  // namespace cli
}  // namespace spatfuse
