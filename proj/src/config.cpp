#include "spatfuse/config.hpp"

#include <algorithm>
#include <filesystem>
#include <initializer_list>

#include "json.hpp"
#include "spatfuse/csv.hpp"
#include "spatfuse/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace spatfuse {
namespace cli {

namespace {

std::string joined(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void check_keys(const json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw ConfigError("config section " + (path.empty() ? std::string("<top>") : path) +
                      " must be an object");
  for (const auto& item : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(),
                     [&](const char* a) { return item.key() == a; }))
      throw ConfigError("unknown config key: " + joined(path, item.key()));
  }
}

template <typename T>
void read_to(const json& j, const std::string& path, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key " + joined(path, key) + " has the wrong type");
  }
}

void apply_override(json& doc, const std::string& item) {
  auto eq = item.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key.path=value: " + item);
  std::string key = item.substr(0, eq);
  std::string val = item.substr(eq + 1);
  std::string ptr = "/" + key;
  std::replace(ptr.begin(), ptr.end(), '.', '/');
  json v;
  try {
    v = json::parse(val);
  } catch (const json::exception&) {
    v = val;  // bare strings need no quoting on the command line
  }
  try {
    doc[json::json_pointer(ptr)] = v;
  } catch (const json::exception& e) {
    throw ConfigError("cannot apply override " + item + ": " + e.what());
  }
}

std::string resolve(const std::string& p, const std::string& base) {
  if (p.empty()) return p;
  fs::path fp(p);
  if (fp.is_absolute()) return fp.lexically_normal().string();
  return (fs::path(base) / fp).lexically_normal().string();
}

RunConfig parse_document(json doc, const std::string& origin, const std::string& base,
                         const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) apply_override(doc, item);

  RunConfig c;
  check_keys(doc, "", {"seed", "output_dir", "data", "model", "chain", "variogram",
                       "study", "cv", "predict"});
  read_to(doc, "", "seed", c.seed);
  read_to(doc, "", "output_dir", c.output_dir);

  if (doc.contains("data")) {
    const json& d = doc["data"];
    check_keys(d, "data", {"grid", "observations", "covariates", "proxy", "truth"});
    read_to(d, "data", "grid", c.data.grid);
    read_to(d, "data", "observations", c.data.observations);
    read_to(d, "data", "covariates", c.data.covariates);
    read_to(d, "data", "proxy", c.data.proxy);
    read_to(d, "data", "truth", c.data.truth);
  }

  if (doc.contains("model")) {
    const json& m = doc["model"];
    check_keys(m, "model",
               {"include_proxy", "include_discrepancy", "proxy_as_covariate",
                "joint_field", "orthogonalize", "fix_kappa", "fix_beta1", "beta1_value",
                "discrepancy_prior", "knots", "obs_covariates", "grid_covariates"});
    read_to(m, "model", "include_proxy", c.model.include_proxy);
    read_to(m, "model", "include_discrepancy", c.model.include_discrepancy);
    read_to(m, "model", "proxy_as_covariate", c.model.proxy_as_covariate);
    read_to(m, "model", "joint_field", c.model.joint_field);
    read_to(m, "model", "orthogonalize", c.model.orthogonalize);
    read_to(m, "model", "fix_kappa", c.model.fix_kappa);
    read_to(m, "model", "fix_beta1", c.model.fix_beta1);
    read_to(m, "model", "beta1_value", c.model.beta1_value);
    read_to(m, "model", "discrepancy_prior", c.model.discrepancy_prior);
    read_to(m, "model", "knots", c.model.knots);
    read_to(m, "model", "obs_covariates", c.model.obs_covariates);
    read_to(m, "model", "grid_covariates", c.model.grid_covariates);
  }

  if (doc.contains("chain")) {
    const json& ch = doc["chain"];
    check_keys(ch, "chain", {"burn_in", "post_burn", "thin", "latent_stride",
                             "adapt_after_burn_in", "target_acceptance", "blocks"});
    read_to(ch, "chain", "burn_in", c.chain.burn_in);
    read_to(ch, "chain", "post_burn", c.chain.post_burn);
    read_to(ch, "chain", "thin", c.chain.thin);
    read_to(ch, "chain", "latent_stride", c.chain.latent_stride);
    read_to(ch, "chain", "adapt_after_burn_in", c.chain.adapt_after_burn_in);
    read_to(ch, "chain", "target_acceptance", c.chain.target_acceptance);
    read_to(ch, "chain", "blocks", c.chain.blocks);
  }

  if (doc.contains("variogram")) {
    const json& v = doc["variogram"];
    check_keys(v, "variogram", {"bin_width", "max_distance", "pair_budget"});
    read_to(v, "variogram", "bin_width", c.variogram.bin_width);
    read_to(v, "variogram", "max_distance", c.variogram.max_distance);
    read_to(v, "variogram", "pair_budget", c.variogram.pair_budget);
  }

  if (doc.contains("study")) {
    const json& s = doc["study"];
    check_keys(s, "study", {"scenarios", "variants", "replicates", "nrow", "ncol",
                            "n_obs", "workers"});
    read_to(s, "study", "scenarios", c.study.scenarios);
    read_to(s, "study", "variants", c.study.variants);
    read_to(s, "study", "replicates", c.study.replicates);
    read_to(s, "study", "nrow", c.study.nrow);
    read_to(s, "study", "ncol", c.study.ncol);
    read_to(s, "study", "n_obs", c.study.n_obs);
    read_to(s, "study", "workers", c.study.workers);
  }

  if (doc.contains("cv")) {
    const json& v = doc["cv"];
    check_keys(v, "cv", {"folds", "workers"});
    read_to(v, "cv", "folds", c.cv_folds);
    read_to(v, "cv", "workers", c.cv_workers);
  }

  if (doc.contains("predict")) {
    const json& p = doc["predict"];
    check_keys(p, "predict", {"cells"});
    read_to(p, "predict", "cells", c.predict_cells);
  }

  c.data.grid = resolve(c.data.grid, base);
  c.data.observations = resolve(c.data.observations, base);
  c.data.covariates = resolve(c.data.covariates, base);
  c.data.proxy = resolve(c.data.proxy, base);
  c.data.truth = resolve(c.data.truth, base);
  c.output_dir = resolve(c.output_dir, base);
  c.predict_cells = resolve(c.predict_cells, base);
  c.chain.seed = c.seed;
  c.variogram.seed = Rng::derive(c.seed, 0xD1A6);

  // consistency checks, all before any data is touched
  if (c.model.proxy_as_covariate && !c.model.include_proxy)
    throw ConfigError("model.proxy_as_covariate requires model.include_proxy");
  if (c.model.joint_field && (!c.model.include_proxy || c.model.proxy_as_covariate))
    throw ConfigError("model.joint_field requires the two-likelihood form");
  if (c.model.discrepancy_prior != "tps" && c.model.discrepancy_prior != "car")
    throw ConfigError("model.discrepancy_prior must be tps or car");
  if (c.model.fix_kappa < 0) throw ConfigError("model.fix_kappa cannot be negative");
  if (c.model.knots < 0) throw ConfigError("model.knots cannot be negative");
  if (c.chain.burn_in < 0 || c.chain.post_burn <= 0 || c.chain.thin <= 0)
    throw ConfigError("chain lengths must be positive (burn_in may be zero)");
  if (c.chain.post_burn % c.chain.thin != 0)
    throw ConfigError("chain.thin must divide chain.post_burn");
  if (c.chain.latent_stride < 0) throw ConfigError("chain.latent_stride cannot be negative");
  if (!(c.chain.target_acceptance > 0) || !(c.chain.target_acceptance < 1))
    throw ConfigError("chain.target_acceptance must lie in (0, 1)");
  if (c.variogram.pair_budget <= 0) throw ConfigError("variogram.pair_budget must be positive");
  for (int s : c.study.scenarios)
    if (s < 1 || s > 6) throw ConfigError("study.scenarios entries must lie in 1..6");
  if (c.study.scenarios.empty()) throw ConfigError("study.scenarios cannot be empty");
  for (const auto& v : c.study.variants)
    if (v != "full" && v != "no_proxy" && v != "no_discrepancy" && v != "large_scale" &&
        v != "fix_beta1" && v != "proxy_covariate")
      throw ConfigError("unknown study variant: " + v);
  if (c.study.variants.empty()) throw ConfigError("study.variants cannot be empty");
  if (c.study.replicates < 1) throw ConfigError("study.replicates must be positive");
  if (c.study.workers < 1 || c.cv_workers < 1)
    throw ConfigError("worker counts must be positive");
  if (c.cv_folds < 2) throw ConfigError("cv.folds must be at least 2");
  (void)origin;
  return c;
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path,
                               const std::vector<std::string>& overrides) {
  std::string text = read_text_file(path);
  std::string base = fs::path(path).parent_path().string();
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_document(std::move(doc), path, base, overrides);
}

RunConfig RunConfig::from_text(const std::string& text, const std::string& origin,
                               const std::vector<std::string>& overrides) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return parse_document(std::move(doc), origin, "", overrides);
}

std::string RunConfig::to_json() const {
  json doc;
  doc["seed"] = seed;
  doc["output_dir"] = output_dir;
  doc["data"] = {{"grid", data.grid},
                 {"observations", data.observations},
                 {"covariates", data.covariates},
                 {"proxy", data.proxy},
                 {"truth", data.truth}};
  doc["model"] = {{"include_proxy", model.include_proxy},
                  {"include_discrepancy", model.include_discrepancy},
                  {"proxy_as_covariate", model.proxy_as_covariate},
                  {"joint_field", model.joint_field},
                  {"orthogonalize", model.orthogonalize},
                  {"fix_kappa", model.fix_kappa},
                  {"fix_beta1", model.fix_beta1},
                  {"beta1_value", model.beta1_value},
                  {"discrepancy_prior", model.discrepancy_prior},
                  {"knots", model.knots},
                  {"obs_covariates", model.obs_covariates},
                  {"grid_covariates", model.grid_covariates}};
  doc["chain"] = {{"burn_in", chain.burn_in},
                  {"post_burn", chain.post_burn},
                  {"thin", chain.thin},
                  {"latent_stride", chain.latent_stride},
                  {"adapt_after_burn_in", chain.adapt_after_burn_in},
                  {"target_acceptance", chain.target_acceptance},
                  {"blocks", chain.blocks}};
  doc["variogram"] = {{"bin_width", variogram.bin_width},
                      {"max_distance", variogram.max_distance},
                      {"pair_budget", variogram.pair_budget}};
  doc["study"] = {{"scenarios", study.scenarios}, {"variants", study.variants},
                  {"replicates", study.replicates}, {"nrow", study.nrow},
                  {"ncol", study.ncol},             {"n_obs", study.n_obs},
                  {"workers", study.workers}};
  doc["cv"] = {{"folds", cv_folds}, {"workers", cv_workers}};
  doc["predict"] = {{"cells", predict_cells}};
  return doc.dump(2) + "\n";
}

}  // namespace cli
}  // namespace spatfuse
