#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "spatfuse/config.hpp"
#include "spatfuse/csv.hpp"
#include "spatfuse/errors.hpp"
#include "spatfuse/runner.hpp"
#include "spatfuse/sim.hpp"
#include "spatfuse/study.hpp"

using namespace spatfuse;
using namespace spatfuse::cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("spatfuse_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

sim::ReplicateData tiny_replicate(int scenario = 1) {
  sim::ScenarioConfig sc;
  sc.scenario = scenario;
  sc.nrow = 24;
  sc.ncol = 16;
  sc.n_obs = 25;
  Rng rng(901);
  return sim::generate_scenario(sc, rng);
}

// data files plus a fit-ready config; paths inside the config are relative
// to the config file, so the whole directory is self-contained
json base_config(const fs::path& dir, const sim::ReplicateData& rep) {
  sim::write_replicate(rep, dir.string());
  json cfg;
  cfg["seed"] = 77;
  cfg["output_dir"] = "out";
  cfg["data"]["grid"] = "grid.csv";
  cfg["data"]["observations"] = "observations.csv";
  cfg["data"]["covariates"] = "covariates.csv";
  cfg["data"]["proxy"] = "proxy.csv";
  cfg["data"]["truth"] = "truth.csv";
  cfg["model"]["knots"] = 20;
  cfg["chain"]["burn_in"] = 40;
  cfg["chain"]["post_burn"] = 40;
  cfg["chain"]["thin"] = 5;
  cfg["chain"]["latent_stride"] = 5;
  return cfg;
}

std::string write_config(const fs::path& dir, const json& cfg,
                         const std::string& name = "run.json") {
  fs::path p = dir / name;
  write_text_file(p.string(), cfg.dump(2) + "\n");
  return p.string();
}

int run_cli(const std::string& args) {
  const char* bin = std::getenv("SPATFUSE_BIN");
  REQUIRE(bin != nullptr);
  std::string cmd = std::string(bin) + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("config files parse, validate, and round-trip") {
  SUBCASE("defaults and round trip") {
    RunConfig c = RunConfig::from_text("{}", "<test>");
    CHECK(c.seed == 1);
    CHECK(c.model.include_proxy);
    CHECK(c.chain.burn_in == 10000);
    CHECK(c.chain.seed == c.seed);
    RunConfig c2 = RunConfig::from_text(c.to_json(), "<test>");
    CHECK(c2.to_json() == c.to_json());
  }

  SUBCASE("unknown and mistyped keys are refused") {
    CHECK_THROWS_WITH_AS(RunConfig::from_text(R"({"sede": 3})", "<test>"),
                         doctest::Contains("unknown config key"), ConfigError);
    CHECK_THROWS_WITH_AS(RunConfig::from_text(R"({"model": {"knot_count": 1}})", "<test>"),
                         doctest::Contains("unknown config key"), ConfigError);
    CHECK_THROWS_WITH_AS(RunConfig::from_text(R"({"seed": "abc"})", "<test>"),
                         doctest::Contains("wrong type"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text(R"({"chain": {"thin": "x"}})", "<test>"),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text("{not json", "<test>"), ConfigError);
  }

  SUBCASE("consistency checks") {
    CHECK_THROWS_AS(RunConfig::from_text(
                        R"({"model": {"include_proxy": false, "proxy_as_covariate": true}})",
                        "<test>"),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text(
                        R"({"model": {"include_proxy": false, "joint_field": true}})",
                        "<test>"),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text(
                        R"({"model": {"discrepancy_prior": "gp"}})", "<test>"),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text(
                        R"({"chain": {"post_burn": 25, "thin": 10}})", "<test>"),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text(R"({"study": {"scenarios": [0]}})", "<test>"),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text(R"({"study": {"variants": ["fullest"]}})",
                                         "<test>"),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text(R"({"cv": {"folds": 1}})", "<test>"),
                    ConfigError);
  }

  SUBCASE("overrides take json or bare-string values") {
    std::vector<std::string> sets = {"chain.burn_in=500", "model.discrepancy_prior=car",
                                     "study.scenarios=[2,3]", "output_dir=elsewhere"};
    RunConfig c = RunConfig::from_text("{}", "<test>", sets);
    CHECK(c.chain.burn_in == 500);
    CHECK(c.model.discrepancy_prior == "car");
    CHECK(c.study.scenarios == std::vector<int>{2, 3});
    CHECK(c.output_dir == "elsewhere");
    CHECK_THROWS_AS(RunConfig::from_text("{}", "<test>", {"chainburn_in=5"}),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text("{}", "<test>", {"chain.burn_in"}),
                    ConfigError);
  }

  SUBCASE("relative paths resolve against the config directory") {
    fs::path dir = fresh_dir("paths");
    json cfg;
    cfg["data"]["grid"] = "g.csv";
    cfg["data"]["truth"] = "/elsewhere/t.csv";
    RunConfig c = RunConfig::from_file(write_config(dir, cfg));
    CHECK(c.data.grid == (dir / "g.csv").string());
    CHECK(c.data.truth == "/elsewhere/t.csv");
    CHECK(c.output_dir == (dir / "out").string());
  }
}

TEST_CASE("problem assembly from raw data") {
  sim::ReplicateData rep = tiny_replicate();
  RawData data = from_replicate(rep);
  const int m = data.grid.cells();

  SUBCASE("design layout and centering") {
    ModelOptions opt;
    opt.knots = 20;
    Problem p = build_problem(data, opt);
    const int nk = static_cast<int>(p.spec.ZL.cols()) - 1 - 4 - 2;
    CHECK(nk >= 4);
    CHECK(p.spec.ZL.rows() == m);
    CHECK(p.spec.ZL.col(0).isOnes());
    // observation covariates centered; grid covariates standardized over land
    CHECK(std::abs(p.spec.Zy.col(0).mean()) < 1e-12);
    CHECK(std::abs(p.spec.Zy.col(1).mean()) < 1e-12);
    for (int j = 1; j <= 4; ++j) {
      double s = 0, ss = 0;
      int n = 0;
      for (int i = 0; i < m; ++i)
        if (data.grid.is_land(i)) {
          s += p.spec.ZL(i, j);
          ss += p.spec.ZL(i, j) * p.spec.ZL(i, j);
          ++n;
        }
      CHECK(std::abs(s / n) < 1e-9);
      CHECK(ss / n == doctest::Approx(1.0).epsilon(1e-9));
    }
    // groups: observation and fixed field columns -1, radial block 0
    REQUIRE(p.spec.coef_group.size() == 2 + static_cast<std::size_t>(p.spec.ZL.cols()));
    for (int j = 0; j < 2 + 1 + 4 + 2; ++j) CHECK(p.spec.coef_group[j] == -1);
    for (std::size_t j = 2 + 1 + 4 + 2; j < p.spec.coef_group.size(); ++j)
      CHECK(p.spec.coef_group[j] == 0);
    CHECK(p.spec.P_Y.rows() == data.y.size());
    CHECK(p.spec.P_A.rows() == data.a.size());
    CHECK(p.spec.P_phi.rows() == data.a.size());
    CHECK(p.spec.P_delta.cols() == 0);
    CHECK(p.spec.Q_phi.rank_deficiency == 3);
  }

  SUBCASE("variant flags flow into the model spec") {
    ModelOptions opt;
    opt.knots = 12;
    opt.fix_kappa = 1000.0;
    Problem p = build_problem(data, opt);
    REQUIRE(p.spec.fix_kappa.has_value());
    CHECK(*p.spec.fix_kappa == 1000.0);

    opt = ModelOptions{};
    opt.knots = 12;
    opt.fix_beta1 = true;
    opt.beta1_value = 0.5;
    p = build_problem(data, opt);
    REQUIRE(p.spec.fix_beta1.has_value());
    CHECK(*p.spec.fix_beta1 == 0.5);

    opt = ModelOptions{};
    opt.knots = 12;
    opt.include_discrepancy = false;
    p = build_problem(data, opt);
    CHECK(p.spec.Q_phi.Q.rows() == 0);
    CHECK_FALSE(p.spec.include_discrepancy);

    opt = ModelOptions{};
    opt.knots = 12;
    opt.proxy_as_covariate = true;
    p = build_problem(data, opt);
    CHECK(p.spec.proxy_as_covariate);
    CHECK(p.spec.Q_phi.Q.rows() == 0);

    opt = ModelOptions{};
    opt.knots = 12;
    opt.include_proxy = false;
    p = build_problem(data, opt);
    CHECK(p.spec.a.size() == 0);
    CHECK(p.spec.P_A.rows() == 0);

    opt = ModelOptions{};
    opt.knots = 12;
    opt.joint_field = true;
    p = build_problem(data, opt);
    CHECK(p.spec.joint_fields);
    CHECK(p.spec.Q_g.rank_deficiency == 3);
    CHECK(p.spec.Q_phi.Q.rows() == m);
    // no planar or radial smooth columns: the intrinsic field carries the shape
    CHECK(p.spec.ZL.cols() == 1 + 4);
  }

  SUBCASE("grid covariate selection by name") {
    ModelOptions opt;
    opt.knots = 12;
    Problem full = build_problem(data, opt);
    opt.grid_covariates = {"elev_trunc"};
    Problem one = build_problem(data, opt);
    CHECK(one.spec.ZL.cols() == full.spec.ZL.cols() - 3);
    CHECK((one.spec.ZL.col(1) - full.spec.ZL.col(2)).cwiseAbs().maxCoeff() == 0.0);
    opt.grid_covariates = {"no_such_column"};
    CHECK_THROWS_WITH_AS(build_problem(data, opt),
                         doctest::Contains("no_such_column"), ConfigError);
  }

  SUBCASE("constant covariate is zeroed with a warning") {
    RawData flat = data;
    flat.covariates.col(2).setConstant(4.2);
    ModelOptions opt;
    opt.knots = 12;
    Problem p = build_problem(flat, opt);
    CHECK(p.spec.ZL.col(3).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(p.warnings.size() == 1);
    CHECK(p.warnings[0].find("road3") != std::string::npos);
  }

  SUBCASE("co-located rows need site ids and share offset columns") {
    RawData co = data;
    co.colocated.assign(co.y.size(), 0);
    co.colocated[0] = co.colocated[3] = co.colocated[5] = 1;
    co.site.assign(co.y.size(), -1);
    co.site[0] = co.site[3] = 11;
    co.site[5] = 4;
    ModelOptions opt;
    opt.knots = 12;
    Problem p = build_problem(co, opt);
    REQUIRE(p.spec.P_delta.cols() == 2);
    Eigen::MatrixXd pd = Eigen::MatrixXd(p.spec.P_delta);
    CHECK(pd(0, 0) == 1.0);
    CHECK(pd(3, 0) == 1.0);
    CHECK(pd(5, 1) == 1.0);
    CHECK(pd.sum() == 3.0);

    co.site[3] = -1;
    CHECK_THROWS_AS(build_problem(co, opt), DataError);
  }
}

TEST_CASE("csv data loading round-trips the generated files") {
  fs::path dir = fresh_dir("load");
  sim::ReplicateData rep = tiny_replicate();
  json cfg = base_config(dir, rep);
  RunConfig rc = RunConfig::from_file(write_config(dir, cfg));

  RawData disk = load_data(rc);
  RawData mem = from_replicate(rep);
  CHECK(disk.grid.nrow == mem.grid.nrow);
  CHECK(disk.grid.ncol == mem.grid.ncol);
  CHECK(disk.grid.land == mem.grid.land);
  CHECK(disk.covariate_names == mem.covariate_names);
  CHECK((disk.covariates - mem.covariates).cwiseAbs().maxCoeff() == 0.0);
  CHECK((disk.y - mem.y).cwiseAbs().maxCoeff() == 0.0);
  CHECK(disk.obs_cells == mem.obs_cells);
  CHECK((disk.obs_cov - mem.obs_cov).cwiseAbs().maxCoeff() == 0.0);
  CHECK(disk.proxy_cells == mem.proxy_cells);
  CHECK((disk.a - mem.a).cwiseAbs().maxCoeff() == 0.0);
  CHECK((disk.truth - mem.truth).cwiseAbs().maxCoeff() == 0.0);
  CHECK(disk.proxy_counts.size() == 0);
  CHECK(disk.n_days.isConstant(30.0));

  SUBCASE("missing file is a config error, malformed content a data error") {
    json bad = cfg;
    bad["data"]["grid"] = "nope.csv";
    CHECK_THROWS_AS(load_data(RunConfig::from_file(write_config(dir, bad, "bad.json"))),
                    ConfigError);

    write_text_file((dir / "short.csv").string(), "cell,land\n0,1\n");
    json shorted = cfg;
    shorted["data"]["covariates"] = "short.csv";
    CHECK_THROWS_AS(
        load_data(RunConfig::from_file(write_config(dir, shorted, "short.json"))),
        DataError);

    write_text_file((dir / "badobs.csv").string(),
                    "y,cell,dist1,dist2\n1.0,99999,50,50\n");
    json outside = cfg;
    outside["data"]["observations"] = "badobs.csv";
    CHECK_THROWS_AS(
        load_data(RunConfig::from_file(write_config(dir, outside, "outside.json"))),
        DataError);

    write_text_file((dir / "baddays.csv").string(),
                    "y,cell,n_days,dist1,dist2\n1.0,0,0,50,50\n");
    json days = cfg;
    days["data"]["observations"] = "baddays.csv";
    CHECK_THROWS_AS(
        load_data(RunConfig::from_file(write_config(dir, days, "days.json"))),
        DataError);
  }

  SUBCASE("proxy counts switch the noise model") {
    CsvWriter w({"cell", "value", "count"});
    w.append({0.0, 1.5, 12.0});
    w.append({1.0, -0.5, 3.0});
    w.write_file((dir / "counted.csv").string());
    json counted = cfg;
    counted["data"]["proxy"] = "counted.csv";
    RawData d = load_data(RunConfig::from_file(write_config(dir, counted, "counted.json")));
    REQUIRE(d.proxy_counts.size() == 2);
    ModelOptions opt;
    opt.knots = 12;
    Problem p = build_problem(d, opt);
    CHECK(p.spec.proxy_noise == ProxyNoise::CountScaled);
  }
}

TEST_CASE("fit command writes a reproducible output set") {
  fs::path dir = fresh_dir("fit");
  json cfg = base_config(dir, tiny_replicate());
  std::string cfg_path = write_config(dir, cfg);

  REQUIRE(run_cli("fit " + cfg_path) == 0);
  fs::path out = dir / "out";
  for (const char* f : {"traces.csv", "chain_summary.csv", "blocks.csv",
                        "prediction_mean.csv", "prediction_sd.csv", "md_curve.csv",
                        "scores.csv", "manifest.json"})
    CHECK(fs::exists(out / f));

  CsvTable traces = CsvTable::read_file((out / "traces.csv").string());
  CHECK(traces.rows() == 8);  // post_burn / thin
  CHECK(traces.has_column("beta1"));
  CHECK(traces.has_column("kappa"));

  CsvTable mean = CsvTable::read_file((out / "prediction_mean.csv").string());
  CHECK(static_cast<int>(mean.rows()) == 24 * 16);

  json man = json::parse(read_text_file((out / "manifest.json").string()));
  CHECK(man["command"] == "fit");
  CHECK(man["config"]["seed"] == 77);

  SUBCASE("byte-identical rerun") {
    std::vector<std::pair<std::string, std::string>> before;
    for (const auto& e : fs::directory_iterator(out))
      before.emplace_back(e.path().filename().string(),
                          read_text_file(e.path().string()));
    REQUIRE(run_cli("fit " + cfg_path) == 0);
    for (const auto& [name, text] : before)
      CHECK(read_text_file((out / name).string()) == text);
  }

  SUBCASE("proxy-free fit has no discrepancy curve") {
    json nop = cfg;
    nop["model"]["include_proxy"] = false;
    nop["output_dir"] = "out_nop";
    std::string p = write_config(dir, nop, "nop.json");
    REQUIRE(run_cli("fit " + p) == 0);
    CHECK(fs::exists(dir / "out_nop" / "prediction_mean.csv"));
    CHECK_FALSE(fs::exists(dir / "out_nop" / "md_curve.csv"));
  }

  SUBCASE("overrides reach the run and its manifest") {
    json o = cfg;
    o["output_dir"] = "out_set";
    std::string p = write_config(dir, o, "set.json");
    REQUIRE(run_cli("fit " + p + " --set chain.burn_in=20 --set seed=5") == 0);
    json m = json::parse(read_text_file((dir / "out_set" / "manifest.json").string()));
    CHECK(m["config"]["chain"]["burn_in"] == 20);
    CHECK(m["config"]["seed"] == 5);
  }
}

TEST_CASE("command failures map to category exit codes") {
  fs::path dir = fresh_dir("err");
  json cfg = base_config(dir, tiny_replicate());

  SUBCASE("usage errors") {
    CHECK(run_cli("") == 2);
    CHECK(run_cli("frobnicate x.json") == 2);
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("fit") == 2);
  }

  SUBCASE("config errors exit 2") {
    write_text_file((dir / "junk.json").string(), "{not json\n");
    CHECK(run_cli("fit " + (dir / "junk.json").string()) == 2);

    json unknown = cfg;
    unknown["mdoel"] = json::object();
    CHECK(run_cli("fit " + write_config(dir, unknown, "unknown.json")) == 2);

    json missing = cfg;
    missing["data"]["proxy"] = "absent.csv";
    CHECK(run_cli("fit " + write_config(dir, missing, "missing.json")) == 2);

    CHECK(run_cli("predict " + write_config(dir, cfg, "nocells.json")) == 2);

    json pac = cfg;
    pac["model"]["proxy_as_covariate"] = true;
    CHECK(run_cli("diagnose " + write_config(dir, pac, "pac.json")) == 2);
  }

  SUBCASE("data errors exit 3") {
    write_text_file((dir / "covariates.csv").string(), "cell,land\n0,1\n1,1\n");
    CHECK(run_cli("fit " + write_config(dir, cfg, "badcov.json")) == 3);
  }
}

TEST_CASE("predict, diagnose, and cv commands") {
  fs::path dir = fresh_dir("cmds");
  json cfg = base_config(dir, tiny_replicate());

  SUBCASE("predict reports requested cells") {
    CsvWriter w({"cell"});
    w.append({0.0});
    w.append({37.0});
    w.append({383.0});
    w.write_file((dir / "cells.csv").string());
    json p = cfg;
    p["predict"]["cells"] = "cells.csv";
    p["output_dir"] = "out_pred";
    REQUIRE(run_cli("predict " + write_config(dir, p, "pred.json")) == 0);
    CsvTable t = CsvTable::read_file((dir / "out_pred" / "predictions.csv").string());
    REQUIRE(t.rows() == 3);
    CHECK(t.col_int("cell") == std::vector<int>{0, 37, 383});
    for (double sd : t.col_double("sd")) CHECK(sd > 0.0);
  }

  SUBCASE("diagnose writes curves and variograms") {
    json d = cfg;
    d["output_dir"] = "out_diag";
    REQUIRE(run_cli("diagnose " + write_config(dir, d, "diag.json")) == 0);
    for (const char* f : {"md_curve.csv", "variogram_phi.csv", "variogram_field.csv",
                          "chain_summary.csv", "manifest.json"})
      CHECK(fs::exists(dir / "out_diag" / f));
    CsvTable t = CsvTable::read_file((dir / "out_diag" / "md_curve.csv").string());
    CHECK(t.rows() > 3);
  }

  SUBCASE("cv scores folds and pools them") {
    json c = cfg;
    c["cv"]["folds"] = 3;
    c["output_dir"] = "out_cv";
    REQUIRE(run_cli("cv " + write_config(dir, c, "cv.json")) == 0);
    CsvTable t = CsvTable::read_file((dir / "out_cv" / "cv_scores.csv").string());
    REQUIRE(t.rows() == 4);
    CHECK(t.col_string("fold")[3] == "pooled");
    CsvTable preds =
        CsvTable::read_file((dir / "out_cv" / "cv_predictions.csv").string());
    CHECK(preds.rows() == 25);
  }
}

TEST_CASE("study shares the proxy-free fit and schedules deterministically") {
  RunConfig rc = RunConfig::from_text("{}", "<test>");
  rc.seed = 31;
  rc.study.scenarios = {1, 2};
  rc.study.variants = {"full", "no_proxy"};
  rc.study.replicates = 2;
  rc.study.nrow = 24;
  rc.study.ncol = 16;
  rc.study.n_obs = 25;
  rc.model.knots = 20;
  rc.chain.burn_in = 40;
  rc.chain.post_burn = 40;
  rc.chain.thin = 5;
  rc.chain.latent_stride = 5;

  StudyResult one = run_study(rc);
  REQUIRE(one.cells.size() == 4);
  CHECK(one.failures.empty());
  const StudyCell* nop1 = nullptr;
  const StudyCell* nop2 = nullptr;
  for (const auto& c : one.cells) {
    REQUIRE(c.mspe.size() == 2);
    for (double v : c.mspe) CHECK(std::isfinite(v));
    if (c.variant == "no_proxy" && c.scenario == 1) nop1 = &c;
    if (c.variant == "no_proxy" && c.scenario == 2) nop2 = &c;
  }
  REQUIRE(nop1 != nullptr);
  REQUIRE(nop2 != nullptr);
  CHECK(nop1->mspe == nop2->mspe);  // one shared fit per replicate

  SUBCASE("worker count changes nothing") {
    RunConfig par = rc;
    par.study.workers = 3;
    StudyResult two = run_study(par);
    REQUIRE(two.cells.size() == one.cells.size());
    for (std::size_t i = 0; i < one.cells.size(); ++i)
      CHECK(two.cells[i].mspe == one.cells[i].mspe);
  }

  SUBCASE("study command writes the tabulated outputs") {
    fs::path dir = fresh_dir("study");
    RunConfig wr = rc;
    wr.output_dir = (dir / "out").string();
    REQUIRE(cmd_simulate_study(wr) == 0);
    CsvTable t = CsvTable::read_file((dir / "out" / "study_mspe.csv").string());
    REQUIRE(t.rows() == 4);
    CHECK(t.col_int("failures") == std::vector<int>{0, 0, 0, 0});
    CsvTable paired = CsvTable::read_file((dir / "out" / "study_paired.csv").string());
    REQUIRE(paired.rows() == 2);  // one variant pair per scenario
    CHECK(paired.col_int("pairs") == std::vector<int>{2, 2});
    json man = json::parse(read_text_file((dir / "out" / "manifest.json").string()));
    CHECK(man["command"] == "simulate-study");
  }
}
