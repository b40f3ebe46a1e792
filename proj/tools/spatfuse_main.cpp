#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spatfuse/config.hpp"
#include "spatfuse/errors.hpp"
#include "spatfuse/runner.hpp"
#include "spatfuse/study.hpp"

namespace {

struct Command {
  CLI::App* sub = nullptr;
  std::string config_path;
  std::vector<std::string> overrides;
  int (*run)(const spatfuse::cli::RunConfig&) = nullptr;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatial fusion of monitor and proxy data with bias correction"};
  app.require_subcommand(1);

  std::vector<Command> commands;
  commands.reserve(8);  // CLI11 keeps pointers into these entries
  auto add = [&](const char* name, const char* desc,
                 int (*run)(const spatfuse::cli::RunConfig&)) {
    commands.push_back({app.add_subcommand(name, desc), "", {}, run});
    Command& c = commands.back();
    c.sub->add_option("config", c.config_path, "JSON run configuration")
        ->required();
    c.sub->add_option("--set", c.overrides,
                      "override a config key, e.g. --set chain.burn_in=500");
  };
  add("fit", "fit the fusion model and write posterior summaries",
      spatfuse::cli::cmd_fit);
  add("predict", "fit and report the latent field at requested cells",
      spatfuse::cli::cmd_predict);
  add("simulate-study", "run the replicated simulation study",
      spatfuse::cli::cmd_simulate_study);
  add("diagnose", "fit and write discrepancy-scale diagnostics",
      spatfuse::cli::cmd_diagnose);
  add("cv", "site-held-out cross-validation of the fitted model",
      spatfuse::cli::cmd_cv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    for (const auto& c : commands)
      if (c.sub->parsed()) {
        spatfuse::cli::RunConfig cfg =
            spatfuse::cli::RunConfig::from_file(c.config_path, c.overrides);
        return c.run(cfg);
      }
    return 2;
  } catch (const spatfuse::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const spatfuse::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const spatfuse::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
