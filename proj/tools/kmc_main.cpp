#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kmc/cli.hpp"

namespace {

using nlohmann::json;

struct CommonArgs {
  std::string config_path;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  cmd->add_option("--out", args.out, "output directory (overrides config)");
  cmd->add_option("--set", args.sets,
                  "config override key=value; value parsed as JSON when possible");
}

json resolve_config(const CommonArgs& args) {
  json config = json::object();
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    if (!in.good()) throw kmc::InputError("cannot open config file " + args.config_path);
    try {
      in >> config;
    } catch (const std::exception& e) {
      throw kmc::InputError("config parse error: " + std::string(e.what()));
    }
  }
  if (!args.out.empty()) config["out"] = args.out;
  for (const std::string& kv : args.sets) {
    const auto pos = kv.find('=');
    if (pos == std::string::npos)
      throw kmc::InputError("--set expects key=value, got: " + kv);
    const std::string key = kv.substr(0, pos);
    const std::string value = kv.substr(pos + 1);
    const json parsed = json::parse(value, nullptr, false);
    config[key] = parsed.is_discarded() ? json(value) : parsed;
  }
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-free Hamiltonian Monte Carlo with kernel exponential families"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    int (*run)(const json&);
    CommonArgs args;
  };
  std::vector<Sub> subs{
      {"fit", "fit a gradient surrogate to a CSV of samples", kmc::cli::cmd_fit, {}},
      {"sample", "run a sampler on a named target", kmc::cli::cmd_sample, {}},
      {"trajectories", "exact vs surrogate Hamiltonian trajectories", kmc::cli::cmd_trajectories, {}},
      {"acceptance-benchmark", "hypothetical acceptance over (d, n=m) grids",
       kmc::cli::cmd_acceptance_benchmark, {}},
      {"banana", "RW / HMC / KMC comparison on the banana target", kmc::cli::cmd_banana, {}},
      {"abc", "pseudo-marginal ABC study and the log-normal counterexample",
       kmc::cli::cmd_abc, {}},
      {"diagnose", "chain metrics from a chain CSV", kmc::cli::cmd_diagnose, {}},
  };
  for (auto& sub : subs) add_common(app.add_subcommand(sub.name, sub.help), sub.args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (const auto& sub : subs)
      if (app.got_subcommand(sub.name)) return sub.run(resolve_config(sub.args));
    std::cerr << "no subcommand given\n";
    return 1;
  } catch (const kmc::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 1;
  } catch (const kmc::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
