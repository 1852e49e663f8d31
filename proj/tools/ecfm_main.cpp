#include "ecfm/experiment.hpp"
#include "ecfm/io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>

namespace {

int run(const std::string& name, const std::string& config_path, const std::string& out_flag) {
  nlohmann::json config;
  try {
    config = nlohmann::json::parse(ecfm::read_file(config_path));
  } catch (const ecfm::IoError& e) {
    std::cerr << "ecfm " << name << ": " << e.what() << "\n";
    return ecfm::kExitIoError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "ecfm " << name << ": config parse error: " << e.what() << "\n";
    return ecfm::kExitConfigError;
  }

  std::string outdir = out_flag;
  if (outdir.empty() && config.is_object() && config.contains("output") &&
      config.at("output").is_string())
    outdir = config.at("output").get<std::string>();
  if (outdir.empty()) outdir = "runs";

  const auto outcome = ecfm::run_subcommand(name, config, outdir);
  if (outcome.exit_code != ecfm::kExitOk) {
    std::cerr << "ecfm " << name << ": " << outcome.message << "\n";
  } else {
    std::cout << outcome.run_dir.string() << "\n";
  }
  return outcome.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"entropy-budgeted flow matching laboratory"};
  app.require_subcommand(1);

  struct SubArgs {
    std::string config;
    std::string out;
  };
  std::map<std::string, SubArgs> args;

  const std::vector<std::pair<std::string, std::string>> subs = {
      {"train", "primal-dual training with entropy-rate constraints"},
      {"collapse", "collapse-then-redisperse failure diagnostics"},
      {"geodesic", "static bridge solver and interpolation marginals"},
      {"gamma", "budget sweep against the classical geodesic"},
      {"certify", "certification report for a trained or collapsing run"},
      {"stability", "perturbation-stability sweeps"},
  };
  for (const auto& [name, desc] : subs) {
    auto* sub = app.add_subcommand(name, desc);
    auto& a = args[name];
    sub->add_option("--config", a.config, "path to a JSON experiment config")->required();
    sub->add_option("--out", a.out, "output directory (default: config 'output' or ./runs)");
  }

  CLI11_PARSE(app, argc, argv);

  for (const auto& [name, desc] : subs) {
    (void)desc;
    if (app.get_subcommand(name)->parsed()) return run(name, args[name].config, args[name].out);
  }
  return ecfm::kExitConfigError;
}
