#ifndef ECFM_EXPERIMENT_HPP
#define ECFM_EXPERIMENT_HPP

#include "ecfm/certify.hpp"
#include "ecfm/collapse.hpp"
#include "ecfm/trainer.hpp"
#include "ecfm/transport.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace ecfm {

// Exit codes shared by the CLI and the in-process command entry points.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfigError = 1,
  kExitNumericalAbort = 2,
  kExitIoError = 3,
};

struct ExperimentOutcome {
  int exit_code;
  std::filesystem::path run_dir;
  std::string message;
};

// Strict config access: reading an object with unknown keys is an error.
class StrictConfig {
public:
  explicit StrictConfig(const nlohmann::json& j, std::string path = "$");
  const nlohmann::json& raw() const { return json_; }

  bool has(const std::string& key) const;
  StrictConfig child(const std::string& key) const;
  const nlohmann::json& array(const std::string& key) const;
  template <typename T>
  T get(const std::string& key) const;
  template <typename T>
  T get_or(const std::string& key, T fallback) const;
  // call after all reads; throws on keys nobody consumed
  void finish() const;
  const std::string& path() const { return path_; }

private:
  const nlohmann::json& json_;
  std::string path_;
  mutable std::vector<std::string> consumed_;
};

// Parsed pieces reused by several subcommands.
TransportProblem parse_problem(StrictConfig cfg);

struct ParsedTrainer {
  TrainerConfig config;
  bool auto_budget = false;  // lambda = "auto": select the budget from a pilot run
  double delta_safe = 0.1;
};

ParsedTrainer parse_trainer(StrictConfig cfg, std::uint64_t master_seed);

// Config must carry version "ecfm-config-v1" and a master seed.
void check_preamble(const StrictConfig& cfg);

// Each command writes its artifacts under <outdir>/<name>/<run-id>/ and a
// manifest with the config hash and wall time.
ExperimentOutcome cmd_train(const nlohmann::json& config, const std::filesystem::path& outdir);
ExperimentOutcome cmd_collapse(const nlohmann::json& config, const std::filesystem::path& outdir);
ExperimentOutcome cmd_geodesic(const nlohmann::json& config, const std::filesystem::path& outdir);
ExperimentOutcome cmd_gamma(const nlohmann::json& config, const std::filesystem::path& outdir);
ExperimentOutcome cmd_certify(const nlohmann::json& config, const std::filesystem::path& outdir);
ExperimentOutcome cmd_stability(const nlohmann::json& config, const std::filesystem::path& outdir);

// Dispatch by subcommand name; returns kExitConfigError for unknown names.
ExperimentOutcome run_subcommand(const std::string& name, const nlohmann::json& config,
                                 const std::filesystem::path& outdir);

}  // namespace ecfm

#endif  // ECFM_EXPERIMENT_HPP
