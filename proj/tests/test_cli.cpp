#include <doctest.h>

#include "ecfm/experiment.hpp"
#include "ecfm/io.hpp"

#include <cstdlib>
#include <filesystem>

using namespace ecfm;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("ecfm_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

nlohmann::json base_train_config(std::uint64_t seed) {
  return nlohmann::json{
      {"version", "ecfm-config-v1"},
      {"seed", seed},
      {"problem",
       {{"kind", "pure-transport"}, {"m0", -1.0}, {"s0", 0.8}, {"m1", 1.0}, {"s1", 0.8},
        {"horizon", 1.0}, {"grid_times", 6}}},
      {"trainer",
       {{"lambda", "inf"}, {"batch", 400}, {"eval_batch", 1500}, {"max_outer", 50},
        {"substeps", 2}, {"rbf_centers", 8}}}};
}

// every data file except the manifest (which carries wall time)
std::vector<fs::path> data_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().filename() == "manifest.json") continue;
    out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("train command writes artifacts and succeeds") {
  const auto dir = fresh_dir("train");
  auto cfg = base_train_config(5);
  cfg["export_trajectory"] = true;
  const auto outcome = cmd_train(cfg, dir);
  REQUIRE(outcome.exit_code == kExitOk);
  CHECK(fs::exists(outcome.run_dir / "trajectory" / "ens_t000.csv"));
  CHECK(fs::exists(outcome.run_dir / "trajectory" / "ens_manifest.json"));
  CHECK(fs::exists(outcome.run_dir / "history.ndjson"));
  CHECK(fs::exists(outcome.run_dir / "field.json"));
  CHECK(fs::exists(outcome.run_dir / "series.csv"));
  CHECK(fs::exists(outcome.run_dir / "result.json"));
  CHECK(fs::exists(outcome.run_dir / "manifest.json"));
  CHECK(!read_file(outcome.run_dir / "history.ndjson").empty());

  // outputs reparse with the library readers
  const auto field = field_from_json(nlohmann::json::parse(read_file(outcome.run_dir / "field.json")));
  CHECK(field->dim() == 1);
  const auto result = nlohmann::json::parse(read_file(outcome.run_dir / "result.json"));
  CHECK(result.at("status") == "completed");
  fs::remove_all(dir);
}

TEST_CASE("unknown keys and invalid budgets are config errors") {
  const auto dir = fresh_dir("badcfg");
  auto cfg = base_train_config(5);
  cfg["problem"]["typo_key"] = 1.0;
  CHECK(cmd_train(cfg, dir).exit_code == kExitConfigError);

  auto cfg2 = base_train_config(5);
  cfg2["trainer"]["scheduler"] = {{"enabled", true}, {"lambda_min", 2.0}, {"lambda_max", 1.0}};
  CHECK(cmd_train(cfg2, dir).exit_code == kExitConfigError);

  auto cfg3 = base_train_config(5);
  cfg3["version"] = "ecfm-config-v0";
  CHECK(cmd_train(cfg3, dir).exit_code == kExitConfigError);
  fs::remove_all(dir);
}

TEST_CASE("train reruns are byte identical") {
  const auto dir1 = fresh_dir("det1");
  const auto dir2 = fresh_dir("det2");
  const auto cfg = base_train_config(11);
  const auto o1 = cmd_train(cfg, dir1);
  const auto o2 = cmd_train(cfg, dir2);
  REQUIRE(o1.exit_code == kExitOk);
  REQUIRE(o2.exit_code == kExitOk);
  const auto f1 = data_files(o1.run_dir);
  const auto f2 = data_files(o2.run_dir);
  REQUIRE(f1.size() == f2.size());
  for (std::size_t i = 0; i < f1.size(); ++i) {
    CHECK(f1[i].filename() == f2[i].filename());
    CHECK(read_file(f1[i]) == read_file(f2[i]));
  }
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("collapse command emits one csv per term plus a summary") {
  const auto dir = fresh_dir("collapse");
  nlohmann::json cfg{{"version", "ecfm-config-v1"},
                     {"seed", 3},
                     {"collapse", {{"terms", 2}, {"batch", 4000}}}};
  const auto outcome = cmd_collapse(cfg, dir);
  REQUIRE(outcome.exit_code == kExitOk);
  CHECK(fs::exists(outcome.run_dir / "collapse_1.csv"));
  CHECK(fs::exists(outcome.run_dir / "collapse_2.csv"));
  CHECK(!fs::exists(outcome.run_dir / "collapse_3.csv"));
  const auto summary = nlohmann::json::parse(read_file(outcome.run_dir / "summary.json"));
  REQUIRE(summary.size() == 2);
  CHECK(summary[1]["lambda_eff_max"].get<double>() > summary[0]["lambda_eff_max"].get<double>());
  fs::remove_all(dir);
}

TEST_CASE("geodesic command reports stationary-like marginals for equal endpoints") {
  const auto dir = fresh_dir("geodesic");
  const auto mix = GaussianMixture::gaussian1d(0.0, 0.25).to_json();
  nlohmann::json cfg{{"version", "ecfm-config-v1"},
                     {"seed", 1},
                     {"sinkhorn",
                      {{"eps", 0.01}, {"cells", 256}, {"lo", -6.0}, {"hi", 6.0},
                       {"times", {0.0, 0.5, 1.0}}, {"mu0", mix}, {"muT", mix}}}};
  const auto outcome = cmd_geodesic(cfg, dir);
  REQUIRE(outcome.exit_code == kExitOk);
  const auto diag = nlohmann::json::parse(read_file(outcome.run_dir / "diagnostics.json"));
  CHECK(diag.at("endpoint_l1_t0").get<double>() < 1e-8);
  CHECK(diag.at("endpoint_l1_t1").get<double>() < 1e-8);

  // with a small diffusivity the mid marginal nearly equals the endpoints
  const auto rows0 = read_csv(outcome.run_dir / "marginal_000.csv");
  const auto rows1 = read_csv(outcome.run_dir / "marginal_001.csv");
  double l1 = 0.0;
  for (std::size_t i = 0; i < rows0.size(); ++i) l1 += std::abs(rows0[i][1] - rows1[i][1]);
  CHECK(l1 < 5e-3);
  fs::remove_all(dir);
}

TEST_CASE("stability command fits sweeps") {
  const auto dir = fresh_dir("stability");
  auto cfg = base_train_config(9);
  cfg["stability"] = {{"magnitudes", {0.02, 0.05, 0.1, 0.2}},
                      {"seeds", {1, 2}},
                      {"batch", 800},
                      {"base", "teacher"},
                      {"axes", {"field-noise", "init-shift"}}};
  const auto outcome = cmd_stability(cfg, dir);
  REQUIRE(outcome.exit_code == kExitOk);
  const auto summary = nlohmann::json::parse(read_file(outcome.run_dir / "summary.json"));
  REQUIRE(summary.size() == 2);
  for (const auto& axis : summary) CHECK(axis.at("r2_w2").get<double>() >= 0.9);
  fs::remove_all(dir);
}

TEST_CASE("certify command verdicts") {
  const auto dir = fresh_dir("certify");

  // feasible trained run: corridor box mode with a roomy core
  auto cfg = base_train_config(13);
  cfg["trainer"]["lambda"] = "auto";
  cfg["certify"] = {
      {"source", "train"},
      {"beta_floor", 0.5},
      {"modes", {ModeSet::interval(-5.0, 5.0, "corridor").to_json()}},
      {"cores", {ModeSet::interval(-4.5, 4.5, "corridor-core").to_json()}},
      {"stability_magnitudes", {0.02, 0.05, 0.1}},
      {"stability_seeds", {1, 2}},
  };
  const auto feasible = cmd_certify(cfg, dir);
  REQUIRE(feasible.exit_code == kExitOk);
  const auto rep = nlohmann::json::parse(read_file(feasible.run_dir / "report.json"));
  CHECK(rep.at("verdict") == "feasible");
  CHECK(rep.at("version") == "ecfm-report-v1");
  const auto md = read_file(feasible.run_dir / "report.md");
  CHECK(md.find("| Model |") == 0);

  // unconstrained collapse run: infeasible with a huge effective budget
  nlohmann::json ccfg{
      {"version", "ecfm-config-v1"},
      {"seed", 17},
      {"certify",
       {{"source", "collapse"},
        {"lambda_star", 1.0},
        {"batch", 6000},
        {"collapse_params", {{"eps", 0.01}, {"tau", 0.05}}}}}};
  const auto infeasible = cmd_certify(ccfg, dir);
  REQUIRE(infeasible.exit_code == kExitOk);
  const auto rep2 = nlohmann::json::parse(read_file(infeasible.run_dir / "report.json"));
  CHECK(rep2.at("verdict") == "infeasible");
  CHECK(rep2.at("lambda_eff_lcb").get<double>() > 10.0 * rep2.at("lambda_star").get<double>());
  fs::remove_all(dir);
}

TEST_CASE("cli binary end to end") {
  const fs::path binary = fs::path(ECFM_CLI_PATH);
  REQUIRE(fs::exists(binary));
  const auto dir = fresh_dir("binary");
  const auto cfg_path = dir / "cfg.json";
  write_file(cfg_path, base_train_config(21).dump(2));

  const std::string cmd = binary.string() + " train --config " + cfg_path.string() + " --out " +
                          (dir / "runs").string() + " >/dev/null 2>&1";
  CHECK(std::system(cmd.c_str()) == 0);

  // malformed config: exit code 1
  write_file(cfg_path, "{ not json");
  const std::string bad = binary.string() + " train --config " + cfg_path.string() +
                          " --out " + (dir / "runs").string() + " >/dev/null 2>&1";
  CHECK(WEXITSTATUS(std::system(bad.c_str())) == 1);

  // help exists
  const std::string help = binary.string() + " --help >/dev/null 2>&1";
  CHECK(std::system(help.c_str()) == 0);
  fs::remove_all(dir);
}
