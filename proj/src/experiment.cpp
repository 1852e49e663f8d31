#include "ecfm/experiment.hpp"

#include "ecfm/io.hpp"
#include "ecfm/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace ecfm {

// ---- strict config -------------------------------------------------------------

StrictConfig::StrictConfig(const nlohmann::json& j, std::string path)
    : json_(j), path_(std::move(path)) {
  if (!json_.is_object()) throw ConfigError(path_ + ": expected an object");
}

bool StrictConfig::has(const std::string& key) const { return json_.contains(key); }

StrictConfig StrictConfig::child(const std::string& key) const {
  if (!json_.contains(key)) throw ConfigError(path_ + ": missing key '" + key + "'");
  consumed_.push_back(key);
  return StrictConfig(json_.at(key), path_ + "." + key);
}

const nlohmann::json& StrictConfig::array(const std::string& key) const {
  if (!json_.contains(key)) throw ConfigError(path_ + ": missing key '" + key + "'");
  if (!json_.at(key).is_array()) throw ConfigError(path_ + "." + key + ": expected an array");
  consumed_.push_back(key);
  return json_.at(key);
}

template <typename T>
T StrictConfig::get(const std::string& key) const {
  if (!json_.contains(key)) throw ConfigError(path_ + ": missing key '" + key + "'");
  consumed_.push_back(key);
  try {
    return json_.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path_ + "." + key + ": " + e.what());
  }
}

template <typename T>
T StrictConfig::get_or(const std::string& key, T fallback) const {
  if (!json_.contains(key)) return fallback;
  return get<T>(key);
}

void StrictConfig::finish() const {
  for (auto it = json_.begin(); it != json_.end(); ++it) {
    if (std::find(consumed_.begin(), consumed_.end(), it.key()) == consumed_.end())
      throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
  }
}

template double StrictConfig::get<double>(const std::string&) const;
template Index StrictConfig::get<Index>(const std::string&) const;
template bool StrictConfig::get<bool>(const std::string&) const;
template std::string StrictConfig::get<std::string>(const std::string&) const;
template std::uint64_t StrictConfig::get<std::uint64_t>(const std::string&) const;
template std::vector<double> StrictConfig::get<std::vector<double>>(const std::string&) const;
template std::vector<std::uint64_t> StrictConfig::get<std::vector<std::uint64_t>>(
    const std::string&) const;
template std::vector<std::string> StrictConfig::get<std::vector<std::string>>(
    const std::string&) const;
template double StrictConfig::get_or<double>(const std::string&, double) const;
template Index StrictConfig::get_or<Index>(const std::string&, Index) const;
template bool StrictConfig::get_or<bool>(const std::string&, bool) const;
template std::string StrictConfig::get_or<std::string>(const std::string&, std::string) const;
template int StrictConfig::get_or<int>(const std::string&, int) const;
template std::vector<double> StrictConfig::get_or<std::vector<double>>(const std::string&,
                                                                       std::vector<double>) const;
template std::vector<std::uint64_t> StrictConfig::get_or<std::vector<std::uint64_t>>(
    const std::string&, std::vector<std::uint64_t>) const;

void check_preamble(const StrictConfig& cfg) {
  const auto version = cfg.get<std::string>("version");
  if (version != "ecfm-config-v1")
    throw ConfigError("config version must be 'ecfm-config-v1', got '" + version + "'");
}

// ---- shared parsing -------------------------------------------------------------

TransportProblem parse_problem(StrictConfig cfg) {
  const auto kind = cfg.get<std::string>("kind");
  const double horizon = cfg.get_or<double>("horizon", 1.0);
  const Index n_times = cfg.get_or<Index>("grid_times", 11);
  const auto grid = TimeGrid::uniform(horizon, n_times);
  const double m0 = cfg.get<double>("m0");
  const double s0 = cfg.get<double>("s0");
  const double m1 = cfg.get<double>("m1");
  const double s1 = cfg.get<double>("s1");
  cfg.finish();

  if (kind == "pure-transport") return pure_transport_problem(m0, s0, m1, s1, grid);
  if (kind == "regression") {
    auto teacher = std::make_shared<GaussianInterpolantField>(m0, s0, m1, s1, horizon);
    return TransportProblem{GaussianMixture::gaussian1d(m0, s0 * s0),
                            GaussianMixture::gaussian1d(m1, s1 * s1), grid, teacher, teacher};
  }
  throw ConfigError("problem.kind must be 'pure-transport' or 'regression'");
}

ParsedTrainer parse_trainer(StrictConfig cfg, std::uint64_t master_seed) {
  ParsedTrainer out;
  auto& tc = out.config;
  tc.seed = master_seed;

  if (cfg.has("lambda")) {
    const auto& raw = cfg.raw().at("lambda");
    if (raw.is_string()) {
      const auto s = cfg.get<std::string>("lambda");
      if (s == "inf") {
        tc.lambdas = {kLambdaUnconstrained};
      } else if (s == "auto") {
        out.auto_budget = true;
        tc.lambdas = {kLambdaUnconstrained};
      } else {
        throw ConfigError(cfg.path() + ".lambda: expected number, array, 'inf' or 'auto'");
      }
    } else if (raw.is_array()) {
      tc.lambdas = cfg.get<std::vector<double>>("lambda");
    } else {
      tc.lambdas = {cfg.get<double>("lambda")};
    }
  } else {
    tc.lambdas = {kLambdaUnconstrained};
  }
  out.delta_safe = cfg.get_or<double>("delta_safe", 0.1);

  tc.rho = cfg.get_or<double>("rho", tc.rho);
  tc.alpha.base = cfg.get_or<double>("alpha0", tc.alpha.base);
  tc.alpha.decay_at = cfg.get_or<double>("alpha_decay", tc.alpha.decay_at);
  tc.beta.base = cfg.get_or<double>("beta0", tc.beta.base);
  tc.beta.decay_at = cfg.get_or<double>("beta_decay", tc.beta.decay_at);
  tc.batch = cfg.get_or<Index>("batch", tc.batch);
  tc.eval_batch = cfg.get_or<Index>("eval_batch", tc.eval_batch);
  tc.robust = cfg.get_or<bool>("robust", tc.robust);
  tc.alpha_conf = cfg.get_or<double>("alpha_conf", tc.alpha_conf);
  tc.constraint_margin = cfg.get_or<double>("constraint_margin", tc.constraint_margin);
  tc.max_outer = cfg.get_or<Index>("max_outer", tc.max_outer);
  tc.recompute_fresh = cfg.get_or<bool>("recompute_fresh", tc.recompute_fresh);
  tc.substeps = cfg.get_or<int>("substeps", tc.substeps);
  tc.rbf_centers = cfg.get_or<Index>("rbf_centers", tc.rbf_centers);
  if (cfg.has("hutchinson_probes")) tc.hutchinson_probes = cfg.get<Index>("hutchinson_probes");
  if (cfg.has("scheduler")) {
    auto sc = cfg.child("scheduler");
    tc.scheduler.enabled = sc.get_or<bool>("enabled", true);
    tc.scheduler.zeta.base = sc.get_or<double>("zeta0", tc.scheduler.zeta.base);
    tc.scheduler.zeta.decay_at = sc.get_or<double>("zeta_decay", tc.scheduler.zeta.decay_at);
    tc.scheduler.margin = sc.get_or<double>("margin", tc.scheduler.margin);
    tc.scheduler.lambda_min = sc.get_or<double>("lambda_min", tc.scheduler.lambda_min);
    tc.scheduler.lambda_max = sc.get_or<double>("lambda_max", tc.scheduler.lambda_max);
    sc.finish();
  }
  cfg.finish();
  return out;
}

// ---- run directory plumbing ------------------------------------------------------

namespace {

struct RunContext {
  std::filesystem::path dir;
  nlohmann::json config;
  std::uint64_t seed;
  std::chrono::steady_clock::time_point started;
};

RunContext open_run(const std::string& name, const nlohmann::json& config,
                    const std::filesystem::path& outdir) {
  StrictConfig top(config);
  check_preamble(top);
  const std::uint64_t seed = top.get<std::uint64_t>("seed");
  const std::string run_id = hex_id(fnv1a(config.dump()));
  RunContext ctx{outdir / name / run_id, config, seed, std::chrono::steady_clock::now()};
  std::filesystem::create_directories(ctx.dir);
  return ctx;
}

void write_manifest(const RunContext& ctx) {
  nlohmann::json m;
  m["config_hash"] = hex_id(fnv1a(ctx.config.dump()));
  m["seed"] = ctx.seed;
  m["wall_time_sec"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.started).count();
  write_file(ctx.dir / "manifest.json", m.dump(2) + "\n");
}

int classify(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfigError;
  if (dynamic_cast<const NumericalError*>(&e)) return kExitNumericalAbort;
  if (dynamic_cast<const IoError*>(&e)) return kExitIoError;
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return kExitConfigError;
  return kExitNumericalAbort;
}

nlohmann::json train_result_json(const TrainResult& result,
                                 const std::optional<double>& lambda_star) {
  nlohmann::json j;
  j["status"] = result.history.status;
  j["objective"] = result.final_objective;
  j["endpoint_w2"] = result.endpoint_w2;
  j["residuals"] = result.final_residuals;
  j["eta"] = result.final_eta;
  j["lambda"] = result.final_lambdas;
  j["slackness_gap"] = complementary_slackness_gap(result.final_eta, result.final_residuals);
  if (lambda_star) j["lambda_star"] = *lambda_star;
  const auto le = lambda_eff(result.final_series, result.final_series.alpha);
  j["lambda_eff_max"] = le.lambda_max;
  j["lambda_eff_lcb"] = le.lambda_lcb;
  return j;
}

struct TrainedRun {
  TrainResult result;
  std::optional<double> lambda_star;
};

TrainedRun run_training(const TransportProblem& problem, const ParsedTrainer& parsed) {
  if (!parsed.auto_budget) return {train(problem, parsed.config), std::nullopt};
  // pilot: unconstrained run fixes the empirical budget, then train against it
  TrainerConfig pilot = parsed.config;
  pilot.lambdas = {kLambdaUnconstrained};
  const TrainResult unconstrained = train(problem, pilot);
  const double star =
      select_budget(unconstrained.final_series, pilot.alpha_conf, parsed.delta_safe);
  TrainerConfig constrained = parsed.config;
  constrained.lambdas = {star};
  return {train(problem, constrained), star};
}

std::vector<ModeSet> parse_mode_sets(const nlohmann::json& arr) {
  std::vector<ModeSet> out;
  for (const auto& j : arr) out.push_back(ModeSet::from_json(j));
  return out;
}

std::vector<DensityProbe> parse_probes(const nlohmann::json& arr) {
  std::vector<DensityProbe> out;
  for (const auto& j : arr) {
    DensityProbe p;
    p.center = Vector::Constant(1, j.at("center").get<double>());
    p.radius = j.at("radius").get<double>();
    out.push_back(std::move(p));
  }
  return out;
}

const std::vector<std::string> kReportCaveats = {
    "sub-Gaussian tail proxy sigma_n is the empirical standard error, a plug-in rather "
    "than a proven bound",
    "stability constants are empirical regression slopes, not analytic envelopes"};

}  // namespace

// ---- commands -------------------------------------------------------------------

ExperimentOutcome cmd_train(const nlohmann::json& config, const std::filesystem::path& outdir) {
  try {
    RunContext ctx = open_run("train", config, outdir);
    StrictConfig top(config);
    check_preamble(top);
    top.get<std::uint64_t>("seed");
    top.get_or<std::string>("output", "");
    const auto problem = parse_problem(top.child("problem"));
    const auto parsed = parse_trainer(top.child("trainer"), ctx.seed);
    const bool export_traj = top.get_or<bool>("export_trajectory", false);
    top.finish();

    const TrainedRun run = run_training(problem, parsed);
    write_file(ctx.dir / "history.ndjson", run.result.history.to_ndjson());
    write_file(ctx.dir / "field.json", field_to_json(*run.result.field).dump(2) + "\n");
    write_file(ctx.dir / "series.csv", run.result.final_series.to_csv());
    write_file(ctx.dir / "result.json",
               train_result_json(run.result, run.lambda_star).dump(2) + "\n");
    if (export_traj) run.result.eval_trajectory.export_dir(ctx.dir / "trajectory");
    write_manifest(ctx);
    if (run.result.history.status != "completed")
      return {kExitNumericalAbort, ctx.dir, run.result.history.status};
    return {kExitOk, ctx.dir, "ok"};
  } catch (const std::exception& e) {
    return {classify(e), {}, e.what()};
  }
}

ExperimentOutcome cmd_collapse(const nlohmann::json& config, const std::filesystem::path& outdir) {
  try {
    RunContext ctx = open_run("collapse", config, outdir);
    StrictConfig top(config);
    check_preamble(top);
    top.get<std::uint64_t>("seed");
    top.get_or<std::string>("output", "");
    auto cc = top.child("collapse");
    const Index terms = cc.get_or<Index>("terms", 4);
    const double a = cc.get_or<double>("a", 4.0);
    const double sigma = cc.get_or<double>("sigma", 1.0);
    const double horizon = cc.get_or<double>("horizon", 1.0);
    const Index batch = cc.get_or<Index>("batch", 20000);
    cc.finish();
    top.finish();

    const auto ladder = collapse_sequence(terms, a, sigma, horizon);
    const auto diags = run_collapse_sequence(ladder, batch, ctx.seed);
    nlohmann::json summary = nlohmann::json::array();
    for (std::size_t n = 0; n < diags.size(); ++n) {
      char name[32];
      std::snprintf(name, sizeof(name), "collapse_%zu.csv", n + 1);
      write_file(ctx.dir / name, diags[n].to_csv());
      summary.push_back(diags[n].summary());
    }
    write_file(ctx.dir / "summary.json", summary.dump(2) + "\n");
    write_manifest(ctx);
    return {kExitOk, ctx.dir, "ok"};
  } catch (const std::exception& e) {
    return {classify(e), {}, e.what()};
  }
}

ExperimentOutcome cmd_geodesic(const nlohmann::json& config, const std::filesystem::path& outdir) {
  try {
    RunContext ctx = open_run("geodesic", config, outdir);
    StrictConfig top(config);
    check_preamble(top);
    top.get<std::uint64_t>("seed");
    top.get_or<std::string>("output", "");
    auto sc = top.child("sinkhorn");
    const double lo = sc.get_or<double>("lo", -6.0);
    const double hi = sc.get_or<double>("hi", 6.0);
    const Index cells = sc.get_or<Index>("cells", 512);
    const double eps = sc.get<double>("eps");
    const double horizon = sc.get_or<double>("horizon", 1.0);
    const double tol = sc.get_or<double>("tol", 1e-10);
    const Index max_iter = sc.get_or<Index>("max_iter", 5000);
    const auto times = sc.get_or<std::vector<double>>("times", {0.0, 0.25, 0.5, 0.75, 1.0});
    const auto mu0 = GaussianMixture::from_json(sc.child("mu0").raw());
    const auto muT = GaussianMixture::from_json(sc.child("muT").raw());
    sc.finish();
    top.finish();

    const auto a = GridDensity::from_mixture(mu0, lo, hi, cells);
    const auto b = GridDensity::from_mixture(muT, lo, hi, cells);
    const auto pots = sinkhorn(a, b, eps, horizon, tol, max_iter);

    nlohmann::json diag;
    diag["iterations"] = pots.iterations;
    diag["final_residual"] = pots.final_residual;
    diag["endpoint_l1_t0"] = sb_marginal(pots, 0.0).l1_distance(a);
    diag["endpoint_l1_t1"] = sb_marginal(pots, horizon).l1_distance(b);
    if (mu0.size() == 1 && muT.size() == 1) {
      const auto mid = sb_marginal(pots, 0.5 * horizon);
      const auto exact = sb_gaussian_marginal(
          {mu0.component(0).mean(0), std::sqrt(mu0.component(0).covariance(0, 0))},
          {muT.component(0).mean(0), std::sqrt(muT.component(0).covariance(0, 0))}, eps, horizon,
          0.5 * horizon);
      diag["mid_std_grid"] = std::sqrt(mid.variance());
      diag["mid_std_closed_form"] = exact.stddev;
    }
    for (std::size_t i = 0; i < times.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "marginal_%03zu.csv", i);
      write_file(ctx.dir / name, sb_marginal(pots, times[i]).to_csv());
    }
    write_file(ctx.dir / "diagnostics.json", diag.dump(2) + "\n");
    write_manifest(ctx);
    return {kExitOk, ctx.dir, "ok"};
  } catch (const std::exception& e) {
    return {classify(e), {}, e.what()};
  }
}

ExperimentOutcome cmd_gamma(const nlohmann::json& config, const std::filesystem::path& outdir) {
  try {
    RunContext ctx = open_run("gamma", config, outdir);
    StrictConfig top(config);
    check_preamble(top);
    top.get<std::uint64_t>("seed");
    top.get_or<std::string>("output", "");
    const auto problem = parse_problem(top.child("problem"));
    const auto parsed = parse_trainer(top.child("trainer"), ctx.seed);
    auto gc = top.child("gamma");
    const auto lambdas = gc.get<std::vector<double>>("lambdas");
    const auto seeds = gc.get<std::vector<std::uint64_t>>("seeds");
    gc.finish();
    top.finish();

    const auto sweep = gamma_sweep(problem, lambdas, parsed.config, seeds);
    write_file(ctx.dir / "gamma.csv", sweep.to_csv());

    nlohmann::json summary;
    summary["completed"] = sweep.completed;
    summary["message"] = sweep.message;
    nlohmann::json per_lambda = nlohmann::json::array();
    for (double lam : lambdas) {
      double obj = 0.0, sup = 0.0, obj2 = 0.0, sup2 = 0.0;
      Index count = 0;
      for (const auto& row : sweep.rows) {
        if (row.lambda != lam) continue;
        obj += row.objective;
        sup += row.sup_w2;
        obj2 += row.objective * row.objective;
        sup2 += row.sup_w2 * row.sup_w2;
        ++count;
      }
      if (count == 0) continue;
      const double n = static_cast<double>(count);
      per_lambda.push_back({{"lambda", lam},
                            {"objective_mean", obj / n},
                            {"objective_sd", std::sqrt(std::max(obj2 / n - obj * obj / (n * n), 0.0))},
                            {"sup_w2_mean", sup / n},
                            {"sup_w2_sd", std::sqrt(std::max(sup2 / n - sup * sup / (n * n), 0.0))}});
    }
    summary["per_lambda"] = per_lambda;
    write_file(ctx.dir / "summary.json", summary.dump(2) + "\n");
    write_manifest(ctx);
    if (!sweep.completed) return {kExitNumericalAbort, ctx.dir, sweep.message};
    return {kExitOk, ctx.dir, "ok"};
  } catch (const std::exception& e) {
    return {classify(e), {}, e.what()};
  }
}

ExperimentOutcome cmd_stability(const nlohmann::json& config, const std::filesystem::path& outdir) {
  try {
    RunContext ctx = open_run("stability", config, outdir);
    StrictConfig top(config);
    check_preamble(top);
    top.get<std::uint64_t>("seed");
    top.get_or<std::string>("output", "");
    const auto problem = parse_problem(top.child("problem"));
    const auto parsed = parse_trainer(top.child("trainer"), ctx.seed);
    auto sc = top.child("stability");
    StabilityConfig scfg;
    scfg.magnitudes = sc.get<std::vector<double>>("magnitudes");
    scfg.seeds = sc.get<std::vector<std::uint64_t>>("seeds");
    scfg.batch = sc.get_or<Index>("batch", scfg.batch);
    scfg.substeps = sc.get_or<int>("substeps", scfg.substeps);
    const auto axes = sc.get_or<std::vector<std::string>>("axes", {"field-noise", "init-shift"});
    const std::string base_kind = sc.get_or<std::string>("base", "train");
    if (sc.has("modes")) scfg.modes = parse_mode_sets(sc.array("modes"));
    sc.finish();
    top.finish();

    FieldPtr base_field;
    if (base_kind == "teacher") {
      base_field = problem.teacher;
    } else if (base_kind == "train") {
      const TrainedRun run = run_training(problem, parsed);
      if (run.result.history.status != "completed")
        return {kExitNumericalAbort, ctx.dir, run.result.history.status};
      base_field = run.result.field;
    } else {
      throw ConfigError("stability.base must be 'teacher' or 'train'");
    }

    CsvWriter csv({"axis", "magnitude", "w2_deviation", "mode_deviation", "density_deviation"});
    nlohmann::json summary = nlohmann::json::array();
    for (const auto& axis_name : axes) {
      PerturbationAxis axis;
      if (axis_name == "field-noise") axis = PerturbationAxis::FieldNoise;
      else if (axis_name == "init-shift") axis = PerturbationAxis::InitShift;
      else if (axis_name == "endpoint-shift") axis = PerturbationAxis::EndpointShift;
      else if (axis_name == "drift-shift") axis = PerturbationAxis::DriftShift;
      else throw ConfigError("stability: unknown axis '" + axis_name + "'");

      const auto sweep = stability_sweep(*base_field, problem, axis, scfg, &parsed.config);
      for (const auto& p : sweep.points)
        csv.add_row_mixed({axis_name, format_double(p.magnitude), format_double(p.w2_deviation),
                           format_double(p.mode_deviation), format_double(p.density_deviation)});
      summary.push_back({{"axis", axis_name},
                         {"slope_w2", sweep.slope_w2},
                         {"r2_w2", sweep.r2_w2},
                         {"slope_mode", sweep.slope_mode},
                         {"r2_mode", sweep.r2_mode}});
    }
    write_file(ctx.dir / "stability.csv", csv.str());
    write_file(ctx.dir / "summary.json", summary.dump(2) + "\n");
    write_manifest(ctx);
    return {kExitOk, ctx.dir, "ok"};
  } catch (const std::exception& e) {
    return {classify(e), {}, e.what()};
  }
}

ExperimentOutcome cmd_certify(const nlohmann::json& config, const std::filesystem::path& outdir) {
  try {
    RunContext ctx = open_run("certify", config, outdir);
    StrictConfig top(config);
    check_preamble(top);
    top.get<std::uint64_t>("seed");
    top.get_or<std::string>("output", "");
    auto cc = top.child("certify");
    const std::string source = cc.get_or<std::string>("source", "train");
    const double beta_floor = cc.get_or<double>("beta_floor", 0.0);
    const double delta_tot_max = cc.get_or<double>("delta_tot_max", 0.1);
    std::vector<ModeSet> modes, cores;
    if (cc.has("modes")) modes = parse_mode_sets(cc.array("modes"));
    if (cc.has("cores")) cores = parse_mode_sets(cc.array("cores"));
    std::vector<DensityProbe> probes;
    if (cc.has("probes")) probes = parse_probes(cc.array("probes"));
    // cores must geometrically sit inside their modes when both are given
    if (!cores.empty() && cores.size() == modes.size()) {
      for (std::size_t k = 0; k < cores.size(); ++k)
        if (!cores[k].contained_in(modes[k]))
          throw ConfigError("certify: core '" + cores[k].label() +
                            "' is not contained in its mode set");
    }

    CertificateReport rep;
    rep.alpha = 0.05;
    rep.delta_tot_max = delta_tot_max;
    rep.beta_floor = beta_floor;
    rep.seed = ctx.seed;
    rep.caveats = kReportCaveats;

    if (source == "train") {
      rep.model = "ecfm-trained";
      const auto problem = parse_problem(top.child("problem"));
      const auto parsed = parse_trainer(top.child("trainer"), ctx.seed);
      StabilityConfig scfg;
      scfg.magnitudes = cc.get_or<std::vector<double>>("stability_magnitudes",
                                                       {0.02, 0.05, 0.1, 0.2});
      scfg.seeds = cc.get_or<std::vector<std::uint64_t>>("stability_seeds", {1, 2, 3});
      scfg.modes = modes.empty() ? cores : modes;
      scfg.probes = probes;
      cc.finish();
      top.finish();

      const TrainedRun run = run_training(problem, parsed);
      if (run.result.history.status != "completed")
        return {kExitNumericalAbort, ctx.dir, run.result.history.status};
      rep.n_times = problem.grid.size();
      rep.alpha = parsed.config.alpha_conf;
      rep.batch = parsed.config.eval_batch;
      rep.hutchinson_probes =
          parsed.config.hutchinson_probes ? *parsed.config.hutchinson_probes : 0;
      rep.lambda_star = run.lambda_star
                            ? *run.lambda_star
                            : (std::isinf(parsed.config.lambdas.front())
                                   ? std::numeric_limits<double>::infinity()
                                   : parsed.config.lambdas.front());
      rep.lambda_eff_lcb =
          lambda_eff(run.result.final_series, parsed.config.alpha_conf).lambda_lcb;
      if (!modes.empty() || !cores.empty())
        rep.floors = mode_floor_certificate(run.result.eval_trajectory, modes, cores, rep.alpha);
      if (!probes.empty())
        rep.density_floors = density_floor_proxy(
            run.result.eval_trajectory.at(problem.grid.size() - 1), probes, rep.alpha);

      // grid-adequacy advice: exact-divergence rates on a 4x finer grid
      {
        const auto fine_grid = TimeGrid::uniform(problem.grid.horizon(),
                                                 4 * (problem.grid.size() - 1) + 1);
        const auto fine0 = sample(problem.mu0, 4000, ctx.seed ^ 0x6A09E667F3BCC908ULL);
        const auto fine_traj =
            integrate_ode(*run.result.field, fine0, fine_grid, parsed.config.substeps);
        const auto fine_series = rate_series(fine_grid, [&](Index n) {
          return entropy_rate_div(*run.result.field, fine_traj.at(n));
        });
        const auto adequacy = grid_adequacy(fine_series, problem.grid, 0.1);
        nlohmann::json advice;
        advice["lipschitz_hat"] = adequacy.lipschitz_hat;
        advice["max_step"] = adequacy.max_step;
        advice["threshold"] = adequacy.threshold;
        advice["adequate"] = adequacy.adequate;
        advice["refine"] = !adequacy.adequate;
        write_file(ctx.dir / "grid_adequacy.json", advice.dump(2) + "\n");
        if (!adequacy.adequate) rep.caveats.push_back("time grid flagged for refinement");
      }

      const auto noise =
          stability_sweep(*run.result.field, problem, PerturbationAxis::FieldNoise, scfg);
      const auto init =
          stability_sweep(*run.result.field, problem, PerturbationAxis::InitShift, scfg);
      rep.c_w = std::max(noise.slope_w2, init.slope_w2);
      rep.r2_w = std::min(noise.r2_w2, init.r2_w2);
      rep.c_m = std::max(noise.slope_mode, init.slope_mode);
      rep.r2_m = std::min(noise.r2_mode, init.r2_mode);
      if (!probes.empty()) {
        rep.c_rho = std::max(noise.slope_density, init.slope_density);
        rep.r2_rho = std::min(noise.r2_density, init.r2_density);
      }

      write_file(ctx.dir / "history.ndjson", run.result.history.to_ndjson());
      write_file(ctx.dir / "field.json", field_to_json(*run.result.field).dump(2) + "\n");
      write_file(ctx.dir / "series.csv", run.result.final_series.to_csv());
      write_file(ctx.dir / "result.json",
                 train_result_json(run.result, run.lambda_star).dump(2) + "\n");
    } else if (source == "collapse") {
      rep.model = "unconstrained-collapse";
      auto pc = cc.child("collapse_params");
      CollapseParams params;
      params.eps = pc.get<double>("eps");
      params.tau = pc.get<double>("tau");
      params.delta = pc.get_or<double>("delta", params.eps * params.eps);
      params.a = pc.get_or<double>("a", 4.0);
      params.sigma = pc.get_or<double>("sigma", 1.0);
      params.horizon = pc.get_or<double>("horizon", 1.0);
      pc.finish();
      const double lambda_star = cc.get<double>("lambda_star");
      const Index batch = cc.get_or<Index>("batch", 20000);
      cc.finish();
      top.finish();

      const auto diag = run_collapse_term(params, batch, ctx.seed);
      rep.n_times = diag.fine_grid.size();
      rep.batch = batch;
      rep.lambda_star = lambda_star;
      rep.lambda_eff_lcb = diag.lambda_eff_lcb;

      // floors over the pushforward trajectory
      const auto base = sample(params.endpoints(), batch, ctx.seed);
      TrajectoryRecord traj{diag.fine_grid, {}, "pushforward", 1, {}};
      for (Index i = 0; i < diag.fine_grid.size(); ++i) {
        ParticleEnsemble e = base;
        e.time = diag.fine_grid[i];
        for (Index j = 0; j < e.size(); ++j)
          e.points(j, 0) = collapse_map(params, e.time, base.points(j, 0));
        traj.ensembles.push_back(std::move(e));
      }
      if (modes.empty() && cores.empty()) {
        modes = {ModeSet::half_space(Vector::Constant(1, 1.0), 0.0, "plus"),
                 ModeSet::half_space(Vector::Constant(1, -1.0), 0.0, "minus")};
        cores = {ModeSet::interval(params.a - params.sigma, params.a + params.sigma, "core+"),
                 ModeSet::interval(-params.a - params.sigma, -params.a + params.sigma, "core-")};
      }
      rep.floors = mode_floor_certificate(traj, modes, cores, rep.alpha);
      if (!probes.empty())
        rep.density_floors = density_floor_proxy(traj.at(diag.fine_grid.size() / 2), probes,
                                                 rep.alpha);

      // init-shift replay through the map gives the trajectory slope
      std::vector<double> xs, ys;
      for (double mag : {0.02, 0.05, 0.1, 0.2}) {
        double sup = 0.0;
        for (Index i = 0; i < diag.fine_grid.size(); ++i) {
          ParticleEnsemble shifted = base;
          shifted.time = diag.fine_grid[i];
          for (Index j = 0; j < shifted.size(); ++j)
            shifted.points(j, 0) =
                collapse_map(params, shifted.time, base.points(j, 0) + mag);
          sup = std::max(sup, w2(traj.at(i), shifted));
        }
        xs.push_back(mag);
        ys.push_back(sup);
      }
      double slope, r2;
      fit_through_origin(xs, ys, slope, r2);
      rep.c_w = slope;
      rep.r2_w = r2;
      rep.c_m = slope;  // conservative reuse of the trajectory slope
      rep.r2_m = r2;

      write_file(ctx.dir / "collapse.csv", diag.to_csv());
      write_file(ctx.dir / "collapse_summary.json", diag.summary().dump(2) + "\n");
    } else {
      throw ConfigError("certify.source must be 'train' or 'collapse'");
    }

    write_file(ctx.dir / "report.json", rep.to_json().dump(2) + "\n");
    write_file(ctx.dir / "report.md", rep.to_markdown());
    write_manifest(ctx);
    return {kExitOk, ctx.dir, rep.verdict()};
  } catch (const std::exception& e) {
    return {classify(e), {}, e.what()};
  }
}

ExperimentOutcome run_subcommand(const std::string& name, const nlohmann::json& config,
                                 const std::filesystem::path& outdir) {
  if (name == "train") return cmd_train(config, outdir);
  if (name == "collapse") return cmd_collapse(config, outdir);
  if (name == "geodesic") return cmd_geodesic(config, outdir);
  if (name == "gamma") return cmd_gamma(config, outdir);
  if (name == "certify") return cmd_certify(config, outdir);
  if (name == "stability") return cmd_stability(config, outdir);
  return {kExitConfigError, {}, "unknown subcommand '" + name + "'"};
}

}  // namespace ecfm
