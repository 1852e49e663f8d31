#include "ecfm/certify.hpp"

#include "ecfm/io.hpp"
#include "ecfm/rng.hpp"

#include <cmath>

namespace ecfm {

double select_budget(const EntropyRateSeries& series, double alpha, double delta_safe) {
  if (delta_safe < 0.0) throw ConfigError("select_budget: delta_safe must be nonnegative");
  return lambda_eff(series, alpha).lambda_lcb + delta_safe;
}

GridAdequacy grid_adequacy(const EntropyRateSeries& fine_series, const TimeGrid& coarse,
                           double eps_h) {
  if (eps_h <= 0.0) throw ConfigError("grid_adequacy: eps_h must be positive");
  const auto& grid = fine_series.grid;
  double lip = 0.0;
  for (Index i = 0; i + 1 < grid.size(); ++i) {
    const double dv = fine_series.estimates[static_cast<std::size_t>(i + 1)].value -
                      fine_series.estimates[static_cast<std::size_t>(i)].value;
    lip = std::max(lip, std::abs(dv) / (grid[i + 1] - grid[i]));
  }
  const double threshold =
      lip > 0.0 ? eps_h / lip : std::numeric_limits<double>::infinity();
  return {lip, coarse.max_step(), threshold, coarse.max_step() <= threshold};
}

double ModeFloorCertificate::min_core_floor() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& c : cores) m = std::min(m, c.floor);
  if (cores.empty())
    for (const auto& c : modes) m = std::min(m, c.floor);
  return m;
}

ModeFloorCertificate mode_floor_certificate(const TrajectoryRecord& traj,
                                            const std::vector<ModeSet>& modes,
                                            const std::vector<ModeSet>& cores, double alpha) {
  traj.validate();
  if (modes.empty()) throw ConfigError("mode_floor_certificate: no mode sets");
  const Index n_sets = static_cast<Index>(modes.size() + cores.size());
  const double radius = hoeffding_radius(traj.at(0).size(), alpha, n_sets, traj.n_times());

  auto certify = [&](const std::vector<ModeSet>& sets) {
    std::vector<ModeFloorEntry> out;
    for (const auto& set : sets) {
      double min_mass = std::numeric_limits<double>::infinity();
      for (Index n = 0; n < traj.n_times(); ++n)
        min_mass = std::min(min_mass, mode_mass(traj.at(n), set).mass);
      out.push_back({set.label(), min_mass, min_mass - radius});
    }
    return out;
  };
  return {alpha, radius, certify(modes), certify(cores)};
}

std::vector<DensityFloor> density_floor_proxy(const ParticleEnsemble& ens,
                                              const std::vector<DensityProbe>& probes,
                                              double alpha) {
  ens.validate();
  std::vector<DensityFloor> out;
  const double radius =
      hoeffding_radius(ens.size(), alpha, static_cast<Index>(probes.size()), 1);
  for (const auto& probe : probes) {
    if (probe.radius <= 0.0) throw ConfigError("density_floor_proxy: probe radius must be > 0");
    const auto region = ModeSet::ball(probe.center, probe.radius);
    const double occ = mode_mass(ens, region).mass;
    const double d = static_cast<double>(ens.dim());
    const double log_vol = d * std::log(probe.radius) + 0.5 * d * std::log(M_PI) -
                           std::lgamma(0.5 * d + 1.0);
    out.push_back({probe, occ, (occ - radius) / std::exp(log_vol)});
  }
  return out;
}

void fit_through_origin(const std::vector<double>& x, const std::vector<double>& y, double& slope,
                        double& r2) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("fit_through_origin: bad inputs");
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
  }
  slope = sxy / sxx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - slope * x[i];
    ss_res += r * r;
  }
  r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
}

// ---- stability sweeps ----------------------------------------------------------------

namespace {

std::vector<std::vector<double>> collect_masses(const TrajectoryRecord& traj,
                                                const std::vector<ModeSet>& modes) {
  std::vector<std::vector<double>> out(modes.size());
  for (std::size_t k = 0; k < modes.size(); ++k) {
    out[k].resize(static_cast<std::size_t>(traj.n_times()));
    for (Index n = 0; n < traj.n_times(); ++n)
      out[k][static_cast<std::size_t>(n)] = mode_mass(traj.at(n), modes[k]).mass;
  }
  return out;
}

std::vector<double> collect_density(const TrajectoryRecord& traj,
                                    const std::vector<DensityProbe>& probes, double alpha) {
  std::vector<double> out;
  if (probes.empty()) return out;
  const auto floors = density_floor_proxy(traj.at(traj.n_times() - 1), probes, alpha);
  for (const auto& f : floors) out.push_back(f.floor);
  return out;
}

double sup_w2(const TrajectoryRecord& a, const TrajectoryRecord& b) {
  double s = 0.0;
  for (Index n = 0; n < a.n_times(); ++n) s = std::max(s, w2(a.at(n), b.at(n)));
  return s;
}

// random RBF noise field normalized to unit L2(mu) norm along the trajectory
FieldPtr unit_noise_field(const TrajectoryRecord& base, double horizon, std::uint64_t seed) {
  const Index d = base.at(0).dim();
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (Index n = 0; n < base.n_times(); ++n) {
    lo = std::min(lo, base.at(n).points.minCoeff());
    hi = std::max(hi, base.at(n).points.maxCoeff());
  }
  const Index m = 8;
  Matrix centers(m, d);
  Rng rng(seed);
  for (Index i = 0; i < m; ++i)
    for (Index c = 0; c < d; ++c) centers(i, c) = rng.uniform(lo, hi);
  auto noise = std::make_shared<RbfField>(
      RbfField::zeros(centers, 0.35 * (hi - lo), {0.0}, horizon, d));
  for (Index i = 0; i < m; ++i)
    for (Index c = 0; c < d; ++c) noise->knot(0).rbf_weights(i, c) = rng.normal();

  // normalize against the trajectory measure
  double energy = 0.0;
  for (Index n = 0; n + 1 < base.n_times(); ++n) {
    const double dt = base.grid[n + 1] - base.grid[n];
    const double e0 = noise->eval_many(base.at(n).points, base.at(n).time)
                          .rowwise()
                          .squaredNorm()
                          .mean();
    const double e1 = noise->eval_many(base.at(n + 1).points, base.at(n + 1).time)
                          .rowwise()
                          .squaredNorm()
                          .mean();
    energy += 0.5 * dt * (e0 + e1);
  }
  const double scale = 1.0 / std::sqrt(std::max(energy, 1e-300));
  noise->knot(0).rbf_weights *= scale;
  return noise;
}

}  // namespace

StabilitySweep stability_sweep(const Field& base_field, const TransportProblem& problem,
                               PerturbationAxis axis, const StabilityConfig& config,
                               const TrainerConfig* retrain_config) {
  if (config.magnitudes.size() < 2) throw ConfigError("stability_sweep: need magnitudes");
  if (config.seeds.empty()) throw ConfigError("stability_sweep: need seeds");
  const bool retrains =
      axis == PerturbationAxis::EndpointShift || axis == PerturbationAxis::DriftShift;
  if (retrains && retrain_config == nullptr)
    throw ConfigError("stability_sweep: retraining axis requires a trainer config");

  StabilitySweep sweep;
  sweep.axis = axis;

  for (std::uint64_t seed : config.seeds) {
    const auto ens0 = sample(problem.mu0, config.batch, seed);
    const auto base = integrate_ode(base_field, ens0, problem.grid, config.substeps);
    const auto base_masses = collect_masses(base, config.modes);
    const auto base_density = collect_density(base, config.probes, config.alpha);

    for (double mag : config.magnitudes) {
      TrajectoryRecord pert{problem.grid, {}, "", 0, {}};
      switch (axis) {
        case PerturbationAxis::FieldNoise: {
          auto noise = unit_noise_field(base, problem.grid.horizon(), seed ^ 0xA5F152EDULL);
          // share the Field interface without owning the base field
          struct Shim final : Field {
            const Field* base;
            FieldPtr noise;
            double mag;
            Index dim() const override { return base->dim(); }
            double horizon() const override { return base->horizon(); }
            Vector eval(const RefConstVec& x, double t) const override {
              return base->eval(x, t) + mag * noise->eval(x, t);
            }
            Matrix jacobian(const RefConstVec& x, double t) const override {
              return base->jacobian(x, t) + mag * noise->jacobian(x, t);
            }
            Matrix eval_many(const RefConstMat& x, double t) const override {
              return base->eval_many(x, t) + mag * noise->eval_many(x, t);
            }
            Vector divergence_many(const RefConstMat& x, double t) const override {
              return base->divergence_many(x, t) + mag * noise->divergence_many(x, t);
            }
          };
          Shim shim;
          shim.base = &base_field;
          shim.noise = noise;
          shim.mag = mag;
          pert = integrate_ode(shim, ens0, problem.grid, config.substeps);
          break;
        }
        case PerturbationAxis::InitShift: {
          ParticleEnsemble shifted = ens0;
          shifted.points.col(0).array() += mag;
          pert = integrate_ode(base_field, shifted, problem.grid, config.substeps);
          break;
        }
        case PerturbationAxis::EndpointShift: {
          TransportProblem moved = problem;
          Vector shift = Vector::Zero(problem.muT.dim());
          shift(0) = mag;
          moved.muT = problem.muT.affine_image(1.0, shift);
          const double m0 = moved.mu0.component(0).mean(0);
          const double s0 = std::sqrt(moved.mu0.component(0).covariance(0, 0));
          const double m1 = moved.muT.component(0).mean(0);
          const double s1 = std::sqrt(moved.muT.component(0).covariance(0, 0));
          moved.teacher = std::make_shared<GaussianInterpolantField>(m0, s0, m1, s1,
                                                                     problem.grid.horizon());
          TrainerConfig cfg = *retrain_config;
          cfg.seed = seed;
          const auto tr = train(moved, cfg);
          pert = integrate_ode(*tr.field, ens0, problem.grid, config.substeps);
          break;
        }
        case PerturbationAxis::DriftShift: {
          TransportProblem moved = problem;
          Vector drift = Vector::Zero(problem.mu0.dim());
          drift(0) = mag;
          auto bump = std::make_shared<AffineField>(
              Matrix::Zero(problem.mu0.dim(), problem.mu0.dim()), drift,
              problem.grid.horizon());
          moved.teacher = std::make_shared<LinearCombinationField>(1.0, problem.teacher, 1.0, bump);
          TrainerConfig cfg = *retrain_config;
          cfg.seed = seed;
          const auto tr = train(moved, cfg);
          pert = integrate_ode(*tr.field, ens0, problem.grid, config.substeps);
          break;
        }
      }

      StabilityPoint point;
      point.magnitude = mag;
      point.w2_deviation = sup_w2(base, pert);
      point.mode_deviation = 0.0;
      const auto pert_masses = collect_masses(pert, config.modes);
      for (std::size_t k = 0; k < pert_masses.size(); ++k)
        for (std::size_t n = 0; n < pert_masses[k].size(); ++n)
          point.mode_deviation =
              std::max(point.mode_deviation, std::abs(pert_masses[k][n] - base_masses[k][n]));
      point.density_deviation = 0.0;
      const auto pert_density = collect_density(pert, config.probes, config.alpha);
      for (std::size_t k = 0; k < pert_density.size(); ++k)
        point.density_deviation =
            std::max(point.density_deviation, std::abs(pert_density[k] - base_density[k]));
      sweep.points.push_back(point);
    }
  }

  std::vector<double> xs, yw, ym, yd;
  for (const auto& p : sweep.points) {
    xs.push_back(p.magnitude);
    yw.push_back(p.w2_deviation);
    ym.push_back(p.mode_deviation);
    yd.push_back(p.density_deviation);
  }
  fit_through_origin(xs, yw, sweep.slope_w2, sweep.r2_w2);
  if (config.modes.empty()) {
    sweep.slope_mode = 0.0;
    sweep.r2_mode = 1.0;
  } else {
    fit_through_origin(xs, ym, sweep.slope_mode, sweep.r2_mode);
  }
  if (config.probes.empty()) {
    sweep.slope_density = 0.0;
    sweep.r2_density = 1.0;
  } else {
    fit_through_origin(xs, yd, sweep.slope_density, sweep.r2_density);
  }
  return sweep;
}

// ---- report ------------------------------------------------------------------------

std::map<std::string, double> CertificateReport::deployment_floors() const {
  std::map<std::string, double> out;
  if (!floors || !c_m) return out;
  for (const auto& c : floors->cores)
    out[c.label] = c.floor - *c_m * delta_tot_max;
  return out;
}

std::string CertificateReport::verdict() const {
  if (!lambda_star || !lambda_eff_lcb || !floors || !c_w) return "incomplete";
  const bool budget_ok = *lambda_eff_lcb <= *lambda_star;
  const bool floors_ok = floors->min_core_floor() >= beta_floor;
  return budget_ok && floors_ok ? "feasible" : "infeasible";
}

nlohmann::json CertificateReport::to_json() const {
  nlohmann::json j;
  j["version"] = "ecfm-report-v1";
  j["model"] = model;
  j["n_times"] = n_times;
  j["alpha"] = alpha;
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json("not-measured");
  };
  j["lambda_star"] = opt(lambda_star);
  j["lambda_eff_lcb"] = opt(lambda_eff_lcb);
  if (floors) {
    nlohmann::json fm = nlohmann::json::array();
    for (const auto& e : floors->modes)
      fm.push_back({{"label", e.label}, {"min_empirical", e.min_empirical}, {"floor", e.floor}});
    nlohmann::json fc = nlohmann::json::array();
    for (const auto& e : floors->cores)
      fc.push_back({{"label", e.label}, {"min_empirical", e.min_empirical}, {"floor", e.floor}});
    j["mode_floors"] = fm;
    j["core_floors"] = fc;
    j["hoeffding_radius"] = floors->radius;
  } else {
    j["mode_floors"] = "not-measured";
    j["core_floors"] = "not-measured";
  }
  if (!density_floors.empty()) {
    nlohmann::json df = nlohmann::json::array();
    for (const auto& f : density_floors)
      df.push_back({{"center", f.probe.center(0)},
                    {"radius", f.probe.radius},
                    {"occupancy", f.occupancy},
                    {"floor", f.floor}});
    j["density_floors"] = df;
  } else {
    j["density_floors"] = "not-measured";
  }
  j["stability"] = {{"C_W", opt(c_w)},    {"R2_W", opt(r2_w)},     {"C_M", opt(c_m)},
                    {"R2_M", opt(r2_m)},  {"C_rho", opt(c_rho)},   {"R2_rho", opt(r2_rho)},
                    {"label", "empirical"}};
  j["delta_tot_max"] = delta_tot_max;
  j["beta_floor"] = beta_floor;
  nlohmann::json dep;
  for (const auto& [label, value] : deployment_floors()) dep[label] = value;
  j["deployment_floors"] = dep;
  j["verdict"] = verdict();
  j["settings"] = {{"batch", batch}, {"hutchinson_probes", hutchinson_probes}, {"seed", seed}};
  j["caveats"] = caveats;
  return j;
}

std::string CertificateReport::to_markdown() const {
  const auto fmt = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string("n/a");
  };
  std::optional<double> min_core;
  if (floors) min_core = floors->min_core_floor();
  std::optional<double> robust_floor;
  const auto dep = deployment_floors();
  for (const auto& [label, value] : dep)
    robust_floor = robust_floor ? std::min(*robust_floor, value) : value;

  std::string md;
  md += "| Model | lambda* | lambda_eff^LCB | min core floor | Feasible? | C_W | Robust floor @ "
        "Delta_tot^max |\n";
  md += "|---|---|---|---|---|---|---|\n";
  md += "| " + model + " | " + fmt(lambda_star) + " | " + fmt(lambda_eff_lcb) + " | " +
        fmt(min_core) + " | " + verdict() + " | " + fmt(c_w) + " | " + fmt(robust_floor) + " |\n";
  return md;
}

}  // namespace ecfm
