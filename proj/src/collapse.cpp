#include "ecfm/collapse.hpp"

#include "ecfm/io.hpp"
#include "ecfm/rng.hpp"

#include <algorithm>
#include <cmath>

namespace ecfm {

void CollapseParams::validate() const {
  if (eps <= 0.0 || eps >= 0.5) throw ConfigError("CollapseParams: eps in (0, 0.5) required");
  if (delta <= 0.0) throw ConfigError("CollapseParams: delta must be positive");
  if (!(tau > 0.0 && tau < 0.5 * horizon)) throw ConfigError("CollapseParams: tau in (0, T/2)");
  if (a <= 3.0 * sigma) throw ConfigError("CollapseParams: modes must be well separated");
  if (mollifier_fraction <= 0.0 || mollifier_fraction > 0.1)
    throw ConfigError("CollapseParams: mollifier fraction in (0, 0.1]");
  const double tstar = crossing_time();
  const double w = junction_halfwidth();
  if (tstar - w <= 0.0 || tstar + w >= 0.5 * horizon)
    throw ConfigError("CollapseParams: junction does not fit inside the transition window");
}

namespace {

// cosine ramp, C1 on the closed interval
inline double ramp(double u) { return 0.5 * (1.0 - std::cos(M_PI * u)); }
inline double dramp(double u) { return 0.5 * M_PI * std::sin(M_PI * u); }

}  // namespace

CollapseProfile collapse_profile(const CollapseParams& p, double t) {
  if (t < -1e-12 || t > p.horizon + 1e-12)
    throw ConfigError("collapse_profile: t outside [0, T]");
  t = std::min(std::max(t, 0.0), p.horizon);
  const bool mirrored = t > 0.5 * p.horizon;
  const double tt = mirrored ? p.horizon - t : t;
  const double tstar = p.crossing_time();
  const double w = p.junction_halfwidth();

  CollapseProfile out{1.0, 0.0, 0.0, 0.0};
  if (tt <= tstar - w) {
    out.scale = 1.0 - tt / p.tau;
    out.dscale = -1.0 / p.tau;
  } else if (tt < tstar + w) {
    const double u = (tt - (tstar - w)) / (2.0 * w);
    const double r = ramp(u);
    const double dr = dramp(u) / (2.0 * w);
    const double lin = 1.0 - tt / p.tau;
    out.scale = lin + (p.eps - lin) * r;
    out.dscale = (-1.0 / p.tau) * (1.0 - r) + (p.eps - lin) * dr;
    out.offset = p.delta * r;
    out.doffset = p.delta * dr;
  } else {
    out.scale = p.eps;
    out.offset = p.delta;
  }
  if (mirrored) {
    out.dscale = -out.dscale;
    out.doffset = -out.doffset;
  }
  return out;
}

double collapse_map(const CollapseParams& p, double t, double x) {
  const auto pr = collapse_profile(p, t);
  const double sgn = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
  return pr.offset * sgn + pr.scale * x;
}

double collapse_velocity(const CollapseParams& p, double t, double y) {
  const auto pr = collapse_profile(p, t);
  if (y == 0.0) return 0.0;
  const double sgn = y > 0.0 ? 1.0 : -1.0;
  if (std::abs(y) < pr.offset - 1e-12)
    throw ConfigError("collapse_velocity: point outside the range of the map");
  const double x = (y - pr.offset * sgn) / pr.scale;
  return pr.doffset * sgn + pr.dscale * x;
}

Vector CollapseField::eval(const RefConstVec& x, double t) const {
  Vector v(1);
  v(0) = collapse_velocity(params_, t, x(0));
  return v;
}

Matrix CollapseField::jacobian(const RefConstVec&, double t) const {
  const auto pr = collapse_profile(params_, t);
  Matrix j(1, 1);
  j(0, 0) = pr.dscale / pr.scale;
  return j;
}

Matrix CollapseField::eval_many(const RefConstMat& x_rows, double t) const {
  const auto pr = collapse_profile(params_, t);
  Matrix out(x_rows.rows(), 1);
  for (Index i = 0; i < x_rows.rows(); ++i) {
    const double y = x_rows(i, 0);
    if (y == 0.0) {
      out(i, 0) = 0.0;
      continue;
    }
    const double sgn = y > 0.0 ? 1.0 : -1.0;
    if (std::abs(y) < pr.offset - 1e-12)
      throw ConfigError("collapse_velocity: point outside the range of the map");
    out(i, 0) = pr.doffset * sgn + pr.dscale * (y - pr.offset * sgn) / pr.scale;
  }
  return out;
}

Vector CollapseField::divergence_many(const RefConstMat& x_rows, double t) const {
  const auto pr = collapse_profile(params_, t);
  return Vector::Constant(x_rows.rows(), pr.dscale / pr.scale);
}

// ---- diagnostics ----------------------------------------------------------------

std::string CollapseDiagnostics::to_csv() const {
  CsvWriter csv({"t", "entropy", "rate", "M_plus", "M_minus", "m_plus", "m_minus"});
  for (Index i = 0; i < fine_grid.size(); ++i) {
    const std::size_t n = static_cast<std::size_t>(i);
    csv.add_row({fine_grid[i], entropy[n], rate[n], mass_plus[n], mass_minus[n], core_plus[n],
                 core_minus[n]});
  }
  return csv.str();
}

nlohmann::json CollapseDiagnostics::summary() const {
  nlohmann::json j;
  j["eps"] = params.eps;
  j["tau"] = params.tau;
  j["delta"] = params.delta;
  j["rate_coupling"] = params.rate_coupling();
  j["lambda_eff_max"] = lambda_eff_max;
  j["lambda_eff_lcb"] = lambda_eff_lcb;
  j["fm_risk_excess"] = fm_risk_excess;
  j["min_core_mass"] = min_core_mass;
  j["endpoint_w2"] = endpoint_w2;
  j["endpoint_entropy_gap"] = endpoint_entropy_gap;
  return j;
}

std::vector<CollapseParams> collapse_sequence(Index n_terms, double a, double sigma,
                                              double horizon) {
  std::vector<CollapseParams> out;
  for (Index n = 1; n <= n_terms; ++n) {
    CollapseParams p;
    p.eps = 0.04 * std::pow(2.0, -static_cast<double>(n));
    p.tau = 0.1 * std::pow(2.0, -static_cast<double>(n));
    p.delta = p.eps * p.eps;  // delta / eps -> 0 along the ladder
    p.a = a;
    p.sigma = sigma;
    p.horizon = horizon;
    p.validate();
    out.push_back(p);
  }
  return out;
}

namespace {

TimeGrid collapse_diagnostics_grid(const CollapseParams& p) {
  const double tstar = p.crossing_time();
  const double w = p.junction_halfwidth();
  std::vector<double> times;
  auto linspace = [&](double lo, double hi, Index n, bool include_hi) {
    for (Index i = 0; i < n; ++i)
      times.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n));
    if (include_hi) times.push_back(hi);
  };
  linspace(0.0, tstar - w, 8, false);           // squeeze phase
  linspace(tstar - w, tstar + w, 4, false);     // junction
  linspace(tstar + w, p.horizon - tstar - w, 8, false);  // plateau (covers [tau, T - tau])
  linspace(p.horizon - tstar - w, p.horizon - tstar + w, 4, false);
  linspace(p.horizon - tstar + w, p.horizon, 8, true);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end(),
                          [](double x, double y) { return std::abs(x - y) < 1e-15; }),
              times.end());
  return TimeGrid(std::move(times));
}

}  // namespace

CollapseDiagnostics run_collapse_term(const CollapseParams& params, Index batch,
                                      std::uint64_t seed) {
  params.validate();
  const TimeGrid grid = collapse_diagnostics_grid(params);
  const auto base = sample(params.endpoints(), batch, seed);

  TrajectoryRecord traj{grid, {}, "pushforward", 1, {}};
  traj.ensembles.reserve(static_cast<std::size_t>(grid.size()));
  for (Index i = 0; i < grid.size(); ++i) {
    ParticleEnsemble e = base;
    e.time = grid[i];
    const auto pr = collapse_profile(params, grid[i]);
    for (Index j = 0; j < e.size(); ++j) {
      const double x = base.points(j, 0);
      const double sgn = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
      e.points(j, 0) = pr.offset * sgn + pr.scale * x;
    }
    traj.ensembles.push_back(std::move(e));
  }

  CollapseDiagnostics diag{params, grid, {}, {}, {}, {}, {}, {}, {}};

  // entropy and interval rates on the fine grid
  const auto fd = entropy_rate_fd_intervals(traj, 5);
  KnnEntropyOptions kopt;
  diag.entropy.resize(static_cast<std::size_t>(grid.size()));
  diag.entropy_se.resize(static_cast<std::size_t>(grid.size()));
  diag.rate.resize(static_cast<std::size_t>(grid.size()));
  for (Index i = 0; i < grid.size(); ++i) {
    const auto h = differential_entropy(traj.at(i), kopt);
    diag.entropy[static_cast<std::size_t>(i)] = h.value;
    diag.entropy_se[static_cast<std::size_t>(i)] = h.std_error;
    diag.rate[static_cast<std::size_t>(i)] = fd.estimates[static_cast<std::size_t>(i)].value;
  }

  // masses
  const auto plus = ModeSet::half_space(Vector::Constant(1, 1.0), 0.0, "plus");
  const auto minus = ModeSet::half_space(Vector::Constant(1, -1.0), 0.0, "minus");
  const auto core_p = ModeSet::interval(params.a - params.sigma, params.a + params.sigma, "core+");
  const auto core_m = ModeSet::interval(-params.a - params.sigma, -params.a + params.sigma, "core-");
  diag.mass_plus.resize(static_cast<std::size_t>(grid.size()));
  diag.mass_minus.resize(static_cast<std::size_t>(grid.size()));
  diag.core_plus.resize(static_cast<std::size_t>(grid.size()));
  diag.core_minus.resize(static_cast<std::size_t>(grid.size()));
  const double tstar = params.crossing_time();
  const double w = params.junction_halfwidth();
  diag.min_core_mass = 1.0;
  for (Index i = 0; i < grid.size(); ++i) {
    const std::size_t n = static_cast<std::size_t>(i);
    diag.mass_plus[n] = mode_mass(traj.at(i), plus).mass;
    diag.mass_minus[n] = mode_mass(traj.at(i), minus).mass;
    diag.core_plus[n] = mode_mass(traj.at(i), core_p).mass;
    diag.core_minus[n] = mode_mass(traj.at(i), core_m).mass;
    const bool plateau = grid[i] >= tstar + w && grid[i] <= params.horizon - tstar - w;
    if (plateau)
      diag.min_core_mass = std::min({diag.min_core_mass, diag.core_plus[n], diag.core_minus[n]});
  }

  // effective budget from whole-phase average rates: the entropy drop log(eps)
  // happens over the squeeze window [0, tstar + w]
  {
    const double t_contracted = tstar + w;
    Index idx = 0;
    for (Index i = 0; i < grid.size(); ++i)
      if (std::abs(grid[i] - t_contracted) < 1e-12) idx = i;
    std::vector<double> budget_times = {0.0, grid[idx], params.horizon - grid[idx],
                                        params.horizon};
    TimeGrid budget_grid(std::move(budget_times));
    std::vector<Index> pick;
    for (double bt : budget_grid.times()) {
      for (Index i = 0; i < grid.size(); ++i)
        if (std::abs(grid[i] - bt) < 1e-12) pick.push_back(i);
    }
    EntropyRateSeries budget{budget_grid, {}, 0.05};
    for (std::size_t q = 0; q + 1 < pick.size(); ++q) {
      const double dt = grid[pick[q + 1]] - grid[pick[q]];
      EntropyRateEstimate e;
      e.time_index = static_cast<Index>(q);
      e.value = (diag.entropy[static_cast<std::size_t>(pick[q + 1])] -
                 diag.entropy[static_cast<std::size_t>(pick[q])]) /
                dt;
      e.std_error = std::hypot(diag.entropy_se[static_cast<std::size_t>(pick[q + 1])],
                               diag.entropy_se[static_cast<std::size_t>(pick[q])]) /
                    dt;
      e.method = "finite-difference";
      budget.estimates.push_back(e);
    }
    // repeat the last interval so the series covers every grid time
    budget.estimates.push_back(budget.estimates.back());
    budget.estimates.back().time_index = budget_grid.size() - 1;
    const auto le = lambda_eff(budget, 0.05);
    diag.lambda_eff_max = le.lambda_max;
    diag.lambda_eff_lcb = le.lambda_lcb;
  }

  // risk against the near-stationary teacher
  const CollapseField field(params);
  const ZeroField teacher(1, params.horizon);
  diag.fm_risk_excess = fm_risk(field, teacher, traj);

  diag.endpoint_w2 = w2(traj.at(0), traj.at(grid.size() - 1));
  diag.endpoint_entropy_gap =
      std::abs(diag.entropy.back() - diag.entropy.front());
  return diag;
}

std::vector<CollapseDiagnostics> run_collapse_sequence(const std::vector<CollapseParams>& terms,
                                                       Index batch, std::uint64_t seed) {
  std::vector<CollapseDiagnostics> out;
  out.reserve(terms.size());
  for (std::size_t n = 0; n < terms.size(); ++n)
    out.push_back(run_collapse_term(terms[n], batch, splitmix64(seed + n)));
  return out;
}

}  // namespace ecfm
