#include "ecfm/dynamics.hpp"

#include "ecfm/io.hpp"
#include "ecfm/rng.hpp"

#include <cmath>

namespace ecfm {

void TrajectoryRecord::validate() const {
  if (static_cast<Index>(ensembles.size()) != grid.size())
    throw ConfigError("TrajectoryRecord: one ensemble per grid time required");
  const Index n = ensembles.front().size();
  for (Index i = 0; i < grid.size(); ++i) {
    const auto& e = ensembles[static_cast<std::size_t>(i)];
    if (e.size() != n) throw ConfigError("TrajectoryRecord: ensemble sizes differ");
    if (std::abs(e.time - grid[i]) > 1e-12)
      throw ConfigError("TrajectoryRecord: ensemble time does not match grid");
    if (std::abs(e.weights.sum() - 1.0) > 1e-12)
      throw ConfigError("TrajectoryRecord: weights must sum to 1 at every time");
  }
}

void TrajectoryRecord::export_dir(const std::filesystem::path& dir, const std::string& prefix) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["times"] = grid.times();
  manifest["integrator"] = integrator;
  manifest["substeps"] = substeps;
  manifest["n"] = ensembles.front().size();
  manifest["d"] = ensembles.front().dim();
  manifest["seed"] = ensembles.front().seed;
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < ensembles.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_t%03zu.csv", prefix.c_str(), i);
    write_file(dir / name, ensembles[i].to_csv());
    files.push_back(name);
  }
  manifest["files"] = files;
  write_file(dir / (prefix + "_manifest.json"), manifest.dump(2) + "\n");
}

namespace {

void check_finite(const Matrix& pts, double t, const char* what) {
  if (pts.allFinite()) return;
  for (Index i = 0; i < pts.rows(); ++i)
    if (!pts.row(i).allFinite())
      throw NumericalError(std::string(what) + ": non-finite state for particle " +
                           std::to_string(i) + " at t=" + format_double(t));
  throw NumericalError(std::string(what) + ": non-finite state");
}

}  // namespace

TrajectoryRecord integrate_ode(const Field& field, const ParticleEnsemble& start,
                               const TimeGrid& grid, int substeps) {
  start.validate();
  if (substeps < 1) throw ConfigError("integrate_ode: substeps must be >= 1");
  TrajectoryRecord traj{grid, {}, "rk4", substeps, {}};
  traj.ensembles.reserve(static_cast<std::size_t>(grid.size()));

  ParticleEnsemble current = start;
  current.time = grid[0];
  traj.ensembles.push_back(current);

  for (Index g = 1; g < grid.size(); ++g) {
    const double t0 = grid[g - 1];
    const double t1 = grid[g];
    const double h = (t1 - t0) / substeps;
    Matrix x = current.points;
    const Matrix x_before = x;
    for (int s = 0; s < substeps; ++s) {
      const double ts = t0 + s * h;
      const Matrix k1 = field.eval_many(x, ts);
      const Matrix k2 = field.eval_many(x + 0.5 * h * k1, ts + 0.5 * h);
      const Matrix k3 = field.eval_many(x + 0.5 * h * k2, ts + 0.5 * h);
      const Matrix k4 = field.eval_many(x + h * k3, std::min(ts + h, grid.horizon()));
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    check_finite(x, t1, "integrate_ode");
    const double max_disp = (x - x_before).rowwise().norm().maxCoeff();
    current.points = std::move(x);
    current.time = t1;
    traj.ensembles.push_back(current);
    traj.max_displacement.push_back(max_disp);
  }
  return traj;
}

TrajectoryRecord integrate_sde(const Field& drift, const Diffusivity& eps,
                               const ParticleEnsemble& start, const TimeGrid& grid, int substeps,
                               std::uint64_t seed) {
  start.validate();
  if (substeps < 1) throw ConfigError("integrate_sde: substeps must be >= 1");
  TrajectoryRecord traj{grid, {}, "euler-maruyama", substeps, {}};
  traj.ensembles.reserve(static_cast<std::size_t>(grid.size()));

  ParticleEnsemble current = start;
  current.time = grid[0];
  traj.ensembles.push_back(current);

  const Index n = start.size();
  const Index d = start.dim();
  Rng base(seed);
  // per-particle noise streams derived from (seed, particle, interval)
  for (Index g = 1; g < grid.size(); ++g) {
    const double t0 = grid[g - 1];
    const double t1 = grid[g];
    const double h = (t1 - t0) / substeps;
    Matrix x = current.points;
    const Matrix x_before = x;
    for (int s = 0; s < substeps; ++s) {
      const double ts = t0 + s * h;
      const double e = eps(ts);
      if (e < 0.0) throw ConfigError("integrate_sde: diffusivity must be nonnegative");
      x += h * drift.eval_many(x, ts);
      if (e > 0.0) {
        const double scale = std::sqrt(2.0 * e * h);
        parallel_for(n, [&](Index lo, Index hi) {
          for (Index i = lo; i < hi; ++i) {
            Rng r = base.derive(static_cast<std::uint64_t>(i) * 1000003ULL +
                                static_cast<std::uint64_t>(g) * 31ULL +
                                static_cast<std::uint64_t>(s));
            for (Index c = 0; c < d; ++c) x(i, c) += scale * r.normal();
          }
        });
      }
    }
    check_finite(x, t1, "integrate_sde");
    const double max_disp = (x - x_before).rowwise().norm().maxCoeff();
    current.points = std::move(x);
    current.time = t1;
    traj.ensembles.push_back(current);
    traj.max_displacement.push_back(max_disp);
  }
  return traj;
}

FieldPtr current_velocity(FieldPtr drift, Diffusivity eps,
                          std::shared_ptr<const ScoreField> score) {
  auto scaled_score = std::make_shared<TimeScaledField>(std::move(eps), std::move(score));
  return std::make_shared<LinearCombinationField>(1.0, std::move(drift), -1.0,
                                                  std::move(scaled_score));
}

EntropyEstimate fm_risk_slice(const Field& v, const Field& u_star, const ParticleEnsemble& ens) {
  const Index n = ens.size();
  const Matrix diff = v.eval_many(ens.points, ens.time) - u_star.eval_many(ens.points, ens.time);
  const Vector vals = 0.5 * diff.rowwise().squaredNorm();
  const double mean = vals.mean();
  const double var = (vals.array() - mean).square().sum() / std::max<Index>(n - 1, 1);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

double fm_risk(const Field& v, const Field& u_star, const TrajectoryRecord& traj) {
  double total = 0.0;
  std::vector<double> slice(static_cast<std::size_t>(traj.n_times()));
  for (Index i = 0; i < traj.n_times(); ++i)
    slice[static_cast<std::size_t>(i)] = fm_risk_slice(v, u_star, traj.at(i)).value;
  for (Index i = 0; i + 1 < traj.n_times(); ++i) {
    const double dt = traj.grid[i + 1] - traj.grid[i];
    total += 0.5 * dt *
             (slice[static_cast<std::size_t>(i)] + slice[static_cast<std::size_t>(i + 1)]);
  }
  return total;
}

}  // namespace ecfm
