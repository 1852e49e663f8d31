#ifndef ECFM_DYNAMICS_HPP
#define ECFM_DYNAMICS_HPP

#include "ecfm/fields.hpp"
#include "ecfm/measures.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace ecfm {

// Discrete measure curve: one ensemble per grid time, shared particle lineage.
struct TrajectoryRecord {
  TimeGrid grid;
  std::vector<ParticleEnsemble> ensembles;
  std::string integrator;
  int substeps = 1;
  std::vector<double> max_displacement;  // per grid interval

  const ParticleEnsemble& at(Index i) const { return ensembles[static_cast<std::size_t>(i)]; }
  Index n_times() const { return grid.size(); }
  void validate() const;

  // One CSV per time plus a JSON manifest describing the run.
  void export_dir(const std::filesystem::path& dir, const std::string& prefix = "ens") const;
};

// Classical RK4 per particle; deterministic.
TrajectoryRecord integrate_ode(const Field& field, const ParticleEnsemble& start,
                               const TimeGrid& grid, int substeps);

using Diffusivity = std::function<double(double)>;

// Euler-Maruyama with noise scale sqrt(2 eps(t) dt); per-particle streams are
// derived from (seed, particle index) so any worker split gives the same draw.
TrajectoryRecord integrate_sde(const Field& drift, const Diffusivity& eps,
                               const ParticleEnsemble& start, const TimeGrid& grid, int substeps,
                               std::uint64_t seed);

// Current velocity b - eps(t) * score as a composite field.
FieldPtr current_velocity(FieldPtr drift, Diffusivity eps, std::shared_ptr<const ScoreField> score);

// Trapezoidal quadrature of 0.5 * E || v - u_star ||^2 along the trajectory.
double fm_risk(const Field& v, const Field& u_star, const TrajectoryRecord& traj);

// Mean and standard error of 0.5 ||v - u*||^2 at a single time slice.
EntropyEstimate fm_risk_slice(const Field& v, const Field& u_star, const ParticleEnsemble& ens);

}  // namespace ecfm

#endif  // ECFM_DYNAMICS_HPP
