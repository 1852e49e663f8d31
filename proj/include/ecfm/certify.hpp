#ifndef ECFM_CERTIFY_HPP
#define ECFM_CERTIFY_HPP

#include "ecfm/dynamics.hpp"
#include "ecfm/entropy_rate.hpp"
#include "ecfm/measures.hpp"
#include "ecfm/trainer.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ecfm {

// lambda* = lambda_eff^lcb + delta_safe; with this budget every observed LCB
// residual is <= -delta_safe by construction.
double select_budget(const EntropyRateSeries& series, double alpha, double delta_safe);

struct GridAdequacy {
  double lipschitz_hat;  // max finite-difference slope of the fine rate series
  double max_step;       // coarse grid
  double threshold;      // eps_H / L_hat
  bool adequate;
};

GridAdequacy grid_adequacy(const EntropyRateSeries& fine_series, const TimeGrid& coarse,
                           double eps_h);

struct ModeFloorEntry {
  std::string label;
  double min_empirical;  // min_n hat M
  double floor;          // min_n (hat M - radius)
};

struct ModeFloorCertificate {
  double alpha;
  double radius;  // shared Hoeffding half width
  std::vector<ModeFloorEntry> modes;
  std::vector<ModeFloorEntry> cores;

  double min_core_floor() const;
};

// Simultaneous Hoeffding floors for all (set, time) pairs along a trajectory.
ModeFloorCertificate mode_floor_certificate(const TrajectoryRecord& traj,
                                            const std::vector<ModeSet>& modes,
                                            const std::vector<ModeSet>& cores, double alpha);

struct DensityProbe {
  Vector center;
  double radius;
};

struct DensityFloor {
  DensityProbe probe;
  double occupancy;
  double floor;  // (occupancy - hoeffding radius) / ball volume, can be <= 0
};

std::vector<DensityFloor> density_floor_proxy(const ParticleEnsemble& ens,
                                              const std::vector<DensityProbe>& probes,
                                              double alpha);

// ---- perturbation-stability sweeps -------------------------------------------------

enum class PerturbationAxis { FieldNoise, InitShift, EndpointShift, DriftShift };

struct StabilityPoint {
  double magnitude;
  double w2_deviation;       // sup_t W2(base, perturbed)
  double mode_deviation;     // max_(k,t) |mass difference|
  double density_deviation;  // max over probes |proxy difference|
};

struct StabilitySweep {
  PerturbationAxis axis;
  std::vector<StabilityPoint> points;
  double slope_w2, r2_w2;
  double slope_mode, r2_mode;
  double slope_density, r2_density;
};

struct StabilityConfig {
  std::vector<double> magnitudes;  // >= 4 spanning a decade
  std::vector<std::uint64_t> seeds;
  Index batch = 4000;
  int substeps = 4;
  std::vector<ModeSet> modes;          // for the mode-mass slope
  std::vector<DensityProbe> probes;    // for the density slope
  double alpha = 0.05;
};

// Replay axes (noise, init) reuse the fixed field; retrain axes (endpoint,
// drift) re-optimize the perturbed instance with the given trainer config.
StabilitySweep stability_sweep(const Field& base_field, const TransportProblem& problem,
                               PerturbationAxis axis, const StabilityConfig& config,
                               const TrainerConfig* retrain_config = nullptr);

// through-origin least squares with uncentered R^2
void fit_through_origin(const std::vector<double>& x, const std::vector<double>& y, double& slope,
                        double& r2);

// ---- report ----------------------------------------------------------------------

struct CertificateReport {
  std::string model;
  Index n_times = 0;
  double alpha = 0.05;
  std::optional<double> lambda_star;
  std::optional<double> lambda_eff_lcb;
  std::optional<ModeFloorCertificate> floors;
  std::vector<DensityFloor> density_floors;
  std::optional<double> c_w, r2_w;        // trajectory slope
  std::optional<double> c_m, r2_m;        // mode-mass slope
  std::optional<double> c_rho, r2_rho;    // density slope
  double delta_tot_max = 0.1;
  double beta_floor = 0.0;                // required certified core floor
  Index batch = 0;
  Index hutchinson_probes = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> caveats;

  // deployment floors: certified floor minus C_M * Delta_tot^max
  std::map<std::string, double> deployment_floors() const;
  std::string verdict() const;  // feasible | infeasible | incomplete

  nlohmann::json to_json() const;
  std::string to_markdown() const;
};

}  // namespace ecfm

#endif  // ECFM_CERTIFY_HPP
