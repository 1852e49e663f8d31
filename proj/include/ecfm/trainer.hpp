#ifndef ECFM_TRAINER_HPP
#define ECFM_TRAINER_HPP

#include "ecfm/dynamics.hpp"
#include "ecfm/entropy_rate.hpp"
#include "ecfm/fields.hpp"
#include "ecfm/measures.hpp"

#include <json.hpp>

#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ecfm {

// Sentinel disabling the entropy-rate constraint at a time bin.
constexpr double kLambdaUnconstrained = std::numeric_limits<double>::infinity();

// Endpoints, reference field for the reported objective, and the regression
// teacher that keeps the learned flow transport-consistent.
struct TransportProblem {
  GaussianMixture mu0;
  GaussianMixture muT;
  TimeGrid grid;
  FieldPtr u_star;   // objective reference (zero for pure transport)
  FieldPtr teacher;  // regression target; must itself transport mu0 to muT
};

// 1D two-Gaussian pure-transport problem with the closed-form displacement
// interpolant as teacher and u* = 0.
TransportProblem pure_transport_problem(double m0, double s0, double m1, double s1,
                                        const TimeGrid& grid);

struct ScheduleCoefficients {
  double base = 0.1;
  double decay_at = 50.0;  // value/(1 + k/decay_at)
  double at(Index k) const { return base / (1.0 + static_cast<double>(k) / decay_at); }
};

struct LambdaScheduler {
  bool enabled = false;
  ScheduleCoefficients zeta{0.05, 2000.0};
  double margin = 0.1;       // gamma_n
  double lambda_min = 0.0;
  double lambda_max = 10.0;
};

struct ModeConstraint {
  ModeSet core;
  double floor = 0.0;  // target beta_k
};

struct TrainerConfig {
  std::vector<double> lambdas;       // one per grid time, or single value broadcast
  double rho = 10.0;                 // quadratic penalty weight
  ScheduleCoefficients alpha{1.0, 200.0};   // primal step
  ScheduleCoefficients beta{0.5, 400.0};    // dual step
  LambdaScheduler scheduler;
  Index batch = 2000;
  Index eval_batch = 8000;
  bool robust = true;                // use LCB residuals
  double alpha_conf = 0.05;
  // training-time tightening: constraints are enforced at lambda - margin so
  // the converged iterate is strictly feasible at lambda itself
  double constraint_margin = 0.0;
  Index max_outer = 300;
  bool recompute_fresh = true;       // dual update with a re-simulated residual
  int substeps = 4;
  Index rbf_centers = 12;
  std::uint64_t seed = 0;
  std::optional<Index> hutchinson_probes;  // default: exact divergence
  std::vector<ModeConstraint> mode_constraints;

  void validate(Index n_times) const;
  std::vector<double> lambda_vector(Index n_times) const;
};

struct DualState {
  Vector eta;         // one multiplier per grid time, >= 0
  Matrix nu;          // optional mode multipliers, n_modes x n_times, >= 0

  void project() {
    eta = eta.cwiseMax(0.0);
    if (nu.size() > 0) nu = nu.cwiseMax(0.0);
  }
};

struct TrainIterationRecord {
  Index k = 0;
  double fit_loss = 0.0;
  double objective = 0.0;       // fm risk against u_star
  double aug_lagrangian = 0.0;
  std::vector<double> residuals;
  std::vector<double> eta;
  std::vector<double> lambdas;
  bool feasible = false;
  double grad_norm = 0.0;
  // populated only when mode constraints are configured; the duals act as
  // monitors because indicator masses carry no frozen-sample gradient
  double max_mode_residual = 0.0;
  double max_mode_multiplier = 0.0;

  nlohmann::json to_json() const;
};

struct TrainHistory {
  std::vector<TrainIterationRecord> records;
  std::string status;  // "converged" | "max-iterations" | "aborted"

  std::string to_ndjson() const;
};

struct TrainResult {
  std::shared_ptr<RbfField> field;
  TrainHistory history;
  EntropyRateSeries final_series;     // exact-divergence series on the eval batch
  std::vector<double> final_residuals;
  std::vector<double> final_eta;
  std::vector<double> final_lambdas;
  double final_objective = 0.0;       // fm risk against u_star
  double endpoint_w2 = 0.0;           // trajectory end vs target sample
  TrajectoryRecord eval_trajectory;
  Matrix final_nu;                    // mode multipliers, n_constraints x n_times
};

// ---- ingredients exposed for tests and reuse --------------------------------------

// g_n = -rate_n - lambda_n with the robust variant subtracting the LCB radius.
double residual(const EntropyRateEstimate& rate, double lambda, bool robust, double radius_factor);

struct AugLagrangian {
  double value;
  // gradient blocks per knot, same shapes as RbfKnot
  std::vector<RbfKnot> gradient;
};

// Value and exact gradient of L_fit + sum_n (eta_n g_n + rho/2 (g_n)_+^2) under
// frozen per-time samples. Loss and residuals are linear/quadratic in the
// parameters, so the gradient is closed form.
AugLagrangian augmented_lagrangian(const RbfField& field, const Field& teacher,
                                   const std::vector<ParticleEnsemble>& batches,
                                   const std::vector<double>& quad_weights, const Vector& eta,
                                   const std::vector<double>& g_values,
                                   const std::vector<double>& lambdas, double rho);

// eta <- [eta + beta_k g]_+
Vector dual_step(const Vector& eta, const std::vector<double>& residuals, double beta_k);

// lambda_n <- clamp(lambda_n + zeta_k (rate_n + margin_n), [min, max])
std::vector<double> schedule_lambda(const std::vector<double>& lambdas,
                                    const std::vector<double>& rates, double margin,
                                    double zeta_k, double lambda_min, double lambda_max);

// h = floor - empirical core mass.
double mode_residual(const ParticleEnsemble& ens, const ModeSet& core, double floor);

// Complementary slackness margin: max_n min(eta_n, (-g_n)_+) - 0.05 max(1, eta_n);
// nonpositive when slackness holds everywhere.
double complementary_slackness_gap(const std::vector<double>& eta,
                                   const std::vector<double>& residuals);

TrainResult train(const TransportProblem& problem, const TrainerConfig& config);

}  // namespace ecfm

#endif  // ECFM_TRAINER_HPP
