#ifndef ECFM_ENTROPY_RATE_HPP
#define ECFM_ENTROPY_RATE_HPP

#include "ecfm/dynamics.hpp"
#include "ecfm/fields.hpp"
#include "ecfm/measures.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ecfm {

// One entropy-rate estimate dH/dt at a grid time, in nats per unit time.
// Convention throughout: H(mu) = -int rho log rho.
struct EntropyRateEstimate {
  Index time_index = 0;
  double value = 0.0;
  double std_error = 0.0;  // empirical plug-in; see caveat in certify reports
  Index probes = 0;
  std::string method;  // div-exact | div-hutchinson | fp-form | finite-difference

  void validate() const {
    if (!(std_error >= 0.0) || !std::isfinite(value))
      throw NumericalError("EntropyRateEstimate: invalid value or std error");
  }
};

struct EntropyRateSeries {
  TimeGrid grid;
  std::vector<EntropyRateEstimate> estimates;
  double alpha = 0.05;

  Index size() const { return static_cast<Index>(estimates.size()); }
  void validate() const;
  std::string to_csv() const;  // columns: t,value,std_error,lcb,method
};

struct HutchinsonMode {
  Index probes = 64;
  std::uint64_t seed = 0;
};

// dH/dt = E[div v] over the ensemble. Exact divergence by default, Hutchinson
// probes when requested. The std error pools sample and probe noise.
EntropyRateEstimate entropy_rate_div(const Field& v, const ParticleEnsemble& ens,
                                     const std::optional<HutchinsonMode>& hutchinson = {});

// Fokker-Planck form dH/dt = E[div b] + eps * E||score||^2 with the exact
// mixture score of the time-t law.
EntropyRateEstimate entropy_rate_fp(const Field& drift, double eps, const GaussianMixture& law,
                                    const ParticleEnsemble& ens);

// Finite-difference series from k-NN entropies along a trajectory. Interior
// times get central differences, endpoints one-sided ones.
EntropyRateSeries entropy_rate_fd(const TrajectoryRecord& traj, int k = 5, double alpha = 0.05);

// Interval-average rates (H(t_{i+1}) - H(t_i)) / dt, one estimate per grid
// interval, reported on the left endpoint. This is the estimator used by the
// collapse diagnostics where rates are attributed to whole phase windows.
EntropyRateSeries entropy_rate_fd_intervals(const TrajectoryRecord& traj, int k = 5,
                                            double alpha = 0.05);

// Series over a grid from a per-time estimator callback.
EntropyRateSeries rate_series(const TimeGrid& grid,
                              const std::function<EntropyRateEstimate(Index)>& estimator,
                              double alpha = 0.05);

// Simultaneous lower confidence bounds: value_n - se_n * sqrt(2 log(2(N+1)/alpha)).
std::vector<double> lcb(const EntropyRateSeries& series, double alpha);

double lcb_radius_factor(Index n_times, double alpha);

struct LambdaEff {
  double lambda_max;  // max_n (-value_n)_+
  double lambda_lcb;  // max_n (-lcb_n)_+ >= lambda_max
};

LambdaEff lambda_eff(const EntropyRateSeries& series, double alpha);

}  // namespace ecfm

#endif  // ECFM_ENTROPY_RATE_HPP
