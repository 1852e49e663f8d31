#ifndef ECFM_TRANSPORT_HPP
#define ECFM_TRANSPORT_HPP

#include "ecfm/dynamics.hpp"
#include "ecfm/fields.hpp"
#include "ecfm/measures.hpp"
#include "ecfm/trainer.hpp"

#include <string>
#include <vector>

namespace ecfm {

// 1D histogram with equal cells on [lo, hi]; masses sum to one.
class GridDensity {
public:
  GridDensity(double lo, double hi, Vector masses);
  // cell masses from the exact mixture CDF; requires the grid to hold at
  // least 1 - 1e-8 of the total mass.
  static GridDensity from_mixture(const GaussianMixture& mix, double lo, double hi, Index cells);

  Index cells() const { return masses_.size(); }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  double width() const { return (hi_ - lo_) / static_cast<double>(cells()); }
  double center(Index i) const { return lo_ + (static_cast<double>(i) + 0.5) * width(); }
  const Vector& masses() const { return masses_; }

  double l1_distance(const GridDensity& other) const;
  double mean() const;
  double variance() const;
  // aggregate 2x finer grid down to this resolution
  GridDensity coarsened() const;

  std::string to_csv() const;

private:
  double lo_, hi_;
  Vector masses_;
};

// Scalings of the static bridge between two grid densities under the Brownian
// kernel exp(-|x-y|^2 / (4 eps T)) with reflected tails at the grid ends.
struct SchrodingerPotentials {
  double lo, hi;
  Index cells;
  Vector log_f, log_g;
  double eps, horizon;
  Index iterations;
  double final_residual;
};

SchrodingerPotentials sinkhorn(const GridDensity& mu0, const GridDensity& muT, double eps,
                               double horizon, double tol, Index max_iter,
                               std::vector<double>* residual_history = nullptr);

// Endpoint coupling assembled from the potentials and the kernel.
Matrix sinkhorn_plan(const SchrodingerPotentials& pots);

// Bridge time-t marginal: forward-propagated f times backward-propagated g,
// normalized on the same grid.
GridDensity sb_marginal(const SchrodingerPotentials& pots, double t);

struct Gaussian1D {
  double mean;
  double stddev;
};

// Closed-form SB cross-covariance and interpolant variance for single-Gaussian
// endpoints; used as an independent oracle in tests.
double sb_gaussian_cross_covariance(double s0, double s1, double eps, double horizon);
Gaussian1D sb_gaussian_marginal(const Gaussian1D& a, const Gaussian1D& b, double eps,
                                double horizon, double t);

// Displacement interpolation between single-Gaussian endpoints at fraction
// u in [0, 1].
Gaussian1D bb_geodesic(const GaussianMixture& mu0, const GaussianMixture& muT, double u);

// (1 / 4 eps) int E |w|^2 dt by trapezoid over the trajectory.
double kl_control_energy(const Field& w, const TrajectoryRecord& traj, double eps);

// Both sides of the exact objective identity relating the flow-matching cost
// to the Girsanov control energy (entropy convention H = -int rho log rho):
//   1/2 int E|v-u*|^2 = 2 eps KL + eps int dH/dt + eps int E[s.u*] - eps^2/2 int I
// with w = v - u* + eps s and the exact mixture scores of the analytic path.
struct KlIdentityCheck {
  double lhs;
  double rhs;
  double residual;
  double pooled_se;
};

KlIdentityCheck ecfm_kl_identity_check(const Field& v, const Field& u_star,
                                       const MixturePath& path, const TimeGrid& grid, double eps,
                                       Index batch, std::uint64_t seed);

// ---- lambda sweep against the classical geodesic -------------------------------

struct GammaSweepRow {
  double lambda;
  std::uint64_t seed;
  double objective;   // trained fm risk against u* = 0
  double sup_w2;      // sup_t W2(trained trajectory, displacement interpolant)
  double endpoint_w2;
};

struct GammaSweepResult {
  std::vector<GammaSweepRow> rows;
  bool completed;
  std::string message;

  std::string to_csv() const;
};

// Trains at each budget (descending) and measures trajectory distance to the
// classical geodesic. Requires single-Gaussian endpoints and u* = 0.
GammaSweepResult gamma_sweep(const TransportProblem& problem, const std::vector<double>& lambdas,
                             const TrainerConfig& base_config, const std::vector<std::uint64_t>& seeds);

}  // namespace ecfm

#endif  // ECFM_TRANSPORT_HPP
