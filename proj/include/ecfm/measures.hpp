#ifndef ECFM_MEASURES_HPP
#define ECFM_MEASURES_HPP

#include "ecfm/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace ecfm {

// Finite mixture of Gaussians; the endpoint measures of every experiment.
class GaussianMixture {
public:
  struct Component {
    double weight;
    Vector mean;
    Matrix covariance;        // symmetric positive definite
    Matrix cholesky_lower;    // cached factor
    Matrix precision;         // cached inverse
    double log_norm;          // log of the normal density normalizer
  };

  GaussianMixture(std::vector<double> weights, std::vector<Vector> means,
                  std::vector<Matrix> covariances);

  static GaussianMixture single(const Vector& mean, const Matrix& covariance);
  // 1D helpers used throughout the experiments.
  static GaussianMixture gaussian1d(double mean, double variance);
  static GaussianMixture two_mode1d(double a, double sigma);

  Index dim() const { return components_.front().mean.size(); }
  Index size() const { return static_cast<Index>(components_.size()); }
  const Component& component(Index k) const { return components_[static_cast<std::size_t>(k)]; }

  double log_density(const RefConstVec& x) const;
  double density(const RefConstVec& x) const;
  // Exact score, i.e. the gradient of the log density.
  Vector score(const RefConstVec& x) const;
  // Hessian of the log density.
  Matrix score_jacobian(const RefConstVec& x) const;

  // Mixture evolved by the heat semigroup: covariances grow by `added_var * I`.
  GaussianMixture heat_evolved(double added_var) const;
  // Affine image a*x + shift of the mixture.
  GaussianMixture affine_image(double scale, const Vector& shift) const;

  double mean1d() const;
  double variance1d() const;
  // CDF for d=1 mixtures.
  double cdf1d(double x) const;

  nlohmann::json to_json() const;
  static GaussianMixture from_json(const nlohmann::json& j);

private:
  std::vector<Component> components_;
};

// Weighted sample cloud representing one time slice of a measure curve.
struct ParticleEnsemble {
  Matrix points;    // n x d
  Vector weights;   // sums to 1
  double time = 0.0;
  std::uint64_t seed = 0;

  Index size() const { return points.rows(); }
  Index dim() const { return points.cols(); }
  bool equal_weighted(double tol = 1e-12) const;
  void validate() const;

  static ParticleEnsemble from_points(Matrix pts, double time = 0.0, std::uint64_t seed = 0);

  std::string to_csv() const;
  static ParticleEnsemble from_csv(const std::string& body);
};

// Strictly increasing times t_0 = 0 < ... < t_N = T.
class TimeGrid {
public:
  TimeGrid(std::vector<double> times);
  static TimeGrid uniform(double horizon, Index n_times);

  Index size() const { return static_cast<Index>(times_.size()); }
  double operator[](Index i) const { return times_[static_cast<std::size_t>(i)]; }
  double horizon() const { return times_.back(); }
  double max_step() const;
  const std::vector<double>& times() const { return times_; }

private:
  std::vector<double> times_;
};

// Measurable region used for mode-mass queries. Membership is pure.
class ModeSet {
public:
  enum class Kind { HalfSpace, AxisBox, Ball };

  static ModeSet half_space(const Vector& normal, double offset, std::string label = {});
  static ModeSet axis_box(const Vector& lo, const Vector& hi, std::string label = {});
  static ModeSet ball(const Vector& center, double radius, std::string label = {});
  // 1D interval (lo, hi), a common special case of axis_box.
  static ModeSet interval(double lo, double hi, std::string label = {});

  bool contains(const RefConstVec& x) const;
  // Geometric containment check: is this set inside `parent`? Used to verify
  // that cores sit inside their mode sets.
  bool contained_in(const ModeSet& parent) const;

  Kind kind() const { return kind_; }
  const std::string& label() const { return label_; }

  nlohmann::json to_json() const;
  static ModeSet from_json(const nlohmann::json& j);

private:
  ModeSet() = default;
  Kind kind_ = Kind::HalfSpace;
  Vector normal_;   // half-space: {x : normal.x > offset}
  double offset_ = 0.0;
  Vector lo_, hi_;  // axis box corners
  Vector center_;
  double radius_ = 0.0;
  std::string label_;
};

// ---- operations -----------------------------------------------------------

// i.i.d. draws with equal weights; reproducible for a fixed seed.
ParticleEnsemble sample(const GaussianMixture& mix, Index n, std::uint64_t seed, double time = 0.0);

struct KnnEntropyOptions {
  int k = 5;
  bool jitter_duplicates = true;  // perturb exact ties by 1e-12 * data scale
};

struct EntropyEstimate {
  double value;      // nats
  double std_error;  // plug-in standard error of the sample mean term
};

// Kozachenko-Leonenko k-nearest-neighbor estimate of H(mu) = -int rho log rho.
EntropyEstimate differential_entropy(const ParticleEnsemble& ens,
                                     const KnnEntropyOptions& opts = {});

// Monte Carlo estimate of -E[log rho] using the exact mixture density.
EntropyEstimate entropy_exact_mixture(const GaussianMixture& mix, Index n_mc, std::uint64_t seed);

// Monte Carlo estimate of the Fisher information E||grad log rho||^2.
EntropyEstimate fisher_information(const GaussianMixture& mix, Index n_mc, std::uint64_t seed);

// Closed-form entropy of a single Gaussian.
double gaussian_entropy(Index dim, double det_covariance);

// Quadratic Wasserstein distance. d=1 uses the exact quantile coupling (any
// weights); 2 <= d <= 3 uses an exact assignment on equal-weight ensembles of
// equal size n <= 2000.
double w2(const ParticleEnsemble& a, const ParticleEnsemble& b);

// W2 between a 1D ensemble and a closed-form 1D Gaussian via quantile matching.
double w2_gaussian1d(const ParticleEnsemble& a, double mean, double stddev);

// W2 between two 1D Gaussians.
double w2_gaussians1d(double m0, double s0, double m1, double s1);

// Hoeffding half-width for K modes certified jointly at n_times grid times:
// sqrt(log(2 K n_times / alpha) / (2 B)).
double hoeffding_radius(Index batch, double alpha, Index n_modes, Index n_times);

struct ModeMass {
  double mass;
  Index batch;
  double radius(double alpha, Index n_modes, Index n_times) const {
    return hoeffding_radius(batch, alpha, n_modes, n_times);
  }
};

ModeMass mode_mass(const ParticleEnsemble& ens, const ModeSet& region);

}  // namespace ecfm

#endif  // ECFM_MEASURES_HPP
