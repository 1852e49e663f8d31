#ifndef ECFM_FIELDS_HPP
#define ECFM_FIELDS_HPP

#include "ecfm/measures.hpp"
#include "ecfm/types.hpp"

#include <json.hpp>

#include <functional>
#include <memory>
#include <vector>

namespace ecfm {

// Velocity field with exact Jacobian information. Evaluation is pure; fields
// are immutable once built.
class Field {
public:
  virtual ~Field() = default;
  virtual Index dim() const = 0;
  virtual double horizon() const = 0;
  virtual Vector eval(const RefConstVec& x, double t) const = 0;
  virtual Matrix jacobian(const RefConstVec& x, double t) const = 0;
  virtual double divergence(const RefConstVec& x, double t) const {
    return jacobian(x, t).trace();
  }
  // Jacobian-vector product; dense fallback.
  virtual Vector jvp(const RefConstVec& x, double t, const RefConstVec& v) const {
    return jacobian(x, t) * v;
  }
  // Batched evaluation over rows of X; overridden where a vectorized form exists.
  virtual Matrix eval_many(const RefConstMat& x_rows, double t) const {
    Matrix out(x_rows.rows(), x_rows.cols());
    for (Index i = 0; i < x_rows.rows(); ++i)
      out.row(i) = eval(x_rows.row(i).transpose(), t).transpose();
    return out;
  }
  virtual Vector divergence_many(const RefConstMat& x_rows, double t) const {
    Vector out(x_rows.rows());
    for (Index i = 0; i < x_rows.rows(); ++i)
      out(i) = divergence(x_rows.row(i).transpose(), t);
    return out;
  }

protected:
  void check_time(double t) const {
    if (t < -1e-12 || t > horizon() + 1e-12)
      throw ConfigError("field: time outside [0, T]");
  }
};

using FieldPtr = std::shared_ptr<const Field>;

// ---- trainable parametric family -------------------------------------------------

// Per-knot parameter block of the Gaussian-RBF + affine family.
struct RbfKnot {
  Matrix rbf_weights;  // m x d, one output vector per center
  Matrix affine;       // d x d
  Vector offset;       // d
};

// v(x, t) = sum_m W_m(t) k((x - c_m)/h) + A(t) x + b(t), parameters linearly
// interpolated between time knots. Value, Jacobian and divergence are linear
// in the parameters, which is what makes the constrained trainer closed-form.
class RbfField final : public Field {
public:
  RbfField(Matrix centers, double bandwidth, std::vector<double> knot_times,
           std::vector<RbfKnot> knots, double horizon);

  // zero-initialized parameter blocks on the given knots
  static RbfField zeros(Matrix centers, double bandwidth, std::vector<double> knot_times,
                        double horizon, Index dim);

  Index dim() const override { return dim_; }
  double horizon() const override { return horizon_; }
  Vector eval(const RefConstVec& x, double t) const override;
  Matrix jacobian(const RefConstVec& x, double t) const override;
  double divergence(const RefConstVec& x, double t) const override;
  Matrix eval_many(const RefConstMat& x_rows, double t) const override;
  Vector divergence_many(const RefConstMat& x_rows, double t) const override;

  // Gaussian kernel matrix K_im = k((x_i - c_m)/h), rows per input point.
  Matrix kernel_matrix(const RefConstMat& x_rows) const;

  Index n_centers() const { return centers_.rows(); }
  Index n_knots() const { return static_cast<Index>(knots_.size()); }
  double bandwidth() const { return bandwidth_; }
  const Matrix& centers() const { return centers_; }
  const std::vector<double>& knot_times() const { return knot_times_; }
  const RbfKnot& knot(Index j) const { return knots_[static_cast<std::size_t>(j)]; }
  RbfKnot& knot(Index j) { return knots_[static_cast<std::size_t>(j)]; }

  // kernel vector k_m(x) and its gradients (d x m); used by the trainer.
  Vector kernel_values(const RefConstVec& x) const;
  Matrix kernel_gradients(const RefConstVec& x) const;

  // interpolation weights over knots at time t: (index, weight) pairs
  struct TimeBlend {
    Index left;
    Index right;
    double w_left;
    double w_right;
  };
  TimeBlend blend(double t) const;

  nlohmann::json to_json() const;
  static RbfField from_json(const nlohmann::json& j);

private:
  Matrix centers_;  // m x d
  double bandwidth_;
  std::vector<double> knot_times_;
  std::vector<RbfKnot> knots_;
  double horizon_;
  Index dim_;
};

// ---- closed-form fields ------------------------------------------------------------

// Constant-zero velocity.
class ZeroField final : public Field {
public:
  ZeroField(Index dim, double horizon) : dim_(dim), horizon_(horizon) {}
  Index dim() const override { return dim_; }
  double horizon() const override { return horizon_; }
  Vector eval(const RefConstVec&, double t) const override {
    check_time(t);
    return Vector::Zero(dim_);
  }
  Matrix jacobian(const RefConstVec&, double) const override { return Matrix::Zero(dim_, dim_); }
  double divergence(const RefConstVec&, double) const override { return 0.0; }
  Matrix eval_many(const RefConstMat& x_rows, double t) const override {
    check_time(t);
    return Matrix::Zero(x_rows.rows(), x_rows.cols());
  }
  Vector divergence_many(const RefConstMat& x_rows, double) const override {
    return Vector::Zero(x_rows.rows());
  }

private:
  Index dim_;
  double horizon_;
};

// v(x) = A x + b, time-independent.
class AffineField final : public Field {
public:
  AffineField(Matrix a, Vector b, double horizon);
  Index dim() const override { return offset_.size(); }
  double horizon() const override { return horizon_; }
  Vector eval(const RefConstVec& x, double t) const override;
  Matrix jacobian(const RefConstVec&, double) const override { return linear_; }
  double divergence(const RefConstVec&, double) const override { return linear_.trace(); }
  Matrix eval_many(const RefConstMat& x_rows, double t) const override {
    check_time(t);
    return (x_rows * linear_.transpose()).rowwise() + offset_.transpose();
  }
  Vector divergence_many(const RefConstMat& x_rows, double) const override {
    return Vector::Constant(x_rows.rows(), linear_.trace());
  }

private:
  Matrix linear_;
  Vector offset_;
  double horizon_;
};

// 1D v(y, t) = -y / (tau - t): the Eulerian field of the pure linear squeeze.
class ContractionField final : public Field {
public:
  ContractionField(double tau, double horizon);
  Index dim() const override { return 1; }
  double horizon() const override { return horizon_; }
  Vector eval(const RefConstVec& x, double t) const override;
  Matrix jacobian(const RefConstVec&, double t) const override;

private:
  double tau_;
  double horizon_;
};

// Velocity of the 1D Gaussian displacement interpolation N(m0, s0^2) -> N(m1, s1^2):
// v(x, t) = m'(t) + (s'(t)/s(t)) (x - m(t)) with linear mean/std profiles.
class GaussianInterpolantField final : public Field {
public:
  GaussianInterpolantField(double m0, double s0, double m1, double s1, double horizon);
  Index dim() const override { return 1; }
  double horizon() const override { return horizon_; }
  Vector eval(const RefConstVec& x, double t) const override;
  Matrix jacobian(const RefConstVec&, double t) const override;
  Matrix eval_many(const RefConstMat& x_rows, double t) const override;
  Vector divergence_many(const RefConstMat& x_rows, double t) const override;
  // marginal law at time t
  void moments(double t, double& mean, double& stddev) const;

private:
  double m0_, s0_, m1_, s1_, horizon_;
};

// Exact score field grad log rho_t of an analytic Gaussian-mixture path.
class MixturePath {
public:
  enum class Kind { Static, HeatFlow, Translate };

  static MixturePath static_path(GaussianMixture mix, double horizon);
  // rho_t = heat semigroup at diffusivity eps applied for time t
  static MixturePath heat_flow(GaussianMixture mix0, double eps, double horizon);
  // rho_t = mix0 translated by velocity * t
  static MixturePath translate(GaussianMixture mix0, const Vector& velocity, double horizon);

  GaussianMixture at(double t) const;
  double horizon() const { return horizon_; }
  Index dim() const { return mix0_.dim(); }

private:
  MixturePath(Kind kind, GaussianMixture mix0, double horizon)
      : kind_(kind), mix0_(std::move(mix0)), horizon_(horizon) {}
  Kind kind_;
  GaussianMixture mix0_;
  double eps_ = 0.0;
  Vector velocity_;
  double horizon_;
};

class ScoreField final : public Field {
public:
  explicit ScoreField(MixturePath path) : path_(std::move(path)) {}
  Index dim() const override { return path_.dim(); }
  double horizon() const override { return path_.horizon(); }
  Vector eval(const RefConstVec& x, double t) const override {
    check_time(t);
    return path_.at(t).score(x);
  }
  Matrix jacobian(const RefConstVec& x, double t) const override {
    return path_.at(t).score_jacobian(x);
  }
  const MixturePath& path() const { return path_; }

private:
  MixturePath path_;
};

// a * f + b * g for fields on the same state space.
class LinearCombinationField final : public Field {
public:
  LinearCombinationField(double a, FieldPtr f, double b, FieldPtr g);
  Index dim() const override { return f_->dim(); }
  double horizon() const override { return f_->horizon(); }
  Vector eval(const RefConstVec& x, double t) const override {
    return a_ * f_->eval(x, t) + b_ * g_->eval(x, t);
  }
  Matrix jacobian(const RefConstVec& x, double t) const override {
    return a_ * f_->jacobian(x, t) + b_ * g_->jacobian(x, t);
  }
  double divergence(const RefConstVec& x, double t) const override {
    return a_ * f_->divergence(x, t) + b_ * g_->divergence(x, t);
  }
  Matrix eval_many(const RefConstMat& x_rows, double t) const override {
    return a_ * f_->eval_many(x_rows, t) + b_ * g_->eval_many(x_rows, t);
  }
  Vector divergence_many(const RefConstMat& x_rows, double t) const override {
    return a_ * f_->divergence_many(x_rows, t) + b_ * g_->divergence_many(x_rows, t);
  }

private:
  double a_, b_;
  FieldPtr f_, g_;
};

// Field defined by a time-scaled diffusivity applied to another field,
// v(x,t) = scale(t) * f(x,t). Used for eps(t)-weighted score corrections.
class TimeScaledField final : public Field {
public:
  TimeScaledField(std::function<double(double)> scale, FieldPtr f)
      : scale_(std::move(scale)), f_(std::move(f)) {}
  Index dim() const override { return f_->dim(); }
  double horizon() const override { return f_->horizon(); }
  Vector eval(const RefConstVec& x, double t) const override { return scale_(t) * f_->eval(x, t); }
  Matrix jacobian(const RefConstVec& x, double t) const override {
    return scale_(t) * f_->jacobian(x, t);
  }
  double divergence(const RefConstVec& x, double t) const override {
    return scale_(t) * f_->divergence(x, t);
  }
  Matrix eval_many(const RefConstMat& x_rows, double t) const override {
    return scale_(t) * f_->eval_many(x_rows, t);
  }
  Vector divergence_many(const RefConstMat& x_rows, double t) const override {
    return scale_(t) * f_->divergence_many(x_rows, t);
  }

private:
  std::function<double(double)> scale_;
  FieldPtr f_;
};

// ---- randomized divergence ---------------------------------------------------------

struct HutchinsonEstimate {
  double estimate;
  double std_error;  // over probes
};

// (1/R) sum_r zeta^T J zeta with Rademacher probes; unbiased for tr J.
HutchinsonEstimate divergence_hutchinson(const Field& field, const RefConstVec& x, double t,
                                         Index probes, std::uint64_t seed);

// Field JSON serialization (round-trips finite doubles exactly).
nlohmann::json field_to_json(const Field& field);
FieldPtr field_from_json(const nlohmann::json& j);

}  // namespace ecfm

#endif  // ECFM_FIELDS_HPP
