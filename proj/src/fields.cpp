#include "ecfm/fields.hpp"

#include "ecfm/rng.hpp"

#include <cmath>

namespace ecfm {

// ---- RbfField -----------------------------------------------------------------

RbfField::RbfField(Matrix centers, double bandwidth, std::vector<double> knot_times,
                   std::vector<RbfKnot> knots, double horizon)
    : centers_(std::move(centers)),
      bandwidth_(bandwidth),
      knot_times_(std::move(knot_times)),
      knots_(std::move(knots)),
      horizon_(horizon),
      dim_(centers_.cols()) {
  if (bandwidth_ <= 0.0) throw ConfigError("RbfField: bandwidth must be positive");
  if (knot_times_.size() != knots_.size() || knots_.empty())
    throw ConfigError("RbfField: knot times and parameter blocks must match");
  for (std::size_t j = 1; j < knot_times_.size(); ++j)
    if (!(knot_times_[j] > knot_times_[j - 1]))
      throw ConfigError("RbfField: knot times must strictly increase");
  const Index m = centers_.rows();
  for (const auto& k : knots_) {
    if (k.rbf_weights.rows() != m || k.rbf_weights.cols() != dim_ ||
        k.affine.rows() != dim_ || k.affine.cols() != dim_ || k.offset.size() != dim_)
      throw ConfigError("RbfField: parameter block shape mismatch");
  }
}

RbfField RbfField::zeros(Matrix centers, double bandwidth, std::vector<double> knot_times,
                         double horizon, Index dim) {
  std::vector<RbfKnot> knots(knot_times.size());
  const Index m = centers.rows();
  for (auto& k : knots) {
    k.rbf_weights = Matrix::Zero(m, dim);
    k.affine = Matrix::Zero(dim, dim);
    k.offset = Vector::Zero(dim);
  }
  return RbfField(std::move(centers), bandwidth, std::move(knot_times), std::move(knots), horizon);
}

RbfField::TimeBlend RbfField::blend(double t) const {
  const auto n = static_cast<Index>(knot_times_.size());
  if (n == 1 || t <= knot_times_.front()) return {0, 0, 1.0, 0.0};
  if (t >= knot_times_.back()) return {n - 1, n - 1, 1.0, 0.0};
  Index hi = 1;
  while (knot_times_[static_cast<std::size_t>(hi)] < t) ++hi;
  const Index lo = hi - 1;
  const double t0 = knot_times_[static_cast<std::size_t>(lo)];
  const double t1 = knot_times_[static_cast<std::size_t>(hi)];
  const double w = (t - t0) / (t1 - t0);
  return {lo, hi, 1.0 - w, w};
}

Vector RbfField::kernel_values(const RefConstVec& x) const {
  const Index m = centers_.rows();
  Vector k(m);
  const double inv2h2 = 1.0 / (2.0 * bandwidth_ * bandwidth_);
  for (Index i = 0; i < m; ++i)
    k(i) = std::exp(-(x - centers_.row(i).transpose()).squaredNorm() * inv2h2);
  return k;
}

Matrix RbfField::kernel_gradients(const RefConstVec& x) const {
  const Index m = centers_.rows();
  Matrix g(dim_, m);
  const double inv2h2 = 1.0 / (2.0 * bandwidth_ * bandwidth_);
  const double invh2 = 1.0 / (bandwidth_ * bandwidth_);
  for (Index i = 0; i < m; ++i) {
    const Vector diff = x - centers_.row(i).transpose();
    g.col(i) = -invh2 * std::exp(-diff.squaredNorm() * inv2h2) * diff;
  }
  return g;
}

Vector RbfField::eval(const RefConstVec& x, double t) const {
  check_time(t);
  const auto bl = blend(t);
  const Vector k = kernel_values(x);
  auto apply = [&](const RbfKnot& p) -> Vector {
    return p.rbf_weights.transpose() * k + p.affine * x + p.offset;
  };
  Vector v = bl.w_left * apply(knots_[static_cast<std::size_t>(bl.left)]);
  if (bl.w_right != 0.0) v += bl.w_right * apply(knots_[static_cast<std::size_t>(bl.right)]);
  return v;
}

Matrix RbfField::jacobian(const RefConstVec& x, double t) const {
  check_time(t);
  const auto bl = blend(t);
  const Matrix g = kernel_gradients(x);  // d x m
  auto apply = [&](const RbfKnot& p) -> Matrix {
    // J = sum_m grad k_m w_m^T + A; grad k columns times weight rows
    return (g * p.rbf_weights).transpose().eval() + p.affine;
  };
  Matrix j = bl.w_left * apply(knots_[static_cast<std::size_t>(bl.left)]);
  if (bl.w_right != 0.0) j += bl.w_right * apply(knots_[static_cast<std::size_t>(bl.right)]);
  return j;
}

double RbfField::divergence(const RefConstVec& x, double t) const {
  check_time(t);
  const auto bl = blend(t);
  const Matrix g = kernel_gradients(x);
  auto apply = [&](const RbfKnot& p) -> double {
    double s = p.affine.trace();
    for (Index i = 0; i < centers_.rows(); ++i) s += g.col(i).dot(p.rbf_weights.row(i).transpose());
    return s;
  };
  double dv = bl.w_left * apply(knots_[static_cast<std::size_t>(bl.left)]);
  if (bl.w_right != 0.0) dv += bl.w_right * apply(knots_[static_cast<std::size_t>(bl.right)]);
  return dv;
}

Matrix RbfField::kernel_matrix(const RefConstMat& x_rows) const {
  const Index b = x_rows.rows();
  const Index m = centers_.rows();
  // squared distances via the expansion |x|^2 - 2 x.c + |c|^2
  Matrix k = -2.0 * (x_rows * centers_.transpose());
  k.colwise() += x_rows.rowwise().squaredNorm();
  k.rowwise() += centers_.rowwise().squaredNorm().transpose();
  const double inv2h2 = 1.0 / (2.0 * bandwidth_ * bandwidth_);
  (void)b;
  (void)m;
  return (-inv2h2 * k.array()).exp().matrix();
}

Matrix RbfField::eval_many(const RefConstMat& x_rows, double t) const {
  check_time(t);
  const auto bl = blend(t);
  const Matrix k = kernel_matrix(x_rows);
  auto apply = [&](const RbfKnot& p) -> Matrix {
    return ((k * p.rbf_weights) + (x_rows * p.affine.transpose())).rowwise() +
           p.offset.transpose();
  };
  Matrix v = bl.w_left * apply(knots_[static_cast<std::size_t>(bl.left)]);
  if (bl.w_right != 0.0) v += bl.w_right * apply(knots_[static_cast<std::size_t>(bl.right)]);
  return v;
}

Vector RbfField::divergence_many(const RefConstMat& x_rows, double t) const {
  check_time(t);
  const auto bl = blend(t);
  const Matrix k = kernel_matrix(x_rows);
  const double invh2 = 1.0 / (bandwidth_ * bandwidth_);
  auto apply = [&](const RbfKnot& p) -> Vector {
    // sum_m W_m . grad k_m = -(1/h^2) [ (K o (X W^T)) 1 - K (C o W) 1 ]
    const Vector xw = (k.array() * (x_rows * p.rbf_weights.transpose()).array()).rowwise().sum();
    const Vector cw = (centers_.array() * p.rbf_weights.array()).rowwise().sum();
    return (-invh2) * (xw - k * cw) + Vector::Constant(x_rows.rows(), p.affine.trace());
  };
  Vector dv = bl.w_left * apply(knots_[static_cast<std::size_t>(bl.left)]);
  if (bl.w_right != 0.0) dv += bl.w_right * apply(knots_[static_cast<std::size_t>(bl.right)]);
  return dv;
}

nlohmann::json RbfField::to_json() const {
  nlohmann::json j;
  j["type"] = "rbf";
  j["dim"] = dim_;
  j["horizon"] = horizon_;
  j["bandwidth"] = bandwidth_;
  nlohmann::json cen = nlohmann::json::array();
  for (Index i = 0; i < centers_.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index c = 0; c < centers_.cols(); ++c) row.push_back(centers_(i, c));
    cen.push_back(row);
  }
  j["centers"] = cen;
  nlohmann::json knots = nlohmann::json::array();
  for (std::size_t q = 0; q < knots_.size(); ++q) {
    nlohmann::json jk;
    jk["t"] = knot_times_[q];
    auto mat = [](const Matrix& m) {
      nlohmann::json out = nlohmann::json::array();
      for (Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        out.push_back(row);
      }
      return out;
    };
    jk["W"] = mat(knots_[q].rbf_weights);
    jk["A"] = mat(knots_[q].affine);
    jk["b"] = std::vector<double>(knots_[q].offset.data(),
                                  knots_[q].offset.data() + knots_[q].offset.size());
    knots.push_back(jk);
  }
  j["knots"] = knots;
  return j;
}

RbfField RbfField::from_json(const nlohmann::json& j) {
  const Index dim = j.at("dim").get<Index>();
  const double horizon = j.at("horizon").get<double>();
  const double bandwidth = j.at("bandwidth").get<double>();
  const auto& jc = j.at("centers");
  Matrix centers(static_cast<Index>(jc.size()), dim);
  for (Index r = 0; r < centers.rows(); ++r)
    for (Index c = 0; c < dim; ++c) centers(r, c) = jc.at(r).at(c).get<double>();
  std::vector<double> times;
  std::vector<RbfKnot> knots;
  auto mat = [](const nlohmann::json& arr) {
    Matrix m(static_cast<Index>(arr.size()), static_cast<Index>(arr.at(0).size()));
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = arr.at(r).at(c).get<double>();
    return m;
  };
  for (const auto& jk : j.at("knots")) {
    times.push_back(jk.at("t").get<double>());
    RbfKnot k;
    k.rbf_weights = mat(jk.at("W"));
    k.affine = mat(jk.at("A"));
    const auto bv = jk.at("b").get<std::vector<double>>();
    k.offset = Eigen::Map<const Vector>(bv.data(), static_cast<Index>(bv.size()));
    knots.push_back(std::move(k));
  }
  return RbfField(std::move(centers), bandwidth, std::move(times), std::move(knots), horizon);
}

// ---- analytic fields ---------------------------------------------------------------

AffineField::AffineField(Matrix a, Vector b, double horizon)
    : linear_(std::move(a)), offset_(std::move(b)), horizon_(horizon) {
  if (linear_.rows() != linear_.cols() || linear_.rows() != offset_.size())
    throw ConfigError("AffineField: shape mismatch");
}

Vector AffineField::eval(const RefConstVec& x, double t) const {
  check_time(t);
  return linear_ * x + offset_;
}

ContractionField::ContractionField(double tau, double horizon) : tau_(tau), horizon_(horizon) {
  if (tau_ <= 0.0) throw ConfigError("ContractionField: tau must be positive");
}

Vector ContractionField::eval(const RefConstVec& x, double t) const {
  check_time(t);
  if (t >= tau_) throw ConfigError("ContractionField: defined only for t < tau");
  Vector v(1);
  v(0) = -x(0) / (tau_ - t);
  return v;
}

Matrix ContractionField::jacobian(const RefConstVec&, double t) const {
  if (t >= tau_) throw ConfigError("ContractionField: defined only for t < tau");
  Matrix j(1, 1);
  j(0, 0) = -1.0 / (tau_ - t);
  return j;
}

GaussianInterpolantField::GaussianInterpolantField(double m0, double s0, double m1, double s1,
                                                   double horizon)
    : m0_(m0), s0_(s0), m1_(m1), s1_(s1), horizon_(horizon) {
  if (s0 <= 0.0 || s1 <= 0.0) throw ConfigError("GaussianInterpolantField: stddevs must be > 0");
  if (horizon <= 0.0) throw ConfigError("GaussianInterpolantField: horizon must be > 0");
}

void GaussianInterpolantField::moments(double t, double& mean, double& stddev) const {
  const double u = t / horizon_;
  mean = (1.0 - u) * m0_ + u * m1_;
  stddev = (1.0 - u) * s0_ + u * s1_;
}

Vector GaussianInterpolantField::eval(const RefConstVec& x, double t) const {
  check_time(t);
  double mean, stddev;
  moments(t, mean, stddev);
  const double dmean = (m1_ - m0_) / horizon_;
  const double dstd = (s1_ - s0_) / horizon_;
  Vector v(1);
  v(0) = dmean + (dstd / stddev) * (x(0) - mean);
  return v;
}

Matrix GaussianInterpolantField::jacobian(const RefConstVec&, double t) const {
  double mean, stddev;
  moments(t, mean, stddev);
  Matrix j(1, 1);
  j(0, 0) = ((s1_ - s0_) / horizon_) / stddev;
  return j;
}

Matrix GaussianInterpolantField::eval_many(const RefConstMat& x_rows, double t) const {
  check_time(t);
  double mean, stddev;
  moments(t, mean, stddev);
  const double dmean = (m1_ - m0_) / horizon_;
  const double slope = ((s1_ - s0_) / horizon_) / stddev;
  return ((x_rows.array() - mean) * slope + dmean).matrix();
}

Vector GaussianInterpolantField::divergence_many(const RefConstMat& x_rows, double t) const {
  double mean, stddev;
  moments(t, mean, stddev);
  return Vector::Constant(x_rows.rows(), ((s1_ - s0_) / horizon_) / stddev);
}

// ---- mixture paths -------------------------------------------------------------------

MixturePath MixturePath::static_path(GaussianMixture mix, double horizon) {
  return MixturePath(Kind::Static, std::move(mix), horizon);
}

MixturePath MixturePath::heat_flow(GaussianMixture mix0, double eps, double horizon) {
  if (eps < 0.0) throw ConfigError("MixturePath: diffusivity must be nonnegative");
  MixturePath p(Kind::HeatFlow, std::move(mix0), horizon);
  p.eps_ = eps;
  return p;
}

MixturePath MixturePath::translate(GaussianMixture mix0, const Vector& velocity, double horizon) {
  MixturePath p(Kind::Translate, std::move(mix0), horizon);
  p.velocity_ = velocity;
  return p;
}

GaussianMixture MixturePath::at(double t) const {
  switch (kind_) {
    case Kind::Static:
      return mix0_;
    case Kind::HeatFlow:
      return mix0_.heat_evolved(2.0 * eps_ * t);
    case Kind::Translate:
      return mix0_.affine_image(1.0, t * velocity_);
  }
  return mix0_;
}

LinearCombinationField::LinearCombinationField(double a, FieldPtr f, double b, FieldPtr g)
    : a_(a), b_(b), f_(std::move(f)), g_(std::move(g)) {
  if (f_->dim() != g_->dim()) throw ConfigError("LinearCombinationField: dimension mismatch");
}

// ---- Hutchinson ------------------------------------------------------------------------

HutchinsonEstimate divergence_hutchinson(const Field& field, const RefConstVec& x, double t,
                                         Index probes, std::uint64_t seed) {
  if (probes < 1) throw ConfigError("divergence_hutchinson: need at least one probe");
  Rng rng(seed);
  const Index d = field.dim();
  double sum = 0.0, sum2 = 0.0;
  Vector zeta(d);
  for (Index r = 0; r < probes; ++r) {
    Rng pr = rng.derive(static_cast<std::uint64_t>(r));
    for (Index i = 0; i < d; ++i) zeta(i) = pr.rademacher();
    const double q = zeta.dot(field.jvp(x, t, zeta));
    sum += q;
    sum2 += q * q;
  }
  const double mean = sum / static_cast<double>(probes);
  double se = 0.0;
  if (probes > 1) {
    const double var = (sum2 - static_cast<double>(probes) * mean * mean) /
                       static_cast<double>(probes - 1);
    se = std::sqrt(std::max(var, 0.0) / static_cast<double>(probes));
  }
  return {mean, se};
}

// ---- serialization ------------------------------------------------------------------------

nlohmann::json field_to_json(const Field& field) {
  if (const auto* rbf = dynamic_cast<const RbfField*>(&field)) return rbf->to_json();
  if (const auto* aff = dynamic_cast<const AffineField*>(&field)) {
    nlohmann::json j;
    j["type"] = "affine";
    j["horizon"] = aff->horizon();
    const Index d = aff->dim();
    Vector zero = Vector::Zero(d);
    const Matrix a = aff->jacobian(zero, 0.0);
    const Vector b = aff->eval(zero, 0.0);
    nlohmann::json ja = nlohmann::json::array();
    for (Index r = 0; r < d; ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Index c = 0; c < d; ++c) row.push_back(a(r, c));
      ja.push_back(row);
    }
    j["A"] = ja;
    j["b"] = std::vector<double>(b.data(), b.data() + b.size());
    return j;
  }
  if (const auto* z = dynamic_cast<const ZeroField*>(&field)) {
    return nlohmann::json{{"type", "zero"}, {"dim", z->dim()}, {"horizon", z->horizon()}};
  }
  throw ConfigError("field_to_json: unsupported field type");
}

FieldPtr field_from_json(const nlohmann::json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "rbf") return std::make_shared<RbfField>(RbfField::from_json(j));
  if (type == "zero")
    return std::make_shared<ZeroField>(j.at("dim").get<Index>(), j.at("horizon").get<double>());
  if (type == "affine") {
    const auto& ja = j.at("A");
    const Index d = static_cast<Index>(ja.size());
    Matrix a(d, d);
    for (Index r = 0; r < d; ++r)
      for (Index c = 0; c < d; ++c) a(r, c) = ja.at(r).at(c).get<double>();
    const auto bv = j.at("b").get<std::vector<double>>();
    Vector b = Eigen::Map<const Vector>(bv.data(), static_cast<Index>(bv.size()));
    return std::make_shared<AffineField>(std::move(a), std::move(b), j.at("horizon").get<double>());
  }
  throw ConfigError("field_from_json: unknown type '" + type + "'");
}

}  // namespace ecfm
