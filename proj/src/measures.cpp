#include "ecfm/measures.hpp"

#include "ecfm/io.hpp"
#include "ecfm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>

namespace ecfm {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

// ---- GaussianMixture --------------------------------------------------------

GaussianMixture::GaussianMixture(std::vector<double> weights, std::vector<Vector> means,
                                 std::vector<Matrix> covariances) {
  if (weights.empty() || weights.size() != means.size() || weights.size() != covariances.size())
    throw ConfigError("GaussianMixture: component lists must be non-empty and equally sized");
  const Index d = means.front().size();
  double total = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] < 0.0) throw ConfigError("GaussianMixture: negative weight");
    if (means[k].size() != d) throw ConfigError("GaussianMixture: inconsistent dimensions");
    if (covariances[k].rows() != d || covariances[k].cols() != d)
      throw ConfigError("GaussianMixture: covariance shape mismatch");
    if (!covariances[k].isApprox(covariances[k].transpose(), 1e-10))
      throw ConfigError("GaussianMixture: covariance not symmetric");
    total += weights[k];
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("GaussianMixture: weights must sum to 1");

  components_.reserve(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    Component c;
    c.weight = weights[k];
    c.mean = means[k];
    c.covariance = 0.5 * (covariances[k] + covariances[k].transpose());
    Eigen::LLT<Matrix> llt(c.covariance);
    if (llt.info() != Eigen::Success)
      throw ConfigError("GaussianMixture: covariance not positive definite");
    c.cholesky_lower = llt.matrixL();
    c.precision = llt.solve(Matrix::Identity(d, d));
    double log_det = 0.0;
    for (Index i = 0; i < d; ++i) log_det += 2.0 * std::log(c.cholesky_lower(i, i));
    c.log_norm = -0.5 * (static_cast<double>(d) * std::log(kTwoPi) + log_det);
    components_.push_back(std::move(c));
  }
}

GaussianMixture GaussianMixture::single(const Vector& mean, const Matrix& covariance) {
  return GaussianMixture({1.0}, {mean}, {covariance});
}

GaussianMixture GaussianMixture::gaussian1d(double mean, double variance) {
  Vector m(1);
  m << mean;
  Matrix c(1, 1);
  c << variance;
  return single(m, c);
}

GaussianMixture GaussianMixture::two_mode1d(double a, double sigma) {
  Vector m1(1), m2(1);
  m1 << -a;
  m2 << a;
  Matrix c(1, 1);
  c << sigma * sigma;
  return GaussianMixture({0.5, 0.5}, {m1, m2}, {c, c});
}

double GaussianMixture::log_density(const RefConstVec& x) const {
  std::vector<double> terms;
  terms.reserve(components_.size());
  for (const auto& c : components_) {
    const Vector diff = x - c.mean;
    const double quad = diff.dot(c.precision * diff);
    terms.push_back(std::log(c.weight) + c.log_norm - 0.5 * quad);
  }
  return log_sum_exp(terms);
}

double GaussianMixture::density(const RefConstVec& x) const { return std::exp(log_density(x)); }

Vector GaussianMixture::score(const RefConstVec& x) const {
  // grad log rho = sum_k r_k(x) * s_k(x), responsibilities r_k, component scores s_k.
  std::vector<double> logits;
  logits.reserve(components_.size());
  for (const auto& c : components_) {
    const Vector diff = x - c.mean;
    logits.push_back(std::log(c.weight) + c.log_norm - 0.5 * diff.dot(c.precision * diff));
  }
  const double lse = log_sum_exp(logits);
  Vector s = Vector::Zero(dim());
  for (std::size_t k = 0; k < components_.size(); ++k) {
    const auto& c = components_[k];
    const double r = std::exp(logits[k] - lse);
    s.noalias() -= r * (c.precision * (x - c.mean));
  }
  return s;
}

Matrix GaussianMixture::score_jacobian(const RefConstVec& x) const {
  // Hessian of log rho = sum_k r_k (-P_k + s_k s_k^T) - s s^T.
  const Index d = dim();
  std::vector<double> logits(components_.size());
  std::vector<Vector> comp_scores(components_.size());
  for (std::size_t k = 0; k < components_.size(); ++k) {
    const auto& c = components_[k];
    const Vector diff = x - c.mean;
    logits[k] = std::log(c.weight) + c.log_norm - 0.5 * diff.dot(c.precision * diff);
    comp_scores[k] = -(c.precision * diff);
  }
  const double lse = log_sum_exp(logits);
  Matrix h = Matrix::Zero(d, d);
  Vector s = Vector::Zero(d);
  for (std::size_t k = 0; k < components_.size(); ++k) {
    const double r = std::exp(logits[k] - lse);
    h.noalias() += r * (comp_scores[k] * comp_scores[k].transpose() - components_[k].precision);
    s.noalias() += r * comp_scores[k];
  }
  h.noalias() -= s * s.transpose();
  return h;
}

GaussianMixture GaussianMixture::heat_evolved(double added_var) const {
  if (added_var < 0.0) throw ConfigError("heat_evolved: added variance must be nonnegative");
  std::vector<double> w;
  std::vector<Vector> m;
  std::vector<Matrix> c;
  for (const auto& comp : components_) {
    w.push_back(comp.weight);
    m.push_back(comp.mean);
    c.push_back(comp.covariance + added_var * Matrix::Identity(dim(), dim()));
  }
  return GaussianMixture(std::move(w), std::move(m), std::move(c));
}

GaussianMixture GaussianMixture::affine_image(double scale, const Vector& shift) const {
  std::vector<double> w;
  std::vector<Vector> m;
  std::vector<Matrix> c;
  for (const auto& comp : components_) {
    w.push_back(comp.weight);
    m.push_back(scale * comp.mean + shift);
    c.push_back(scale * scale * comp.covariance);
  }
  return GaussianMixture(std::move(w), std::move(m), std::move(c));
}

double GaussianMixture::mean1d() const {
  if (dim() != 1) throw ConfigError("mean1d: mixture is not one-dimensional");
  double m = 0.0;
  for (const auto& c : components_) m += c.weight * c.mean(0);
  return m;
}

double GaussianMixture::variance1d() const {
  if (dim() != 1) throw ConfigError("variance1d: mixture is not one-dimensional");
  const double m = mean1d();
  double v = 0.0;
  for (const auto& c : components_)
    v += c.weight * (c.covariance(0, 0) + (c.mean(0) - m) * (c.mean(0) - m));
  return v;
}

double GaussianMixture::cdf1d(double x) const {
  if (dim() != 1) throw ConfigError("cdf1d: mixture is not one-dimensional");
  double p = 0.0;
  for (const auto& c : components_)
    p += c.weight * normal_cdf((x - c.mean(0)) / std::sqrt(c.covariance(0, 0)));
  return p;
}

nlohmann::json GaussianMixture::to_json() const {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : components_) {
    nlohmann::json jc;
    jc["w"] = c.weight;
    jc["mean"] = std::vector<double>(c.mean.data(), c.mean.data() + c.mean.size());
    nlohmann::json cov = nlohmann::json::array();
    for (Index i = 0; i < c.covariance.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (Index j = 0; j < c.covariance.cols(); ++j) row.push_back(c.covariance(i, j));
      cov.push_back(row);
    }
    jc["cov"] = cov;
    comps.push_back(jc);
  }
  return nlohmann::json{{"components", comps}};
}

GaussianMixture GaussianMixture::from_json(const nlohmann::json& j) {
  if (!j.contains("components")) throw ConfigError("mixture json: missing 'components'");
  std::vector<double> w;
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  for (const auto& jc : j.at("components")) {
    w.push_back(jc.at("w").get<double>());
    const auto mv = jc.at("mean").get<std::vector<double>>();
    Vector m(static_cast<Index>(mv.size()));
    for (std::size_t i = 0; i < mv.size(); ++i) m(static_cast<Index>(i)) = mv[i];
    const auto& jcov = jc.at("cov");
    const Index d = static_cast<Index>(jcov.size());
    Matrix c(d, d);
    for (Index r = 0; r < d; ++r)
      for (Index col = 0; col < d; ++col) c(r, col) = jcov.at(r).at(col).get<double>();
    means.push_back(std::move(m));
    covs.push_back(std::move(c));
  }
  return GaussianMixture(std::move(w), std::move(means), std::move(covs));
}

// ---- ParticleEnsemble -------------------------------------------------------

bool ParticleEnsemble::equal_weighted(double tol) const {
  const double w0 = 1.0 / static_cast<double>(size());
  return ((weights.array() - w0).abs() < tol).all();
}

void ParticleEnsemble::validate() const {
  if (size() < 2) throw ConfigError("ParticleEnsemble: need at least 2 points");
  if (dim() < 1) throw ConfigError("ParticleEnsemble: dimension must be >= 1");
  if (weights.size() != size()) throw ConfigError("ParticleEnsemble: weight count mismatch");
  if ((weights.array() < 0.0).any()) throw ConfigError("ParticleEnsemble: negative weight");
  if (std::abs(weights.sum() - 1.0) > 1e-12)
    throw ConfigError("ParticleEnsemble: weights must sum to 1");
  if (!points.allFinite()) throw ConfigError("ParticleEnsemble: non-finite coordinate");
}

ParticleEnsemble ParticleEnsemble::from_points(Matrix pts, double time, std::uint64_t seed) {
  ParticleEnsemble e;
  const Index n = pts.rows();
  e.points = std::move(pts);
  e.weights = Vector::Constant(n, 1.0 / static_cast<double>(n));
  e.time = time;
  e.seed = seed;
  e.validate();
  return e;
}

std::string ParticleEnsemble::to_csv() const {
  std::vector<std::string> header;
  for (Index j = 0; j < dim(); ++j) header.push_back("x" + std::to_string(j));
  header.push_back("w");
  CsvWriter csv(header);
  std::vector<double> row(static_cast<std::size_t>(dim()) + 1);
  for (Index i = 0; i < size(); ++i) {
    for (Index j = 0; j < dim(); ++j) row[static_cast<std::size_t>(j)] = points(i, j);
    row.back() = weights(i);
    csv.add_row(row);
  }
  return csv.str();
}

ParticleEnsemble ParticleEnsemble::from_csv(const std::string& body) {
  std::istringstream in(body);
  std::string line;
  if (!std::getline(in, line)) throw IoError("ensemble csv: empty");
  const Index d = static_cast<Index>(std::count(line.begin(), line.end(), ',') + 1) - 1;
  std::vector<double> coords;
  std::vector<double> ws;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t pos = 0;
    for (Index j = 0; j <= d; ++j) {
      const std::size_t comma = line.find(',', pos);
      const double v = std::strtod(line.c_str() + pos, nullptr);
      if (j < d)
        coords.push_back(v);
      else
        ws.push_back(v);
      pos = (comma == std::string::npos) ? line.size() : comma + 1;
    }
  }
  const Index n = static_cast<Index>(ws.size());
  ParticleEnsemble e;
  e.points.resize(n, d);
  e.weights.resize(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) e.points(i, j) = coords[static_cast<std::size_t>(i * d + j)];
    e.weights(i) = ws[static_cast<std::size_t>(i)];
  }
  e.validate();
  return e;
}

// ---- TimeGrid ----------------------------------------------------------------

TimeGrid::TimeGrid(std::vector<double> times) : times_(std::move(times)) {
  if (times_.size() < 2) throw ConfigError("TimeGrid: need at least two times");
  if (times_.front() != 0.0) throw ConfigError("TimeGrid: first time must be 0");
  for (std::size_t i = 1; i < times_.size(); ++i)
    if (!(times_[i] > times_[i - 1])) throw ConfigError("TimeGrid: times must strictly increase");
  if (!(times_.back() > 0.0)) throw ConfigError("TimeGrid: horizon must be positive");
}

TimeGrid TimeGrid::uniform(double horizon, Index n_times) {
  if (n_times < 2) throw ConfigError("TimeGrid: need at least two times");
  std::vector<double> t(static_cast<std::size_t>(n_times));
  for (Index i = 0; i < n_times; ++i)
    t[static_cast<std::size_t>(i)] =
        horizon * static_cast<double>(i) / static_cast<double>(n_times - 1);
  t.back() = horizon;
  return TimeGrid(std::move(t));
}

double TimeGrid::max_step() const {
  double m = 0.0;
  for (std::size_t i = 1; i < times_.size(); ++i) m = std::max(m, times_[i] - times_[i - 1]);
  return m;
}

// ---- ModeSet -------------------------------------------------------------------

ModeSet ModeSet::half_space(const Vector& normal, double offset, std::string label) {
  ModeSet m;
  m.kind_ = Kind::HalfSpace;
  m.normal_ = normal;
  m.offset_ = offset;
  m.label_ = std::move(label);
  return m;
}

ModeSet ModeSet::axis_box(const Vector& lo, const Vector& hi, std::string label) {
  if (lo.size() != hi.size()) throw ConfigError("ModeSet: box corner dimensions differ");
  for (Index i = 0; i < lo.size(); ++i)
    if (!(lo(i) < hi(i))) throw ConfigError("ModeSet: box corners must satisfy lo < hi");
  ModeSet m;
  m.kind_ = Kind::AxisBox;
  m.lo_ = lo;
  m.hi_ = hi;
  m.label_ = std::move(label);
  return m;
}

ModeSet ModeSet::ball(const Vector& center, double radius, std::string label) {
  if (radius < 0.0) throw ConfigError("ModeSet: ball radius must be nonnegative");
  ModeSet m;
  m.kind_ = Kind::Ball;
  m.center_ = center;
  m.radius_ = radius;
  m.label_ = std::move(label);
  return m;
}

ModeSet ModeSet::interval(double lo, double hi, std::string label) {
  Vector l(1), h(1);
  l << lo;
  h << hi;
  return axis_box(l, h, std::move(label));
}

bool ModeSet::contains(const RefConstVec& x) const {
  switch (kind_) {
    case Kind::HalfSpace:
      return normal_.dot(x) > offset_;
    case Kind::AxisBox:
      for (Index i = 0; i < lo_.size(); ++i)
        if (x(i) <= lo_(i) || x(i) >= hi_(i)) return false;
      return true;
    case Kind::Ball:
      return (x - center_).norm() < radius_;
  }
  return false;
}

bool ModeSet::contained_in(const ModeSet& parent) const {
  switch (kind_) {
    case Kind::Ball: {
      switch (parent.kind_) {
        case Kind::Ball:
          return (center_ - parent.center_).norm() + radius_ <= parent.radius_;
        case Kind::AxisBox: {
          for (Index i = 0; i < parent.lo_.size(); ++i)
            if (center_(i) - radius_ < parent.lo_(i) || center_(i) + radius_ > parent.hi_(i))
              return false;
          return true;
        }
        case Kind::HalfSpace:
          return parent.normal_.dot(center_) - radius_ * parent.normal_.norm() >= parent.offset_;
      }
      break;
    }
    case Kind::AxisBox: {
      switch (parent.kind_) {
        case Kind::AxisBox: {
          for (Index i = 0; i < lo_.size(); ++i)
            if (lo_(i) < parent.lo_(i) || hi_(i) > parent.hi_(i)) return false;
          return true;
        }
        case Kind::HalfSpace: {
          // check all corners: sufficient to check the corner minimizing n.x
          double worst = 0.0;
          for (Index i = 0; i < lo_.size(); ++i)
            worst += parent.normal_(i) >= 0.0 ? parent.normal_(i) * lo_(i)
                                              : parent.normal_(i) * hi_(i);
          return worst >= parent.offset_;
        }
        case Kind::Ball: {
          double far2 = 0.0;
          for (Index i = 0; i < lo_.size(); ++i) {
            const double dlo = std::abs(lo_(i) - parent.center_(i));
            const double dhi = std::abs(hi_(i) - parent.center_(i));
            const double d = std::max(dlo, dhi);
            far2 += d * d;
          }
          return std::sqrt(far2) <= parent.radius_;
        }
      }
      break;
    }
    case Kind::HalfSpace: {
      if (parent.kind_ != Kind::HalfSpace) return false;  // unbounded set cannot fit
      const double na = normal_.norm(), nb = parent.normal_.norm();
      if (na == 0.0 || nb == 0.0) return false;
      const bool same_dir = (normal_ / na - parent.normal_ / nb).norm() < 1e-12;
      return same_dir && offset_ / na >= parent.offset_ / nb;
    }
  }
  return false;
}

nlohmann::json ModeSet::to_json() const {
  nlohmann::json j;
  j["label"] = label_;
  switch (kind_) {
    case Kind::HalfSpace:
      j["kind"] = "half-space";
      j["normal"] = std::vector<double>(normal_.data(), normal_.data() + normal_.size());
      j["offset"] = offset_;
      break;
    case Kind::AxisBox:
      j["kind"] = "axis-box";
      j["lo"] = std::vector<double>(lo_.data(), lo_.data() + lo_.size());
      j["hi"] = std::vector<double>(hi_.data(), hi_.data() + hi_.size());
      break;
    case Kind::Ball:
      j["kind"] = "ball";
      j["center"] = std::vector<double>(center_.data(), center_.data() + center_.size());
      j["radius"] = radius_;
      break;
  }
  return j;
}

ModeSet ModeSet::from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  const std::string label = j.value("label", std::string{});
  auto vec = [](const nlohmann::json& arr) {
    Vector v(static_cast<Index>(arr.size()));
    for (Index i = 0; i < v.size(); ++i) v(i) = arr.at(i).get<double>();
    return v;
  };
  if (kind == "half-space")
    return half_space(vec(j.at("normal")), j.at("offset").get<double>(), label);
  if (kind == "axis-box") return axis_box(vec(j.at("lo")), vec(j.at("hi")), label);
  if (kind == "ball") return ball(vec(j.at("center")), j.at("radius").get<double>(), label);
  throw ConfigError("ModeSet json: unknown kind '" + kind + "'");
}

// ---- sampling -------------------------------------------------------------------

ParticleEnsemble sample(const GaussianMixture& mix, Index n, std::uint64_t seed, double time) {
  if (n < 2) throw ConfigError("sample: need n >= 2");
  const Index d = mix.dim();
  ParticleEnsemble e;
  e.points.resize(n, d);
  e.weights = Vector::Constant(n, 1.0 / static_cast<double>(n));
  e.time = time;
  e.seed = seed;

  // cumulative weights for component selection
  std::vector<double> cum;
  cum.reserve(static_cast<std::size_t>(mix.size()));
  double acc = 0.0;
  for (Index k = 0; k < mix.size(); ++k) {
    acc += mix.component(k).weight;
    cum.push_back(acc);
  }
  Rng base(seed);
  parallel_for(n, [&](Index lo, Index hi) {
    for (Index i = lo; i < hi; ++i) {
      Rng r = base.derive(static_cast<std::uint64_t>(i));
      const double u = r.uniform();
      Index k = static_cast<Index>(std::lower_bound(cum.begin(), cum.end(), u * acc) - cum.begin());
      if (k >= mix.size()) k = mix.size() - 1;
      Vector z(d);
      for (Index j = 0; j < d; ++j) z(j) = r.normal();
      const auto& c = mix.component(k);
      e.points.row(i) = (c.mean + c.cholesky_lower * z).transpose();
    }
  });
  return e;
}

// ---- k-NN entropy -----------------------------------------------------------------

namespace {

// k-th nearest neighbor distances; sorted scan for d=1, bounded heap otherwise.
Vector knn_distances(const Matrix& pts, int k) {
  const Index n = pts.rows();
  const Index d = pts.cols();
  Vector out(n);
  if (d == 1) {
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(),
              [&](Index a, Index b) { return pts(a, 0) < pts(b, 0); });
    std::vector<double> x(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = pts(order[static_cast<std::size_t>(i)], 0);
    for (Index i = 0; i < n; ++i) {
      // k-th smallest |x_i - x_j| over the 2k sorted neighbors around i
      std::vector<double> cand;
      cand.reserve(static_cast<std::size_t>(2 * k));
      for (int s = 1; s <= k; ++s) {
        if (i - s >= 0) cand.push_back(x[static_cast<std::size_t>(i)] - x[static_cast<std::size_t>(i - s)]);
        if (i + s < n) cand.push_back(x[static_cast<std::size_t>(i + s)] - x[static_cast<std::size_t>(i)]);
      }
      std::nth_element(cand.begin(), cand.begin() + (k - 1), cand.end());
      out(order[static_cast<std::size_t>(i)]) = cand[static_cast<std::size_t>(k - 1)];
    }
  } else {
    parallel_for(n, [&](Index lo, Index hi) {
      std::priority_queue<double> heap;  // max-heap of the k best squared distances
      for (Index i = lo; i < hi; ++i) {
        while (!heap.empty()) heap.pop();
        for (Index j = 0; j < n; ++j) {
          if (j == i) continue;
          const double d2 = (pts.row(i) - pts.row(j)).squaredNorm();
          if (static_cast<int>(heap.size()) < k)
            heap.push(d2);
          else if (d2 < heap.top()) {
            heap.pop();
            heap.push(d2);
          }
        }
        out(i) = std::sqrt(heap.top());
      }
    });
  }
  return out;
}

double unit_ball_log_volume(Index d) {
  return 0.5 * static_cast<double>(d) * std::log(3.14159265358979323846) -
         std::lgamma(0.5 * static_cast<double>(d) + 1.0);
}

}  // namespace

EntropyEstimate differential_entropy(const ParticleEnsemble& ens, const KnnEntropyOptions& opts) {
  ens.validate();
  const Index n = ens.size();
  const Index d = ens.dim();
  if (opts.k < 1) throw ConfigError("differential_entropy: k must be >= 1");
  if (n <= opts.k + 1) throw ConfigError("differential_entropy: need n > k + 1");
  if (!ens.equal_weighted())
    throw ConfigError("differential_entropy: weighted ensembles are not supported");

  Matrix pts = ens.points;
  Vector r = knn_distances(pts, opts.k);
  if ((r.array() <= 0.0).any()) {
    if (!opts.jitter_duplicates)
      throw NumericalError("differential_entropy: duplicate points and jitter disabled");
    const double scale =
        std::max(1.0, (pts.colwise().maxCoeff() - pts.colwise().minCoeff()).maxCoeff());
    Rng jit(ens.seed ^ 0x9E3779B97F4A7C15ULL);
    std::cerr << "[ecfm] differential_entropy: duplicate points, applying 1e-12-scale jitter\n";
    for (Index i = 0; i < n; ++i) {
      Rng ri = jit.derive(static_cast<std::uint64_t>(i));
      for (Index j = 0; j < d; ++j) pts(i, j) += 1e-12 * scale * ri.normal();
    }
    r = knn_distances(pts, opts.k);
  }

  // H_hat = psi(n) - psi(k) + log V_d + (d/n) sum_i log r_i
  Vector terms = static_cast<double>(d) * r.array().log();
  const double mean_term = terms.mean();
  const double constant =
      digamma(static_cast<double>(n)) - digamma(static_cast<double>(opts.k)) + unit_ball_log_volume(d);
  const double var =
      (terms.array() - mean_term).square().sum() / static_cast<double>(n - 1);
  return {constant + mean_term, std::sqrt(var / static_cast<double>(n))};
}

EntropyEstimate entropy_exact_mixture(const GaussianMixture& mix, Index n_mc, std::uint64_t seed) {
  if (n_mc < 1000) throw ConfigError("entropy_exact_mixture: need n_mc >= 1e3");
  const ParticleEnsemble e = sample(mix, n_mc, seed);
  Vector vals(n_mc);
  parallel_for(n_mc, [&](Index lo, Index hi) {
    for (Index i = lo; i < hi; ++i) vals(i) = -mix.log_density(e.points.row(i).transpose());
  });
  const double mean = vals.mean();
  const double var = (vals.array() - mean).square().sum() / static_cast<double>(n_mc - 1);
  return {mean, std::sqrt(var / static_cast<double>(n_mc))};
}

EntropyEstimate fisher_information(const GaussianMixture& mix, Index n_mc, std::uint64_t seed) {
  if (n_mc < 1000) throw ConfigError("fisher_information: need n_mc >= 1e3");
  const ParticleEnsemble e = sample(mix, n_mc, seed ^ 0x5851F42D4C957F2DULL);
  Vector vals(n_mc);
  parallel_for(n_mc, [&](Index lo, Index hi) {
    for (Index i = lo; i < hi; ++i) vals(i) = mix.score(e.points.row(i).transpose()).squaredNorm();
  });
  const double mean = vals.mean();
  const double var = (vals.array() - mean).square().sum() / static_cast<double>(n_mc - 1);
  return {mean, std::sqrt(var / static_cast<double>(n_mc))};
}

double gaussian_entropy(Index dim, double det_covariance) {
  return 0.5 * static_cast<double>(dim) * (1.0 + std::log(kTwoPi)) + 0.5 * std::log(det_covariance);
}

// ---- Wasserstein ---------------------------------------------------------------------

namespace {

// Exact 1D W2 via the quantile coupling; supports unequal sizes and weights.
double w2_quantile_1d(const ParticleEnsemble& a, const ParticleEnsemble& b) {
  const Index na = a.size(), nb = b.size();
  std::vector<Index> oa(static_cast<std::size_t>(na)), ob(static_cast<std::size_t>(nb));
  std::iota(oa.begin(), oa.end(), Index{0});
  std::iota(ob.begin(), ob.end(), Index{0});
  std::sort(oa.begin(), oa.end(), [&](Index i, Index j) { return a.points(i, 0) < a.points(j, 0); });
  std::sort(ob.begin(), ob.end(), [&](Index i, Index j) { return b.points(i, 0) < b.points(j, 0); });

  double cost = 0.0;
  std::size_t ia = 0, ib = 0;
  double ra = a.weights(oa[0]), rb = b.weights(ob[0]);
  while (true) {
    const double m = std::min(ra, rb);
    const double diff = a.points(oa[ia], 0) - b.points(ob[ib], 0);
    cost += m * diff * diff;
    ra -= m;
    rb -= m;
    if (ra <= 1e-15) {
      if (++ia >= oa.size()) break;
      ra = a.weights(oa[ia]);
    }
    if (rb <= 1e-15) {
      if (++ib >= ob.size()) break;
      rb = b.weights(ob[ib]);
    }
  }
  return std::sqrt(std::max(cost, 0.0));
}

// Jonker-Volgenant shortest augmenting path assignment on a dense cost matrix.
double assignment_cost(const Matrix& cost) {
  const Index n = cost.rows();
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), kInf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = kInf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (Index j = 1; j <= n; ++j) total += cost(p[static_cast<std::size_t>(j)] - 1, j - 1);
  return total;
}

}  // namespace

double w2(const ParticleEnsemble& a, const ParticleEnsemble& b) {
  if (a.dim() != b.dim()) throw ConfigError("w2: dimension mismatch");
  if (a.dim() == 1) return w2_quantile_1d(a, b);
  if (a.dim() > 3) throw ConfigError("w2: only d <= 3 supported");
  if (a.size() != b.size()) throw ConfigError("w2: d > 1 requires equal ensemble sizes");
  if (!a.equal_weighted() || !b.equal_weighted())
    throw ConfigError("w2: d > 1 requires equal weights");
  if (a.size() > 2000) throw ConfigError("w2: d > 1 assignment limited to n <= 2000");
  const Index n = a.size();
  Matrix cost(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) cost(i, j) = (a.points.row(i) - b.points.row(j)).squaredNorm();
  return std::sqrt(std::max(assignment_cost(cost) / static_cast<double>(n), 0.0));
}

double w2_gaussian1d(const ParticleEnsemble& a, double mean, double stddev) {
  if (a.dim() != 1) throw ConfigError("w2_gaussian1d: ensemble must be one-dimensional");
  if (!a.equal_weighted()) throw ConfigError("w2_gaussian1d: equal weights required");
  const Index n = a.size();
  std::vector<double> x(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = a.points(i, 0);
  std::sort(x.begin(), x.end());
  double cost = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double q = normal_quantile((static_cast<double>(i) + 0.5) / static_cast<double>(n));
    const double diff = x[static_cast<std::size_t>(i)] - (mean + stddev * q);
    cost += diff * diff;
  }
  return std::sqrt(cost / static_cast<double>(n));
}

double w2_gaussians1d(double m0, double s0, double m1, double s1) {
  const double dm = m1 - m0;
  const double ds = s1 - s0;
  return std::sqrt(dm * dm + ds * ds);
}

// ---- mode masses --------------------------------------------------------------------

double hoeffding_radius(Index batch, double alpha, Index n_modes, Index n_times) {
  if (batch < 1) throw ConfigError("hoeffding_radius: batch must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("hoeffding_radius: alpha in (0,1)");
  if (n_modes < 1 || n_times < 1) throw ConfigError("hoeffding_radius: counts must be >= 1");
  const double num = std::log(2.0 * static_cast<double>(n_modes) * static_cast<double>(n_times) / alpha);
  return std::sqrt(num / (2.0 * static_cast<double>(batch)));
}

ModeMass mode_mass(const ParticleEnsemble& ens, const ModeSet& region) {
  ens.validate();
  if (!ens.equal_weighted()) throw ConfigError("mode_mass: equal weights required");
  Index hits = 0;
  for (Index i = 0; i < ens.size(); ++i)
    if (region.contains(ens.points.row(i).transpose())) ++hits;
  return {static_cast<double>(hits) / static_cast<double>(ens.size()), ens.size()};
}

}  // namespace ecfm
