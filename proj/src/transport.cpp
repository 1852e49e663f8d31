#include "ecfm/transport.hpp"

#include "ecfm/io.hpp"
#include "ecfm/rng.hpp"

#include <cmath>

namespace ecfm {

namespace {

double lse3(double a, double b, double c) {
  const double m = std::max(a, std::max(b, c));
  if (!std::isfinite(m)) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m) + std::exp(c - m));
}

// log of the Brownian kernel with single reflection images at both ends;
// normalizers are dropped, they cancel in the scaling equations.
double log_kernel(double x, double y, double four_eps_s, double lo, double hi) {
  const double d0 = x - y;
  const double d1 = x + y - 2.0 * lo;
  const double d2 = x + y - 2.0 * hi;
  return lse3(-d0 * d0 / four_eps_s, -d1 * d1 / four_eps_s, -d2 * d2 / four_eps_s);
}

Matrix log_kernel_matrix(double lo, double hi, Index m, double four_eps_s) {
  Matrix logk(m, m);
  const double h = (hi - lo) / static_cast<double>(m);
  for (Index i = 0; i < m; ++i) {
    const double x = lo + (static_cast<double>(i) + 0.5) * h;
    for (Index j = 0; j <= i; ++j) {
      const double y = lo + (static_cast<double>(j) + 0.5) * h;
      const double v = log_kernel(x, y, four_eps_s, lo, hi);
      logk(i, j) = v;
      logk(j, i) = v;
    }
  }
  return logk;
}

// log sum_j exp(logk(i, j) + arg(j)) for every row i
Vector lse_rows(const Matrix& logk, const Vector& arg) {
  const Index m = logk.rows();
  Vector out(m);
  parallel_for(m, [&](Index lo_i, Index hi_i) {
    for (Index i = lo_i; i < hi_i; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      for (Index j = 0; j < m; ++j) best = std::max(best, logk(i, j) + arg(j));
      if (!std::isfinite(best)) {
        out(i) = best;
        continue;
      }
      double s = 0.0;
      for (Index j = 0; j < m; ++j) s += std::exp(logk(i, j) + arg(j) - best);
      out(i) = best + std::log(s);
    }
  });
  return out;
}

Vector log_or_neg_inf(const Vector& v) {
  Vector out(v.size());
  for (Index i = 0; i < v.size(); ++i)
    out(i) = v(i) > 0.0 ? std::log(v(i)) : -std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace

// ---- GridDensity ---------------------------------------------------------------

GridDensity::GridDensity(double lo, double hi, Vector masses)
    : lo_(lo), hi_(hi), masses_(std::move(masses)) {
  if (!(hi_ > lo_)) throw ConfigError("GridDensity: empty interval");
  if (masses_.size() < 16) throw ConfigError("GridDensity: need at least 16 cells");
  if ((masses_.array() < 0.0).any()) throw ConfigError("GridDensity: negative mass");
  if (std::abs(masses_.sum() - 1.0) > 1e-12)
    throw ConfigError("GridDensity: masses must sum to 1");
}

GridDensity GridDensity::from_mixture(const GaussianMixture& mix, double lo, double hi,
                                      Index cells) {
  if (mix.dim() != 1) throw ConfigError("GridDensity: mixture must be one-dimensional");
  if (cells < 16) throw ConfigError("GridDensity: need at least 16 cells");
  const double h = (hi - lo) / static_cast<double>(cells);
  Vector masses(cells);
  for (Index i = 0; i < cells; ++i)
    masses(i) = mix.cdf1d(lo + (static_cast<double>(i) + 1.0) * h) -
                mix.cdf1d(lo + static_cast<double>(i) * h);
  const double covered = masses.sum();
  if (covered < 1.0 - 1e-8)
    throw ConfigError("GridDensity: grid covers only " + format_double(covered) + " of the mass");
  masses /= covered;
  return GridDensity(lo, hi, std::move(masses));
}

double GridDensity::l1_distance(const GridDensity& other) const {
  if (cells() != other.cells() || lo_ != other.lo_ || hi_ != other.hi_)
    throw ConfigError("GridDensity: grids differ");
  return (masses_ - other.masses_).cwiseAbs().sum();
}

double GridDensity::mean() const {
  double m = 0.0;
  for (Index i = 0; i < cells(); ++i) m += masses_(i) * center(i);
  return m;
}

double GridDensity::variance() const {
  const double m = mean();
  double v = 0.0;
  for (Index i = 0; i < cells(); ++i) v += masses_(i) * (center(i) - m) * (center(i) - m);
  return v;
}

GridDensity GridDensity::coarsened() const {
  if (cells() % 2 != 0) throw ConfigError("GridDensity: odd cell count cannot be coarsened");
  Vector out(cells() / 2);
  for (Index i = 0; i < out.size(); ++i) out(i) = masses_(2 * i) + masses_(2 * i + 1);
  return GridDensity(lo_, hi_, std::move(out));
}

std::string GridDensity::to_csv() const {
  CsvWriter csv({"center", "mass"});
  for (Index i = 0; i < cells(); ++i) csv.add_row({center(i), masses_(i)});
  return csv.str();
}

// ---- Sinkhorn --------------------------------------------------------------------

SchrodingerPotentials sinkhorn(const GridDensity& mu0, const GridDensity& muT, double eps,
                               double horizon, double tol, Index max_iter,
                               std::vector<double>* residual_history) {
  if (mu0.cells() != muT.cells() || mu0.lo() != muT.lo() || mu0.hi() != muT.hi())
    throw ConfigError("sinkhorn: endpoint densities must share the grid");
  if (eps <= 0.0 || horizon <= 0.0) throw ConfigError("sinkhorn: eps and horizon must be positive");
  const Index m = mu0.cells();
  const Matrix logk = log_kernel_matrix(mu0.lo(), mu0.hi(), m, 4.0 * eps * horizon);
  const Vector log_a = log_or_neg_inf(mu0.masses());
  const Vector log_b = log_or_neg_inf(muT.masses());

  Vector log_f = Vector::Zero(m);
  Vector log_g = Vector::Zero(m);
  double residual = std::numeric_limits<double>::infinity();
  Index it = 0;
  for (; it < max_iter; ++it) {
    log_f = log_a - lse_rows(logk, log_g);
    log_g = log_b - lse_rows(logk, log_f);

    // X marginal error: Y marginal is exact right after the g-update
    const Vector row = lse_rows(logk, log_g);
    double l1x = 0.0;
    for (Index i = 0; i < m; ++i) {
      const double mass = std::isfinite(log_f(i) + row(i)) ? std::exp(log_f(i) + row(i)) : 0.0;
      l1x += std::abs(mass - mu0.masses()(i));
    }
    const Vector col = lse_rows(logk, log_f);
    double l1y = 0.0;
    for (Index j = 0; j < m; ++j) {
      const double mass = std::isfinite(log_g(j) + col(j)) ? std::exp(log_g(j) + col(j)) : 0.0;
      l1y += std::abs(mass - muT.masses()(j));
    }
    residual = l1x + l1y;
    if (residual_history) residual_history->push_back(residual);
    if (residual < tol) break;
  }
  if (residual >= tol)
    throw NumericalError("sinkhorn: no convergence after " + std::to_string(max_iter) +
                         " iterations, residual " + format_double(residual));
  return {mu0.lo(), mu0.hi(), m, std::move(log_f), std::move(log_g), eps, horizon, it + 1,
          residual};
}

Matrix sinkhorn_plan(const SchrodingerPotentials& pots) {
  const Matrix logk = log_kernel_matrix(pots.lo, pots.hi, pots.cells, 4.0 * pots.eps * pots.horizon);
  Matrix plan(pots.cells, pots.cells);
  for (Index i = 0; i < pots.cells; ++i)
    for (Index j = 0; j < pots.cells; ++j) {
      const double lp = pots.log_f(i) + logk(i, j) + pots.log_g(j);
      plan(i, j) = std::isfinite(lp) ? std::exp(lp) : 0.0;
    }
  return plan;
}

GridDensity sb_marginal(const SchrodingerPotentials& pots, double t) {
  if (t < -1e-12 || t > pots.horizon + 1e-12) throw ConfigError("sb_marginal: t outside [0, T]");
  t = std::min(std::max(t, 0.0), pots.horizon);
  const Index m = pots.cells;
  // degenerate kernels at the endpoints reduce to the identity
  const double t_floor = 1e-12;
  Vector log_alpha, log_beta;
  if (t <= t_floor) {
    log_alpha = pots.log_f;
  } else {
    log_alpha = lse_rows(log_kernel_matrix(pots.lo, pots.hi, m, 4.0 * pots.eps * t), pots.log_f);
  }
  const double rem = pots.horizon - t;
  if (rem <= t_floor) {
    log_beta = pots.log_g;
  } else {
    log_beta = lse_rows(log_kernel_matrix(pots.lo, pots.hi, m, 4.0 * pots.eps * rem), pots.log_g);
  }
  Vector logm = log_alpha + log_beta;
  const double peak = logm.maxCoeff();
  Vector masses(m);
  for (Index i = 0; i < m; ++i)
    masses(i) = std::isfinite(logm(i)) ? std::exp(logm(i) - peak) : 0.0;
  masses /= masses.sum();
  return GridDensity(pots.lo, pots.hi, std::move(masses));
}

// ---- closed forms -------------------------------------------------------------------

double sb_gaussian_cross_covariance(double s0, double s1, double eps, double horizon) {
  const double gamma = 2.0 * eps * horizon;
  return 0.5 * (std::sqrt(gamma * gamma + 4.0 * s0 * s0 * s1 * s1) - gamma);
}

Gaussian1D sb_gaussian_marginal(const Gaussian1D& a, const Gaussian1D& b, double eps,
                                double horizon, double t) {
  const double u = t / horizon;
  const double c = sb_gaussian_cross_covariance(a.stddev, b.stddev, eps, horizon);
  const double var = (1.0 - u) * (1.0 - u) * a.stddev * a.stddev +
                     u * u * b.stddev * b.stddev + 2.0 * u * (1.0 - u) * c +
                     2.0 * eps * t * (horizon - t) / horizon;
  return {(1.0 - u) * a.mean + u * b.mean, std::sqrt(var)};
}

Gaussian1D bb_geodesic(const GaussianMixture& mu0, const GaussianMixture& muT, double u) {
  if (mu0.size() != 1 || muT.size() != 1)
    throw ConfigError("bb_geodesic: closed form needs single-component endpoints");
  if (mu0.dim() != 1 || muT.dim() != 1) throw ConfigError("bb_geodesic: one-dimensional only");
  if (u < -1e-12 || u > 1.0 + 1e-12) throw ConfigError("bb_geodesic: fraction outside [0,1]");
  const double m0 = mu0.component(0).mean(0);
  const double m1 = muT.component(0).mean(0);
  const double s0 = std::sqrt(mu0.component(0).covariance(0, 0));
  const double s1 = std::sqrt(muT.component(0).covariance(0, 0));
  return {(1.0 - u) * m0 + u * m1, (1.0 - u) * s0 + u * s1};
}

double kl_control_energy(const Field& w, const TrajectoryRecord& traj, double eps) {
  if (eps <= 0.0) throw ConfigError("kl_control_energy: eps must be positive");
  std::vector<double> slice(static_cast<std::size_t>(traj.n_times()));
  for (Index i = 0; i < traj.n_times(); ++i) {
    const auto& ens = traj.at(i);
    slice[static_cast<std::size_t>(i)] =
        w.eval_many(ens.points, ens.time).rowwise().squaredNorm().mean();
  }
  double total = 0.0;
  for (Index i = 0; i + 1 < traj.n_times(); ++i)
    total += 0.5 * (traj.grid[i + 1] - traj.grid[i]) *
             (slice[static_cast<std::size_t>(i)] + slice[static_cast<std::size_t>(i + 1)]);
  return total / (4.0 * eps);
}

KlIdentityCheck ecfm_kl_identity_check(const Field& v, const Field& u_star,
                                       const MixturePath& path, const TimeGrid& grid, double eps,
                                       Index batch, std::uint64_t seed) {
  if (eps <= 0.0) throw ConfigError("ecfm_kl_identity_check: eps must be positive");
  const Index n_times = grid.size();
  struct Slice {
    double lhs, w2, rate, su, fisher;
    double se_lhs, se_w2, se_rate, se_su, se_fisher;
  };
  std::vector<Slice> slices(static_cast<std::size_t>(n_times));

  for (Index n = 0; n < n_times; ++n) {
    const double t = grid[n];
    const GaussianMixture law = path.at(t);
    auto ens = sample(law, batch, splitmix64(seed + static_cast<std::uint64_t>(n)));
    ens.time = t;

    const Matrix vx = v.eval_many(ens.points, t);
    const Matrix ux = u_star.eval_many(ens.points, t);
    Matrix scores(batch, ens.dim());
    for (Index i = 0; i < batch; ++i)
      scores.row(i) = law.score(ens.points.row(i).transpose()).transpose();
    const Vector div = v.divergence_many(ens.points, t);

    const Vector lhs_v = 0.5 * (vx - ux).rowwise().squaredNorm();
    const Vector w_v = (vx - ux + eps * scores).rowwise().squaredNorm();
    const Vector su_v = (scores.array() * ux.array()).rowwise().sum();
    const Vector fi_v = scores.rowwise().squaredNorm();

    auto mean_se = [&](const Vector& vals, double& mean, double& se) {
      mean = vals.mean();
      const double var = (vals.array() - mean).square().sum() / static_cast<double>(batch - 1);
      se = std::sqrt(var / static_cast<double>(batch));
    };
    auto& s = slices[static_cast<std::size_t>(n)];
    mean_se(lhs_v, s.lhs, s.se_lhs);
    mean_se(w_v, s.w2, s.se_w2);
    mean_se(su_v, s.su, s.se_su);
    mean_se(fi_v, s.fisher, s.se_fisher);
    double mean_div = div.mean();
    const double var_div =
        (div.array() - mean_div).square().sum() / static_cast<double>(batch - 1);
    s.rate = mean_div;
    s.se_rate = std::sqrt(var_div / static_cast<double>(batch));
  }

  // trapezoid weights
  std::vector<double> w(static_cast<std::size_t>(n_times), 0.0);
  for (Index i = 0; i + 1 < n_times; ++i) {
    const double dt = grid[i + 1] - grid[i];
    w[static_cast<std::size_t>(i)] += 0.5 * dt;
    w[static_cast<std::size_t>(i + 1)] += 0.5 * dt;
  }

  double lhs = 0.0, kl = 0.0, rate_int = 0.0, su_int = 0.0, fi_int = 0.0, var = 0.0;
  for (Index n = 0; n < n_times; ++n) {
    const auto& s = slices[static_cast<std::size_t>(n)];
    const double wn = w[static_cast<std::size_t>(n)];
    lhs += wn * s.lhs;
    kl += wn * s.w2;
    rate_int += wn * s.rate;
    su_int += wn * s.su;
    fi_int += wn * s.fisher;
    // residual combines lhs - (w2/2 + eps rate + eps su - eps^2/2 fisher)
    var += wn * wn *
           (s.se_lhs * s.se_lhs + 0.25 * s.se_w2 * s.se_w2 + eps * eps * s.se_rate * s.se_rate +
            eps * eps * s.se_su * s.se_su + 0.25 * eps * eps * eps * eps * s.se_fisher * s.se_fisher);
  }
  kl /= (4.0 * eps);
  const double rhs = 2.0 * eps * kl + eps * rate_int + eps * su_int - 0.5 * eps * eps * fi_int;
  return {lhs, rhs, std::abs(lhs - rhs), std::sqrt(var)};
}

// ---- gamma sweep -------------------------------------------------------------------

std::string GammaSweepResult::to_csv() const {
  CsvWriter csv({"lambda", "seed", "objective", "sup_w2", "endpoint_w2"});
  for (const auto& r : rows)
    csv.add_row({r.lambda, static_cast<double>(r.seed), r.objective, r.sup_w2, r.endpoint_w2});
  return csv.str();
}

GammaSweepResult gamma_sweep(const TransportProblem& problem, const std::vector<double>& lambdas,
                             const TrainerConfig& base_config,
                             const std::vector<std::uint64_t>& seeds) {
  if (problem.mu0.size() != 1 || problem.muT.size() != 1)
    throw ConfigError("gamma_sweep: single-Gaussian endpoints required");
  for (std::size_t i = 1; i < lambdas.size(); ++i)
    if (!(lambdas[i] < lambdas[i - 1])) throw ConfigError("gamma_sweep: budgets must descend");

  GammaSweepResult result;
  result.completed = true;
  for (double lam : lambdas) {
    for (std::uint64_t seed : seeds) {
      TrainerConfig cfg = base_config;
      cfg.lambdas = {lam};
      cfg.seed = seed;
      const TrainResult tr = train(problem, cfg);
      if (tr.history.status != "completed") {
        result.completed = false;
        result.message = "training aborted at lambda " + format_double(lam) + ": " +
                         tr.history.status;
        return result;
      }
      double sup_w2 = 0.0;
      for (Index n = 0; n < problem.grid.size(); ++n) {
        const auto g = bb_geodesic(problem.mu0, problem.muT,
                                   problem.grid[n] / problem.grid.horizon());
        sup_w2 = std::max(sup_w2, w2_gaussian1d(tr.eval_trajectory.at(n), g.mean, g.stddev));
      }
      result.rows.push_back({lam, seed, tr.final_objective, sup_w2, tr.endpoint_w2});
    }
  }
  return result;
}

}  // namespace ecfm
