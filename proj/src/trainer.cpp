#include "ecfm/trainer.hpp"

#include "ecfm/io.hpp"
#include "ecfm/rng.hpp"

#include <cmath>

namespace ecfm {

TransportProblem pure_transport_problem(double m0, double s0, double m1, double s1,
                                        const TimeGrid& grid) {
  const double horizon = grid.horizon();
  TransportProblem p{GaussianMixture::gaussian1d(m0, s0 * s0),
                     GaussianMixture::gaussian1d(m1, s1 * s1), grid,
                     std::make_shared<ZeroField>(1, horizon),
                     std::make_shared<GaussianInterpolantField>(m0, s0, m1, s1, horizon)};
  return p;
}

void TrainerConfig::validate(Index n_times) const {
  if (rho <= 0.0) throw ConfigError("TrainerConfig: rho must be positive");
  if (batch < 16 || eval_batch < 16) throw ConfigError("TrainerConfig: batch too small");
  if (max_outer < 1) throw ConfigError("TrainerConfig: max_outer must be >= 1");
  if (!(alpha_conf > 0.0 && alpha_conf < 1.0)) throw ConfigError("TrainerConfig: alpha_conf in (0,1)");
  if (scheduler.enabled) {
    if (scheduler.lambda_min > scheduler.lambda_max)
      throw ConfigError("TrainerConfig: lambda_min > lambda_max");
    // two-timescale ordering: budget updates must be the slowest schedule
    if (scheduler.zeta.decay_at < beta.decay_at || beta.decay_at < alpha.decay_at)
      throw ConfigError("TrainerConfig: schedules must satisfy zeta slower than beta slower than alpha");
  }
  lambda_vector(n_times);
}

std::vector<double> TrainerConfig::lambda_vector(Index n_times) const {
  if (lambdas.empty()) throw ConfigError("TrainerConfig: no budgets given");
  if (static_cast<Index>(lambdas.size()) == 1)
    return std::vector<double>(static_cast<std::size_t>(n_times), lambdas.front());
  if (static_cast<Index>(lambdas.size()) != n_times)
    throw ConfigError("TrainerConfig: lambda count must be 1 or match the grid");
  for (double l : lambdas)
    if (l < 0.0) throw ConfigError("TrainerConfig: budgets must be nonnegative");
  return lambdas;
}

nlohmann::json TrainIterationRecord::to_json() const {
  nlohmann::json j;
  j["k"] = k;
  j["fit_loss"] = fit_loss;
  j["objective"] = objective;
  j["aug_lagrangian"] = aug_lagrangian;
  j["residuals"] = residuals;
  j["eta"] = eta;
  j["lambda"] = lambdas;
  j["feasible"] = feasible;
  j["grad_norm"] = grad_norm;
  if (max_mode_multiplier > 0.0 || max_mode_residual != 0.0) {
    j["max_mode_residual"] = max_mode_residual;
    j["max_mode_multiplier"] = max_mode_multiplier;
  }
  return j;
}

std::string TrainHistory::to_ndjson() const {
  std::string out;
  for (const auto& r : records) {
    out += r.to_json().dump();
    out += '\n';
  }
  nlohmann::json tail;
  tail["status"] = status;
  out += tail.dump();
  out += '\n';
  return out;
}

double residual(const EntropyRateEstimate& rate, double lambda, bool robust,
                double radius_factor) {
  if (std::isinf(lambda)) return -std::numeric_limits<double>::infinity();
  const double value = robust ? rate.value - rate.std_error * radius_factor : rate.value;
  return -value - lambda;
}

Vector dual_step(const Vector& eta, const std::vector<double>& residuals, double beta_k) {
  if (beta_k <= 0.0) throw ConfigError("dual_step: beta must be positive");
  if (eta.size() != static_cast<Index>(residuals.size()))
    throw ConfigError("dual_step: size mismatch");
  Vector next(eta.size());
  for (Index i = 0; i < eta.size(); ++i) {
    const double g = residuals[static_cast<std::size_t>(i)];
    next(i) = std::isinf(g) && g < 0.0 ? 0.0 : std::max(eta(i) + beta_k * g, 0.0);
  }
  return next;
}

std::vector<double> schedule_lambda(const std::vector<double>& lambdas,
                                    const std::vector<double>& rates, double margin,
                                    double zeta_k, double lambda_min, double lambda_max) {
  if (lambda_min > lambda_max) throw ConfigError("schedule_lambda: lambda_min > lambda_max");
  if (lambdas.size() != rates.size()) throw ConfigError("schedule_lambda: size mismatch");
  std::vector<double> out(lambdas.size());
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (std::isinf(lambdas[i])) {
      out[i] = lambdas[i];
      continue;
    }
    const double raw = lambdas[i] + zeta_k * (rates[i] + margin);
    out[i] = std::min(std::max(raw, lambda_min), lambda_max);
  }
  return out;
}

double mode_residual(const ParticleEnsemble& ens, const ModeSet& core, double floor) {
  return floor - mode_mass(ens, core).mass;
}

double complementary_slackness_gap(const std::vector<double>& eta,
                                   const std::vector<double>& residuals) {
  if (eta.size() != residuals.size()) throw ConfigError("slackness: size mismatch");
  double gap = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < eta.size(); ++i) {
    const double viol = std::max(-residuals[i], 0.0);  // slack (-g)_+
    const double m = std::min(eta[i], viol);
    gap = std::max(gap, m - 0.05 * std::max(1.0, eta[i]));
  }
  return gap;
}

// ---- augmented Lagrangian ---------------------------------------------------------------

AugLagrangian augmented_lagrangian(const RbfField& field, const Field& teacher,
                                   const std::vector<ParticleEnsemble>& batches,
                                   const std::vector<double>& quad_weights, const Vector& eta,
                                   const std::vector<double>& g_values,
                                   const std::vector<double>& lambdas, double rho) {
  const Index n_times = static_cast<Index>(batches.size());
  if (static_cast<Index>(quad_weights.size()) != n_times || eta.size() != n_times ||
      static_cast<Index>(g_values.size()) != n_times ||
      static_cast<Index>(lambdas.size()) != n_times)
    throw ConfigError("augmented_lagrangian: inconsistent inputs");

  const Index d = field.dim();
  const Index m = field.n_centers();
  AugLagrangian out;
  out.gradient.resize(static_cast<std::size_t>(field.n_knots()));
  for (auto& g : out.gradient) {
    g.rbf_weights = Matrix::Zero(m, d);
    g.affine = Matrix::Zero(d, d);
    g.offset = Vector::Zero(d);
  }

  double fit = 0.0;
  for (Index n = 0; n < n_times; ++n) {
    const auto& ens = batches[static_cast<std::size_t>(n)];
    const double t = ens.time;
    const double w = quad_weights[static_cast<std::size_t>(n)];
    const Index b = ens.size();
    const auto bl = field.blend(t);
    const double inv_b = 1.0 / static_cast<double>(b);
    const double invh2 = 1.0 / (field.bandwidth() * field.bandwidth());

    const Matrix kmat = field.kernel_matrix(ens.points);                 // b x m
    const Matrix resid = field.eval_many(ens.points, t) -
                         teacher.eval_many(ens.points, t);               // b x d
    fit += w * 0.5 * inv_b * resid.squaredNorm();

    const Matrix grad_w = inv_b * (kmat.transpose() * resid);            // m x d
    const Matrix grad_a = inv_b * (resid.transpose() * ens.points);      // d x d
    const Vector grad_b = inv_b * resid.colwise().sum().transpose();
    // mean kernel gradients: (1/b) sum_i grad kappa_m(x_i), one row per center
    const Matrix mean_kgrad =
        (-invh2 * inv_b) * (kmat.transpose() * ens.points -
                            kmat.colwise().sum().transpose().asDiagonal() * field.centers());

    // constraint force (eta_n + rho (g_n)_+) d(-rate)/dtheta; disabled bins skipped
    const double lam = lambdas[static_cast<std::size_t>(n)];
    const double g = g_values[static_cast<std::size_t>(n)];
    double force = 0.0;
    if (!std::isinf(lam)) force = eta(n) + rho * std::max(g, 0.0);

    auto accumulate = [&](Index knot, double bw) {
      if (bw == 0.0) return;
      auto& gk = out.gradient[static_cast<std::size_t>(knot)];
      gk.rbf_weights.noalias() += (w * bw) * grad_w;
      gk.affine.noalias() += (w * bw) * grad_a;
      gk.offset += (w * bw) * grad_b;
      if (force != 0.0) {
        // rate = mean divergence is linear in theta; g = -rate - lambda flips sign
        gk.rbf_weights.noalias() -= (force * bw) * mean_kgrad;
        gk.affine -= (force * bw) * Matrix::Identity(d, d);
      }
    };
    accumulate(bl.left, bl.w_left);
    if (bl.w_right != 0.0) accumulate(bl.right, bl.w_right);
  }

  double penalty = 0.0;
  for (Index n = 0; n < n_times; ++n) {
    if (std::isinf(lambdas[static_cast<std::size_t>(n)])) continue;
    const double g = g_values[static_cast<std::size_t>(n)];
    penalty += eta(n) * g + 0.5 * rho * std::max(g, 0.0) * std::max(g, 0.0);
  }
  out.value = fit + penalty;
  return out;
}

// ---- training loop -----------------------------------------------------------------------

namespace {

std::vector<double> trapezoid_weights(const TimeGrid& grid) {
  const Index n = grid.size();
  std::vector<double> w(static_cast<std::size_t>(n), 0.0);
  for (Index i = 0; i + 1 < n; ++i) {
    const double dt = grid[i + 1] - grid[i];
    w[static_cast<std::size_t>(i)] += 0.5 * dt;
    w[static_cast<std::size_t>(i + 1)] += 0.5 * dt;
  }
  return w;
}

Matrix corridor_centers(const TransportProblem& problem, Index m) {
  const Index d = problem.mu0.dim();
  if (d == 1) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const GaussianMixture* mix : {&problem.mu0, &problem.muT}) {
      for (Index k = 0; k < mix->size(); ++k) {
        const auto& c = mix->component(k);
        const double s = std::sqrt(c.covariance(0, 0));
        lo = std::min(lo, c.mean(0) - 4.0 * s);
        hi = std::max(hi, c.mean(0) + 4.0 * s);
      }
    }
    Matrix centers(m, 1);
    for (Index i = 0; i < m; ++i)
      centers(i, 0) = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(m - 1);
    return centers;
  }
  // in higher dimension scatter centers over both endpoint clouds
  const auto e0 = sample(problem.mu0, (m + 1) / 2, 1234567);
  const auto e1 = sample(problem.muT, m - (m + 1) / 2, 7654321);
  Matrix centers(m, d);
  centers.topRows(e0.size()) = e0.points;
  centers.bottomRows(e1.size()) = e1.points;
  return centers;
}

double problem_second_moment(const TransportProblem& problem) {
  double m2 = 1.0;
  for (const GaussianMixture* mix : {&problem.mu0, &problem.muT})
    for (Index k = 0; k < mix->size(); ++k) {
      const auto& c = mix->component(k);
      m2 = std::max(m2, c.mean.squaredNorm() + c.covariance.trace());
    }
  return m2;
}

struct RateSlice {
  EntropyRateEstimate estimate;
};

std::vector<EntropyRateEstimate> estimate_rates(const RbfField& field,
                                                const std::vector<ParticleEnsemble>& batches,
                                                const std::optional<Index>& hutch_probes,
                                                std::uint64_t seed) {
  std::vector<EntropyRateEstimate> rates;
  rates.reserve(batches.size());
  for (std::size_t n = 0; n < batches.size(); ++n) {
    std::optional<HutchinsonMode> mode;
    if (hutch_probes) mode = HutchinsonMode{*hutch_probes, splitmix64(seed + n)};
    rates.push_back(entropy_rate_div(field, batches[n], mode));
  }
  return rates;
}

double quadrature_objective(const RbfField& field, const Field& u_star,
                            const std::vector<ParticleEnsemble>& batches,
                            const std::vector<double>& weights) {
  double total = 0.0;
  for (std::size_t n = 0; n < batches.size(); ++n)
    total += weights[n] * fm_risk_slice(field, u_star, batches[n]).value;
  return total;
}

}  // namespace

TrainResult train(const TransportProblem& problem, const TrainerConfig& config) {
  const TimeGrid& grid = problem.grid;
  config.validate(grid.size());
  const Index n_times = grid.size();
  const Index d = problem.mu0.dim();
  std::vector<double> lambdas = config.lambda_vector(n_times);
  const double radius_factor = lcb_radius_factor(n_times, config.alpha_conf);

  const Matrix centers = corridor_centers(problem, config.rbf_centers);
  double spacing = 1.0;
  if (config.rbf_centers > 1 && d == 1) spacing = centers(1, 0) - centers(0, 0);
  const double bandwidth = 1.2 * std::max(spacing, 1e-3);
  auto field = std::make_shared<RbfField>(
      RbfField::zeros(centers, bandwidth, grid.times(), grid.horizon(), d));

  Vector eta = Vector::Zero(n_times);
  const Index n_modes = static_cast<Index>(config.mode_constraints.size());
  Matrix nu = Matrix::Zero(n_modes, n_times);
  const std::vector<double> quad_w = trapezoid_weights(grid);
  const double m2 = problem_second_moment(problem);
  Rng master(config.seed);

  // budgets enforced during optimization; tightened by the feasibility margin
  auto train_lambda = [&](Index n) {
    const double lam = lambdas[static_cast<std::size_t>(n)];
    if (std::isinf(lam)) return lam;
    return std::max(lam - config.constraint_margin, 0.0);
  };

  TrainHistory history;
  history.status = "completed";
  auto abort_with = [&](const char* why) {
    history.status = std::string("aborted: ") + why;
  };

  for (Index k = 0; k < config.max_outer; ++k) {
    // fresh minibatch from mu0, pushed through the current flow
    const std::uint64_t iter_seed = master.derive(static_cast<std::uint64_t>(k)).next_u64();
    const auto ens0 = sample(problem.mu0, config.batch, iter_seed);
    TrajectoryRecord traj{grid, {}, "", 0, {}};
    try {
      traj = integrate_ode(*field, ens0, grid, config.substeps);
    } catch (const NumericalError&) {
      abort_with("non-finite trajectory");
      break;
    }

    const auto rates = estimate_rates(*field, traj.ensembles, config.hutchinson_probes,
                                      iter_seed ^ 0x517CC1B727220A95ULL);
    std::vector<double> g(static_cast<std::size_t>(n_times));
    for (Index n = 0; n < n_times; ++n)
      g[static_cast<std::size_t>(n)] =
          residual(rates[static_cast<std::size_t>(n)], train_lambda(n), config.robust,
                   radius_factor);

    const auto al = augmented_lagrangian(*field, *problem.teacher, traj.ensembles, quad_w, eta, g,
                                         lambdas, config.rho);
    if (!std::isfinite(al.value)) {
      abort_with("non-finite augmented lagrangian");
      break;
    }

    // preconditioned gradient step: the affine block sees features of scale m2
    const double step = config.alpha.at(k);
    double grad_norm2 = 0.0;
    for (Index q = 0; q < field->n_knots(); ++q) {
      const auto& gk = al.gradient[static_cast<std::size_t>(q)];
      auto& knot = field->knot(q);
      knot.rbf_weights -= step * gk.rbf_weights;
      knot.affine -= (step / m2) * gk.affine;
      knot.offset -= step * gk.offset;
      grad_norm2 += gk.rbf_weights.squaredNorm() + gk.affine.squaredNorm() + gk.offset.squaredNorm();
    }
    if (!std::isfinite(grad_norm2)) {
      abort_with("non-finite gradient");
      break;
    }

    // residuals for the dual step; optionally re-simulated under the new theta
    std::vector<double> g_dual = g;
    std::vector<double> rate_values(static_cast<std::size_t>(n_times));
    for (Index n = 0; n < n_times; ++n)
      rate_values[static_cast<std::size_t>(n)] = rates[static_cast<std::size_t>(n)].value;
    if (config.recompute_fresh) {
      const std::uint64_t fresh_seed =
          master.derive(static_cast<std::uint64_t>(k) ^ 0xD1B54A32D192ED03ULL).next_u64();
      const auto fresh0 = sample(problem.mu0, config.batch, fresh_seed);
      TrajectoryRecord fresh{grid, {}, "", 0, {}};
      try {
        fresh = integrate_ode(*field, fresh0, grid, config.substeps);
      } catch (const NumericalError&) {
        abort_with("non-finite trajectory after primal step");
        break;
      }
      const auto fresh_rates = estimate_rates(*field, fresh.ensembles, config.hutchinson_probes,
                                              fresh_seed ^ 0x517CC1B727220A95ULL);
      for (Index n = 0; n < n_times; ++n) {
        g_dual[static_cast<std::size_t>(n)] =
            residual(fresh_rates[static_cast<std::size_t>(n)], train_lambda(n), config.robust,
                     radius_factor);
        rate_values[static_cast<std::size_t>(n)] = fresh_rates[static_cast<std::size_t>(n)].value;
      }
    }
    eta = dual_step(eta, g_dual, config.beta.at(k));

    if (config.scheduler.enabled)
      lambdas = schedule_lambda(lambdas, rate_values, config.scheduler.margin,
                                config.scheduler.zeta.at(k), config.scheduler.lambda_min,
                                config.scheduler.lambda_max);

    // mode-floor monitors: dual ascent on h = floor - mass, no primal force
    double max_h = 0.0;
    if (n_modes > 0) {
      const double beta_k = config.beta.at(k);
      for (Index kk = 0; kk < n_modes; ++kk) {
        const auto& mc = config.mode_constraints[static_cast<std::size_t>(kk)];
        for (Index n = 0; n < n_times; ++n) {
          const double h = mode_residual(traj.ensembles[static_cast<std::size_t>(n)], mc.core,
                                         mc.floor);
          max_h = std::max(max_h, h);
          nu(kk, n) = std::max(nu(kk, n) + beta_k * h, 0.0);
        }
      }
    }

    TrainIterationRecord rec;
    rec.k = k;
    rec.fit_loss = quadrature_objective(*field, *problem.teacher, traj.ensembles, quad_w);
    rec.objective = quadrature_objective(*field, *problem.u_star, traj.ensembles, quad_w);
    rec.aug_lagrangian = al.value;
    rec.residuals = g_dual;
    rec.eta.assign(eta.data(), eta.data() + eta.size());
    rec.lambdas = lambdas;
    rec.feasible = true;
    for (double gv : g_dual)
      if (gv > 0.0) rec.feasible = false;
    rec.grad_norm = std::sqrt(grad_norm2);
    if (n_modes > 0) {
      rec.max_mode_residual = max_h;
      rec.max_mode_multiplier = nu.maxCoeff();
    }
    history.records.push_back(std::move(rec));
  }

  // final evaluation on a larger batch; an aborted field may be unusable, in
  // which case the diagnostics fall back to the frozen zero field
  const std::uint64_t eval_seed = master.derive(0xE7A1CB0FULL).next_u64();
  const auto eval0 = sample(problem.mu0, config.eval_batch, eval_seed);
  TrajectoryRecord eval_traj{grid, {}, "", 0, {}};
  try {
    eval_traj = integrate_ode(*field, eval0, grid, config.substeps);
  } catch (const NumericalError&) {
    for (Index q = 0; q < field->n_knots(); ++q) {
      field->knot(q).rbf_weights.setZero();
      field->knot(q).affine.setZero();
      field->knot(q).offset.setZero();
    }
    eval_traj = integrate_ode(*field, eval0, grid, config.substeps);
    if (history.status == "completed") abort_with("non-finite final field");
  }
  EntropyRateSeries series = rate_series(
      grid, [&](Index n) { return entropy_rate_div(*field, eval_traj.at(n)); },
      config.alpha_conf);
  std::vector<double> final_g(static_cast<std::size_t>(n_times));
  for (Index n = 0; n < n_times; ++n)
    final_g[static_cast<std::size_t>(n)] =
        residual(series.estimates[static_cast<std::size_t>(n)],
                 lambdas[static_cast<std::size_t>(n)], config.robust, radius_factor);
  const double objective = fm_risk(*field, *problem.u_star, eval_traj);
  const auto target = sample(problem.muT, config.eval_batch,
                             master.derive(0x7A26E1A7C4F0D2B5ULL).next_u64());
  const double endpoint = w2(eval_traj.at(n_times - 1), target);

  TrainResult result{field,
                     std::move(history),
                     std::move(series),
                     std::move(final_g),
                     std::vector<double>(eta.data(), eta.data() + eta.size()),
                     lambdas,
                     objective,
                     endpoint,
                     std::move(eval_traj),
                     std::move(nu)};
  return result;
}

}  // namespace ecfm
