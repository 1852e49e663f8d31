#include <doctest.h>

#include "ecfm/entropy_rate.hpp"
#include "ecfm/io.hpp"
#include "ecfm/rng.hpp"

#include <cmath>

using namespace ecfm;

TEST_CASE("divergence-form estimator on closed-form fields") {
  const auto e = sample(GaussianMixture::gaussian1d(0.0, 1.0), 4096, 3);
  CHECK(entropy_rate_div(ZeroField(1, 1.0), e).value == 0.0);

  ContractionField c(0.1, 0.1);
  const auto ec = sample(GaussianMixture::gaussian1d(0.0, 1.0), 4096, 4);
  const auto est = entropy_rate_div(c, ec);
  CHECK(est.value == doctest::Approx(-10.0).epsilon(1e-12));
  CHECK(est.std_error == doctest::Approx(0.0).epsilon(1e-12));

  Matrix a(2, 2);
  a << 2.0, 0.0, 0.0, -3.0;
  const auto e2 = sample(GaussianMixture::single(Vector::Zero(2), Matrix::Identity(2, 2)), 512, 5);
  CHECK(entropy_rate_div(AffineField(a, Vector::Zero(2), 1.0), e2).value ==
        doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("fp-form estimator") {
  // pure heat flow from N(0,1): dH/dt = eps * I = 0.5 at t=0
  const double eps = 0.5;
  const auto law = GaussianMixture::gaussian1d(0.0, 1.0);
  auto e = sample(law, 100000, 7);
  const auto est = entropy_rate_fp(ZeroField(1, 1.0), eps, law, e);
  CHECK(std::abs(est.value - 0.5) < 3.0 * est.std_error);

  // eps = 0 reduces exactly to the divergence form
  AffineField b(Matrix::Constant(1, 1, -0.8), Vector::Zero(1), 1.0);
  const auto d0 = entropy_rate_fp(b, 0.0, law, e);
  const auto d1 = entropy_rate_div(b, e);
  CHECK(d0.value == d1.value);

  // Gibbs-stationary OU: E[div b] + eps I = -1 + 1 = 0
  AffineField ou(-Matrix::Identity(1, 1), Vector::Zero(1), 1.0);
  const auto dg = entropy_rate_fp(ou, 1.0, law, e);
  CHECK(std::abs(dg.value) < 3.0 * dg.std_error);

  CHECK_THROWS_AS(entropy_rate_fp(ou, -0.5, law, e), ConfigError);
}

TEST_CASE("finite-difference oracle") {
  // zero field: all rates vanish within noise
  const auto e0 = sample(GaussianMixture::gaussian1d(0.0, 1.0), 20000, 11);
  const auto grid = TimeGrid::uniform(1.0, 6);
  const auto still = integrate_ode(ZeroField(1, 1.0), e0, grid, 1);
  const auto series0 = entropy_rate_fd(still, 5);
  for (const auto& est : series0.estimates)
    CHECK(std::abs(est.value) < 3.0 * std::max(est.std_error, 1e-12));

  // uniform contraction x -> (1-t)x on [0, 0.5]: rate = d log(1-t)/dt interval-avg
  std::vector<double> times;
  for (int i = 0; i <= 10; ++i) times.push_back(0.05 * i);
  const TimeGrid cgrid(times);
  TrajectoryRecord traj{cgrid, {}, "map", 1, {}};
  for (double t : times) {
    ParticleEnsemble e = e0;
    e.points *= (1.0 - t);
    e.time = t;
    traj.ensembles.push_back(std::move(e));
  }
  const auto series = entropy_rate_fd(traj, 5);
  for (Index i = 1; i + 1 < series.size(); ++i) {
    const double t_lo = cgrid[i - 1], t_hi = cgrid[i + 1];
    const double exact = std::log((1.0 - t_hi) / (1.0 - t_lo)) / (t_hi - t_lo);
    const auto& est = series.estimates[static_cast<std::size_t>(i)];
    // scaling is exact for the k-NN estimator applied to scaled copies
    CHECK(std::abs(est.value - exact) < 1e-8 + 3.0 * est.std_error);
  }

  // heat flow from N(0,1), eps = 1/2: rate near t=0 close to 0.5
  const auto hgrid = TimeGrid::uniform(1.0, 11);
  const auto heat = integrate_sde(ZeroField(1, 1.0), [](double) { return 0.5; },
                                  sample(GaussianMixture::gaussian1d(0.0, 1.0), 50000, 13), hgrid,
                                  4, 17);
  const auto hseries = entropy_rate_fd(heat, 5);
  const auto& first = hseries.estimates[0];
  const double expect = 0.5 * std::log(1.1) / 0.1;  // interval-average of eps*I
  CHECK(std::abs(first.value - expect) < 3.0 * std::max(first.std_error, 0.01));
}

TEST_CASE("estimator agreement on a smooth analytic flow") {
  AffineField decay(Matrix::Constant(1, 1, -0.6), Vector::Zero(1), 1.0);
  const auto e0 = sample(GaussianMixture::gaussian1d(0.0, 1.0), 50000, 19);
  const auto grid = TimeGrid::uniform(1.0, 9);
  const auto traj = integrate_ode(decay, e0, grid, 8);
  const auto fd = entropy_rate_fd(traj, 5);
  for (Index i = 1; i + 1 < grid.size(); ++i) {
    const auto dv = entropy_rate_div(decay, traj.at(i));
    const auto& fde = fd.estimates[static_cast<std::size_t>(i)];
    const double pooled = std::hypot(dv.std_error, fde.std_error);
    CHECK(std::abs(dv.value - fde.value) < 3.0 * std::max(pooled, 1e-9));
  }
}

TEST_CASE("fp form equals divergence form on the current velocity") {
  const double eps = 0.5;
  const auto mix0 = GaussianMixture::gaussian1d(0.0, 1.0);
  const MixturePath path = MixturePath::heat_flow(mix0, eps, 1.0);
  auto score = std::make_shared<ScoreField>(path);
  auto zero = std::make_shared<ZeroField>(1, 1.0);
  auto vcur = current_velocity(zero, [eps](double) { return eps; }, score);
  for (double t : {0.0, 0.3, 0.8}) {
    auto ens = sample(path.at(t), 100000, 23 + static_cast<std::uint64_t>(100 * t));
    ens.time = t;
    const auto fp = entropy_rate_fp(*zero, eps, path.at(t), ens);
    const auto dv = entropy_rate_div(*vcur, ens);
    const double pooled = std::hypot(fp.std_error, dv.std_error);
    CHECK(std::abs(fp.value - dv.value) < 3.0 * std::max(pooled, 1e-9));
  }
}

TEST_CASE("hutchinson mode converges at the Monte Carlo rate") {
  Matrix a(3, 3);
  a << -0.2, 0.5, 0.1, -0.4, 0.9, 0.0, 0.3, -0.1, -1.2;
  AffineField f(a, Vector::Zero(3), 1.0);
  const auto ens = sample(GaussianMixture::single(Vector::Zero(3), Matrix::Identity(3, 3)), 256, 29);
  const double exact = a.trace();

  std::vector<double> log_r, log_err;
  for (Index R : {10, 100, 1000, 10000}) {
    double mse = 0.0;
    const int reps = 30;
    for (int s = 0; s < reps; ++s) {
      const auto est = entropy_rate_div(f, ens, HutchinsonMode{R, 500 + static_cast<std::uint64_t>(s)});
      mse += (est.value - exact) * (est.value - exact);
    }
    log_r.push_back(std::log(static_cast<double>(R)));
    log_err.push_back(0.5 * std::log(mse / reps));
  }
  // slope of log err vs log R should be about -1/2
  const double n = static_cast<double>(log_r.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < log_r.size(); ++i) {
    sx += log_r[i];
    sy += log_err[i];
    sxx += log_r[i] * log_r[i];
    sxy += log_r[i] * log_err[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(slope == doctest::Approx(-0.5).epsilon(0.2));
}

TEST_CASE("lower confidence bounds") {
  const auto grid = TimeGrid::uniform(1.0, 10);
  auto series = rate_series(grid, [&](Index i) {
    EntropyRateEstimate e;
    e.value = (i == 3) ? -0.5 : 1.0;
    e.std_error = (i == 3) ? 0.1 : 0.0;
    e.method = "div-exact";
    return e;
  });

  const auto bounds = lcb(series, 0.05);
  const double expected = -0.5 - 0.1 * std::sqrt(2.0 * std::log(400.0));
  CHECK(bounds[3] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(bounds[0] == 1.0);  // zero std error: lcb equals the value

  // radius shrinks as alpha grows
  double prev = lcb_radius_factor(10, 0.01);
  for (double a : {0.05, 0.1, 0.5, 0.9}) {
    const double cur = lcb_radius_factor(10, a);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("effective budget estimators") {
  const auto grid = TimeGrid::uniform(1.0, 10);
  // all rates nonnegative: both estimates clamp at zero
  auto feasible = rate_series(grid, [&](Index) {
    EntropyRateEstimate e;
    e.value = 0.3;
    e.std_error = 0.01;
    e.method = "div-exact";
    return e;
  });
  const auto l0 = lambda_eff(feasible, 0.05);
  CHECK(l0.lambda_max == 0.0);
  CHECK(l0.lambda_lcb >= l0.lambda_max);

  auto mixed = rate_series(grid, [&](Index i) {
    EntropyRateEstimate e;
    e.value = (i == 3) ? -0.5 : 1.0;
    e.std_error = (i == 3) ? 0.1 : 0.0;
    e.method = "div-exact";
    return e;
  });
  const auto l1 = lambda_eff(mixed, 0.05);
  CHECK(l1.lambda_max == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(l1.lambda_lcb == doctest::Approx(0.5 + 0.1 * std::sqrt(2.0 * std::log(400.0))).epsilon(1e-12));
  CHECK(l1.lambda_lcb >= l1.lambda_max);
}

TEST_CASE("series csv export") {
  const auto grid = TimeGrid::uniform(1.0, 3);
  auto series = rate_series(grid, [&](Index i) {
    EntropyRateEstimate e;
    e.value = static_cast<double>(i);
    e.std_error = 0.5;
    e.method = "fp-form";
    return e;
  });
  const auto text = series.to_csv();
  CHECK(text.find("t,value,std_error,lcb,method") == 0);
  CHECK(text.find("fp-form") != std::string::npos);
}
