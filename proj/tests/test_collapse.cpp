#include <doctest.h>

#include "ecfm/collapse.hpp"
#include "ecfm/io.hpp"

#include <cmath>

using namespace ecfm;

namespace {

CollapseParams demo_params() {
  CollapseParams p;
  p.eps = 0.01;
  p.delta = 0.01;
  p.tau = 0.05;
  p.a = 4.0;
  p.sigma = 1.0;
  p.horizon = 1.0;
  return p;
}

}  // namespace

TEST_CASE("collapse map endpoints are the identity") {
  const auto p = demo_params();
  for (double x : {-3.0, -0.4, 0.0, 1.7, 5.0}) {
    CHECK(collapse_map(p, 0.0, x) == x);
    CHECK(collapse_map(p, p.horizon, x) == x);
  }
}

TEST_CASE("plateau formula") {
  const auto p = demo_params();
  CHECK(collapse_map(p, 0.5, 3.0) == doctest::Approx(0.04).epsilon(1e-12));
  CHECK(collapse_map(p, 0.5, -3.0) == doctest::Approx(-0.04).epsilon(1e-12));
  // plateau velocity vanishes everywhere in range
  for (double y : {-0.04, -0.011, 0.011, 0.05}) {
    CHECK(collapse_velocity(p, 0.5, y) == 0.0);
  }
}

TEST_CASE("squeeze-phase velocity matches the linear profile") {
  const auto p = demo_params();
  const double t = 0.5 * p.tau;  // well before the junction
  for (double x : {-2.0, 0.5, 3.0}) {
    const double y = collapse_map(p, t, x);
    CHECK(collapse_velocity(p, t, y) == doctest::Approx(-y / (p.tau - t)).epsilon(1e-12));
  }
}

TEST_CASE("velocity matches a finite difference of the map in t") {
  const auto p = demo_params();
  const double h = 1e-7;
  for (double t : {0.0, 0.2, 0.97}) {
    for (double x : {-2.5, 0.7, 4.2}) {
      const double y = collapse_map(p, t, x);
      const double fd = (collapse_map(p, t + h, x) - collapse_map(p, t, x)) / h;
      const double v = collapse_velocity(p, t, y);
      CHECK(std::isfinite(v));
      CHECK(v == doctest::Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("points outside the range are rejected") {
  const auto p = demo_params();
  CHECK_THROWS_AS(collapse_velocity(p, 0.5, 0.005), ConfigError);  // inside the gap
}

TEST_CASE("collapse field divergence is uniform in space") {
  const CollapseField f(demo_params());
  Vector y(1);
  y << 2.0;
  const double t = 0.02;
  Vector y2(1);
  y2 << -1.3;
  CHECK(f.divergence(y, t) == doctest::Approx(f.divergence(y2, t)).epsilon(1e-12));
  CHECK(f.divergence(y, t) == doctest::Approx(-1.0 / (demo_params().tau - t)).epsilon(1e-10));
}

TEST_CASE("collapse term diagnostics") {
  CollapseParams p = demo_params();
  p.delta = 1e-4;
  const auto diag = run_collapse_term(p, 20000, 33);

  // plateau support sits far away from the cores
  CHECK(diag.min_core_mass < 0.01);

  // sign masses stay balanced while the semantic cores die (set-mass vs
  // semantic collapse distinction)
  for (Index i = 0; i < diag.fine_grid.size(); ++i) {
    const std::size_t n = static_cast<std::size_t>(i);
    CHECK(diag.mass_plus[n] > 0.45);
    CHECK(diag.mass_plus[n] < 0.55);
    CHECK(diag.mass_minus[n] > 0.45);
    CHECK(diag.mass_minus[n] < 0.55);
  }

  // endpoints are exact: same base sample at t = 0 and t = T
  CHECK(diag.endpoint_w2 < 2.0 / std::sqrt(20000.0));
  CHECK(diag.endpoint_entropy_gap < 3.0 * 2.0 * diag.entropy_se.front());

  // the effective budget tracks |log eps| / tau; the squeeze-window average is
  // scaling-exact for the k-NN estimator, so the match is tight
  CHECK(diag.lambda_eff_max == doctest::Approx(p.rate_coupling()).epsilon(0.1));
  CHECK(diag.lambda_eff_lcb >= diag.lambda_eff_max);

  // csv has one row per fine-grid time
  const auto csv = diag.to_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') ==
        static_cast<long>(diag.fine_grid.size()) + 1);
}

TEST_CASE("collapse ladder diagnostics") {
  const auto terms = collapse_sequence(4);
  CHECK(terms.size() == 4);
  CHECK(terms[0].eps == doctest::Approx(0.02));
  CHECK(terms[3].tau == doctest::Approx(0.00625));

  const auto diags = run_collapse_sequence(terms, 20000, 7);

  // entropy-rate spikes grow without bound along the ladder ...
  for (std::size_t n = 1; n < diags.size(); ++n)
    CHECK(diags[n].lambda_eff_max > diags[n - 1].lambda_eff_max);
  for (std::size_t n = 0; n < diags.size(); ++n) {
    CHECK(diags[n].lambda_eff_max >= 0.5 * terms[n].rate_coupling());
    CHECK(diags[n].lambda_eff_max == doctest::Approx(terms[n].rate_coupling()).epsilon(0.1));
    CHECK(diags[n].min_core_mass < 0.01);
    // every finite budget is eventually violated
    for (double lam : {1.0, 10.0, 50.0})
      if (terms[n].rate_coupling() > 2.0 * lam) CHECK(diags[n].lambda_eff_lcb > lam);
  }

  // ... while the transport cost of the squeeze scales like 1/tau: moving the
  // modes a fixed distance inside a shrinking window is quadratically expensive
  // (kinetic lower bound W2^2 / (2 tau)), so the risk excess grows ~2x per step
  std::vector<double> log_tau, log_risk;
  for (std::size_t n = 0; n < diags.size(); ++n) {
    if (n > 0) CHECK(diags[n].fm_risk_excess > 1.5 * diags[n - 1].fm_risk_excess);
    log_tau.push_back(std::log(terms[n].tau));
    log_risk.push_back(std::log(diags[n].fm_risk_excess));
  }
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double m = static_cast<double>(log_tau.size());
  for (std::size_t i = 0; i < log_tau.size(); ++i) {
    sx += log_tau[i];
    sy += log_risk[i];
    sxx += log_tau[i] * log_tau[i];
    sxy += log_tau[i] * log_risk[i];
  }
  const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  CHECK(slope == doctest::Approx(-1.0).epsilon(0.3));

  // kinetic lower bound sanity: risk >= W2(mu0, plateau)^2 / tau for each term
  for (std::size_t n = 0; n < diags.size(); ++n) {
    const double dist = terms[n].a * (1.0 - terms[n].eps) - terms[n].delta;
    const double lower = dist * dist / terms[n].tau;  // two transitions, 1/2 factor each
    CHECK(diags[n].fm_risk_excess > lower);
  }
}
