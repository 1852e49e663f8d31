#include <doctest.h>

#include "ecfm/dynamics.hpp"
#include "ecfm/io.hpp"
#include "ecfm/rng.hpp"

#include <cmath>
#include <filesystem>

using namespace ecfm;

TEST_CASE("zero field leaves ensembles unchanged") {
  const auto e0 = sample(GaussianMixture::gaussian1d(0.0, 1.0), 128, 3);
  const auto grid = TimeGrid::uniform(1.0, 6);
  const auto traj = integrate_ode(ZeroField(1, 1.0), e0, grid, 4);
  traj.validate();
  for (Index i = 0; i < traj.n_times(); ++i) CHECK(traj.at(i).points == e0.points);
}

TEST_CASE("rk4 reproduces the exponential decay") {
  Matrix pts(2, 1);
  pts << 1.0, -0.5;
  const auto e0 = ParticleEnsemble::from_points(pts);
  AffineField decay(-Matrix::Identity(1, 1), Vector::Zero(1), 1.0);
  const auto traj = integrate_ode(decay, e0, TimeGrid::uniform(1.0, 11), 10);
  CHECK(std::abs(traj.at(10).points(0, 0) - std::exp(-1.0)) < 1e-6);
  CHECK(std::abs(traj.at(10).points(1, 0) + 0.5 * std::exp(-1.0)) < 1e-6);
}

TEST_CASE("rk4 error drops at fourth order until the floor") {
  Matrix pts(2, 1);
  pts << 1.0, 2.0;
  const auto e0 = ParticleEnsemble::from_points(pts);
  AffineField decay(-Matrix::Identity(1, 1), Vector::Zero(1), 1.0);
  const auto grid = TimeGrid::uniform(1.0, 2);  // single interval, vary substeps
  double prev_err = -1.0;
  for (int substeps : {2, 4, 8, 16}) {
    const auto traj = integrate_ode(decay, e0, grid, substeps);
    const double err = std::abs(traj.at(1).points(0, 0) - std::exp(-1.0));
    if (prev_err > 0.0 && prev_err > 1e-10) CHECK(prev_err / err >= 8.0);
    prev_err = err;
  }
}

TEST_CASE("constant field is pure translation") {
  const auto e0 = sample(GaussianMixture::gaussian1d(0.0, 1.0), 64, 5);
  AffineField shift(Matrix::Zero(1, 1), Vector::Constant(1, 2.5), 2.0);
  const auto traj = integrate_ode(shift, e0, TimeGrid::uniform(2.0, 5), 2);
  const Matrix expected = e0.points.array() + 5.0;
  CHECK((traj.at(4).points - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sde variance growth and determinism") {
  const auto e0 = sample(GaussianMixture::gaussian1d(0.0, 1e-12), 10000, 7);
  const double eps = 0.8, horizon = 1.0;
  const auto grid = TimeGrid::uniform(horizon, 6);
  const auto traj = integrate_sde(ZeroField(1, horizon), [&](double) { return eps; }, e0, grid, 5, 99);
  const auto& last = traj.at(5);
  const double mean = last.points.col(0).mean();
  const double var = (last.points.col(0).array() - mean).square().sum() / (last.size() - 1.0);
  const double target = 2.0 * eps * horizon;
  CHECK(std::abs(var - target) < 3.0 * target * std::sqrt(2.0 / 10000.0));

  const auto traj2 = integrate_sde(ZeroField(1, horizon), [&](double) { return eps; }, e0, grid, 5, 99);
  CHECK(traj2.at(5).points == last.points);
}

TEST_CASE("zero diffusivity reduces to the deterministic path") {
  const auto e0 = sample(GaussianMixture::gaussian1d(1.0, 0.25), 2000, 11);
  AffineField decay(-Matrix::Identity(1, 1), Vector::Zero(1), 1.0);
  const auto grid = TimeGrid::uniform(1.0, 11);
  const auto em = integrate_sde(decay, [](double) { return 0.0; }, e0, grid, 200, 1);
  const auto rk = integrate_ode(decay, e0, grid, 200);
  CHECK(w2(em.at(10), rk.at(10)) < 1e-3);
}

TEST_CASE("ornstein-uhlenbeck stationary variance") {
  const auto e0 = sample(GaussianMixture::gaussian1d(0.0, 0.5), 10000, 13);
  AffineField drift(-Matrix::Identity(1, 1), Vector::Zero(1), 10.0);
  const auto grid = TimeGrid::uniform(10.0, 21);
  const auto traj = integrate_sde(drift, [](double) { return 0.5; }, e0, grid, 20, 17);
  const auto& last = traj.at(20);
  const double mean = last.points.col(0).mean();
  const double var = (last.points.col(0).array() - mean).square().sum() / (last.size() - 1.0);
  CHECK(std::abs(var - 0.5) < 3.0 * 0.5 * std::sqrt(2.0 / 10000.0));
}

TEST_CASE("mass is conserved exactly") {
  const auto e0 = sample(GaussianMixture::two_mode1d(2.0, 1.0), 512, 23);
  AffineField f(Matrix::Constant(1, 1, 0.3), Vector::Constant(1, -0.2), 1.0);
  const auto traj = integrate_ode(f, e0, TimeGrid::uniform(1.0, 8), 3);
  for (Index i = 0; i < traj.n_times(); ++i) {
    CHECK(traj.at(i).weights == e0.weights);
    CHECK(traj.at(i).weights.sum() == 1.0);
  }
}

TEST_CASE("second moment identity for affine flows") {
  // d/dt E|x|^2 = 2 E[x . v]
  const auto e0 = sample(GaussianMixture::gaussian1d(0.5, 1.0), 100000, 29);
  AffineField f(Matrix::Constant(1, 1, -0.7), Vector::Constant(1, 0.4), 1.0);
  const auto grid = TimeGrid::uniform(1.0, 101);
  const auto traj = integrate_ode(f, e0, grid, 2);
  const Index mid = 50;
  const auto& em = traj.at(mid);
  const double m2_prev = traj.at(mid - 1).points.col(0).array().square().mean();
  const double m2_next = traj.at(mid + 1).points.col(0).array().square().mean();
  const double fd = (m2_next - m2_prev) / (grid[mid + 1] - grid[mid - 1]);
  double mean_xv = 0.0;
  for (Index i = 0; i < em.size(); ++i)
    mean_xv += em.points(i, 0) * f.eval(em.points.row(i).transpose(), em.time)(0);
  mean_xv = 2.0 * mean_xv / static_cast<double>(em.size());
  CHECK(std::abs(fd - mean_xv) < 1e-2 * std::max(1.0, std::abs(mean_xv)));
}

TEST_CASE("current velocity composites") {
  // Gibbs-stationary drift b = eps * score has zero current velocity
  const double eps = 0.7;
  auto mix = GaussianMixture::gaussian1d(0.0, 1.0);
  auto score = std::make_shared<ScoreField>(MixturePath::static_path(mix, 1.0));
  auto drift = std::make_shared<TimeScaledField>([eps](double) { return eps; }, score);
  auto v = current_velocity(drift, [eps](double) { return eps; }, score);
  Rng rng(31);
  for (int i = 0; i < 10; ++i) {
    Vector x(1);
    x << rng.uniform(-3.0, 3.0);
    CHECK(std::abs(v->eval(x, 0.4)(0)) < 1e-14);
  }

  // eps = 0 turns the current velocity into the drift itself
  auto b = std::make_shared<AffineField>(Matrix::Constant(1, 1, -1.0), Vector::Zero(1), 1.0);
  auto v0 = current_velocity(b, [](double) { return 0.0; }, score);
  Vector x(1);
  x << 1.3;
  CHECK(v0->eval(x, 0.2)(0) == b->eval(x, 0.2)(0));

  // pure heat flow: current velocity is (eps / sigma_t^2) x
  auto heat_score =
      std::make_shared<ScoreField>(MixturePath::heat_flow(GaussianMixture::gaussian1d(0.0, 1.0), eps, 1.0));
  auto zero = std::make_shared<ZeroField>(1, 1.0);
  auto vh = current_velocity(zero, [eps](double) { return eps; }, heat_score);
  const double t = 0.6;
  const double sigma2 = 1.0 + 2.0 * eps * t;
  x << -1.1;
  CHECK(vh->eval(x, t)(0) == doctest::Approx(eps * x(0) / sigma2).epsilon(1e-12));
}

TEST_CASE("fm risk quadrature") {
  const auto e0 = sample(GaussianMixture::gaussian1d(0.0, 1.0), 256, 37);
  const auto grid = TimeGrid::uniform(2.0, 9);
  const auto traj = integrate_ode(ZeroField(1, 2.0), e0, grid, 1);

  ZeroField z(1, 2.0);
  CHECK(fm_risk(z, z, traj) == 0.0);

  AffineField c(Matrix::Zero(1, 1), Vector::Constant(1, 3.0), 2.0);
  // constant integrand: 0.5 * 9 * T
  CHECK(fm_risk(c, z, traj) == doctest::Approx(0.5 * 9.0 * 2.0).epsilon(1e-12));
}

TEST_CASE("non-finite states are reported with particle and time") {
  Matrix pts(2, 1);
  pts << 1.0, 2.0;
  const auto e0 = ParticleEnsemble::from_points(pts);
  // explosive field produces overflow quickly
  AffineField boom(Matrix::Constant(1, 1, 1e200), Vector::Zero(1), 1.0);
  CHECK_THROWS_AS(integrate_ode(boom, e0, TimeGrid::uniform(1.0, 3), 1), NumericalError);
}

TEST_CASE("trajectory export round trips") {
  const auto e0 = sample(GaussianMixture::gaussian1d(0.0, 1.0), 32, 41);
  const auto traj = integrate_ode(ZeroField(1, 1.0), e0, TimeGrid::uniform(1.0, 3), 1);
  const auto dir = std::filesystem::temp_directory_path() / "ecfm_traj_test";
  std::filesystem::remove_all(dir);
  traj.export_dir(dir);
  CHECK(std::filesystem::exists(dir / "ens_t000.csv"));
  CHECK(std::filesystem::exists(dir / "ens_manifest.json"));
  const auto back = ParticleEnsemble::from_csv(read_file(dir / "ens_t002.csv"));
  CHECK(back.points == traj.at(2).points);
  std::filesystem::remove_all(dir);
}
