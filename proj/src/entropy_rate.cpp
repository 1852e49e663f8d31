#include "ecfm/entropy_rate.hpp"

#include "ecfm/io.hpp"
#include "ecfm/rng.hpp"

#include <cmath>

namespace ecfm {

void EntropyRateSeries::validate() const {
  if (static_cast<Index>(estimates.size()) != grid.size())
    throw ConfigError("EntropyRateSeries: one estimate per grid time required");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("EntropyRateSeries: alpha in (0,1)");
  for (const auto& e : estimates) e.validate();
}

std::string EntropyRateSeries::to_csv() const {
  CsvWriter csv({"t", "value", "std_error", "lcb", "method"});
  const auto bounds = lcb(*this, alpha);
  for (Index i = 0; i < size(); ++i) {
    const auto& e = estimates[static_cast<std::size_t>(i)];
    csv.add_row_mixed({format_double(grid[i]), format_double(e.value),
                       format_double(e.std_error), format_double(bounds[static_cast<std::size_t>(i)]),
                       e.method});
  }
  return csv.str();
}

EntropyRateEstimate entropy_rate_div(const Field& v, const ParticleEnsemble& ens,
                                     const std::optional<HutchinsonMode>& hutchinson) {
  ens.validate();
  if (!ens.equal_weighted()) throw ConfigError("entropy_rate_div: equal weights required");
  const Index n = ens.size();
  Vector vals(n);
  if (!hutchinson) {
    vals = v.divergence_many(ens.points, ens.time);
  } else {
    if (hutchinson->probes < 1) throw ConfigError("entropy_rate_div: probes must be >= 1");
    Rng base(hutchinson->seed);
    parallel_for(n, [&](Index lo, Index hi) {
      for (Index i = lo; i < hi; ++i) {
        Rng r = base.derive(static_cast<std::uint64_t>(i));
        const auto est = divergence_hutchinson(v, ens.points.row(i).transpose(), ens.time,
                                               hutchinson->probes, r.next_u64());
        vals(i) = est.estimate;
      }
    });
  }
  const double mean = vals.mean();
  const double var = (vals.array() - mean).square().sum() / std::max<Index>(n - 1, 1);
  EntropyRateEstimate est;
  est.value = mean;
  // per-particle Hutchinson noise is already inside the sample variance
  est.std_error = std::sqrt(var / static_cast<double>(n));
  est.probes = hutchinson ? hutchinson->probes : 0;
  est.method = hutchinson ? "div-hutchinson" : "div-exact";
  est.validate();
  return est;
}

EntropyRateEstimate entropy_rate_fp(const Field& drift, double eps, const GaussianMixture& law,
                                    const ParticleEnsemble& ens) {
  ens.validate();
  if (eps < 0.0) throw ConfigError("entropy_rate_fp: diffusivity must be nonnegative");
  if (!ens.equal_weighted()) throw ConfigError("entropy_rate_fp: equal weights required");
  const Index n = ens.size();
  Vector vals(n);
  parallel_for(n, [&](Index lo, Index hi) {
    for (Index i = lo; i < hi; ++i) {
      const Vector x = ens.points.row(i).transpose();
      double term = drift.divergence(x, ens.time);
      if (eps > 0.0) term += eps * law.score(x).squaredNorm();
      vals(i) = term;
    }
  });
  const double mean = vals.mean();
  const double var = (vals.array() - mean).square().sum() / std::max<Index>(n - 1, 1);
  EntropyRateEstimate est;
  est.value = mean;
  est.std_error = std::sqrt(var / static_cast<double>(n));
  est.method = "fp-form";
  est.validate();
  return est;
}

namespace {

struct EntropyPoint {
  double value;
  double se;
};

std::vector<EntropyPoint> knn_entropies(const TrajectoryRecord& traj, int k) {
  std::vector<EntropyPoint> h(static_cast<std::size_t>(traj.n_times()));
  KnnEntropyOptions opts;
  opts.k = k;
  for (Index i = 0; i < traj.n_times(); ++i) {
    const auto est = differential_entropy(traj.at(i), opts);
    h[static_cast<std::size_t>(i)] = {est.value, est.std_error};
  }
  return h;
}

}  // namespace

EntropyRateSeries entropy_rate_fd(const TrajectoryRecord& traj, int k, double alpha) {
  traj.validate();
  const auto h = knn_entropies(traj, k);
  const Index n = traj.n_times();
  EntropyRateSeries series{traj.grid, {}, alpha};
  series.estimates.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Index lo = std::max<Index>(i - 1, 0);
    const Index hi = std::min<Index>(i + 1, n - 1);
    const double dt = traj.grid[hi] - traj.grid[lo];
    auto& e = series.estimates[static_cast<std::size_t>(i)];
    e.time_index = i;
    e.value = (h[static_cast<std::size_t>(hi)].value - h[static_cast<std::size_t>(lo)].value) / dt;
    e.std_error = std::hypot(h[static_cast<std::size_t>(hi)].se, h[static_cast<std::size_t>(lo)].se) / dt;
    e.method = "finite-difference";
  }
  series.validate();
  return series;
}

EntropyRateSeries entropy_rate_fd_intervals(const TrajectoryRecord& traj, int k, double alpha) {
  traj.validate();
  const auto h = knn_entropies(traj, k);
  const Index n = traj.n_times();
  EntropyRateSeries series{traj.grid, {}, alpha};
  series.estimates.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    // rate over [t_i, t_{i+1}] reported at the left endpoint; the final time
    // repeats the last interval so the series covers the whole grid
    const Index j0 = (i < n - 1) ? i : n - 2;
    const Index j1 = j0 + 1;
    const double dt = traj.grid[j1] - traj.grid[j0];
    auto& e = series.estimates[static_cast<std::size_t>(i)];
    e.time_index = i;
    e.value = (h[static_cast<std::size_t>(j1)].value - h[static_cast<std::size_t>(j0)].value) / dt;
    e.std_error =
        std::hypot(h[static_cast<std::size_t>(j1)].se, h[static_cast<std::size_t>(j0)].se) / dt;
    e.method = "finite-difference";
  }
  series.validate();
  return series;
}

EntropyRateSeries rate_series(const TimeGrid& grid,
                              const std::function<EntropyRateEstimate(Index)>& estimator,
                              double alpha) {
  EntropyRateSeries series{grid, {}, alpha};
  series.estimates.resize(static_cast<std::size_t>(grid.size()));
  for (Index i = 0; i < grid.size(); ++i) {
    auto e = estimator(i);
    e.time_index = i;
    series.estimates[static_cast<std::size_t>(i)] = std::move(e);
  }
  series.validate();
  return series;
}

double lcb_radius_factor(Index n_times, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("lcb: alpha in (0,1)");
  return std::sqrt(2.0 * std::log(2.0 * static_cast<double>(n_times) / alpha));
}

std::vector<double> lcb(const EntropyRateSeries& series, double alpha) {
  const double factor = lcb_radius_factor(series.size(), alpha);
  std::vector<double> out(static_cast<std::size_t>(series.size()));
  for (Index i = 0; i < series.size(); ++i) {
    const auto& e = series.estimates[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)] = e.value - e.std_error * factor;
  }
  return out;
}

LambdaEff lambda_eff(const EntropyRateSeries& series, double alpha) {
  if (series.size() == 0) throw ConfigError("lambda_eff: empty series");
  const auto bounds = lcb(series, alpha);
  double lmax = 0.0, llcb = 0.0;
  for (Index i = 0; i < series.size(); ++i) {
    lmax = std::max(lmax, -series.estimates[static_cast<std::size_t>(i)].value);
    llcb = std::max(llcb, -bounds[static_cast<std::size_t>(i)]);
  }
  return {std::max(lmax, 0.0), std::max(llcb, 0.0)};
}

}  // namespace ecfm
