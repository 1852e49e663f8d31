#ifndef ECFM_COLLAPSE_HPP
#define ECFM_COLLAPSE_HPP

#include "ecfm/dynamics.hpp"
#include "ecfm/entropy_rate.hpp"
#include "ecfm/fields.hpp"
#include "ecfm/measures.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace ecfm {

// Collapse-then-redisperse map family on the line:
//   Phi_t(x) = off(t) sgn(x) + s(t) x
// where s contracts from 1 to the plateau scale eps and returns, and off ramps
// to delta across mollified junctions. Phi_0 = Phi_T = identity.
struct CollapseParams {
  double eps = 0.01;    // plateau contraction scale
  double delta = 1e-4;  // plateau offset
  double tau = 0.05;    // transition window
  double a = 4.0;       // mode separation
  double sigma = 1.0;   // component std
  double horizon = 1.0;
  double mollifier_fraction = 0.01;  // junction half-width as a fraction of tau

  void validate() const;
  // diverging entropy-drop rate |log eps| / tau
  double rate_coupling() const { return std::abs(std::log(eps)) / tau; }
  // time where the linear squeeze meets the plateau scale
  double crossing_time() const { return tau * (1.0 - eps); }
  double junction_halfwidth() const { return mollifier_fraction * tau; }
  GaussianMixture endpoints() const { return GaussianMixture::two_mode1d(a, sigma); }
};

// Scale and offset profiles with their time derivatives; C1 in t.
struct CollapseProfile {
  double scale;
  double offset;
  double dscale;
  double doffset;
};

CollapseProfile collapse_profile(const CollapseParams& params, double t);

double collapse_map(const CollapseParams& params, double t, double x);

// Eulerian velocity of the family; y must be within the range of Phi_t.
double collapse_velocity(const CollapseParams& params, double t, double y);

// The family as a Field, so the standard diagnostics apply unchanged.
class CollapseField final : public Field {
public:
  explicit CollapseField(CollapseParams params) : params_(params) { params_.validate(); }
  Index dim() const override { return 1; }
  double horizon() const override { return params_.horizon; }
  Vector eval(const RefConstVec& x, double t) const override;
  Matrix jacobian(const RefConstVec&, double t) const override;
  Matrix eval_many(const RefConstMat& x_rows, double t) const override;
  Vector divergence_many(const RefConstMat& x_rows, double t) const override;
  const CollapseParams& params() const { return params_; }

private:
  CollapseParams params_;
};

struct CollapseDiagnostics {
  CollapseParams params;
  TimeGrid fine_grid;
  // per fine-grid time
  std::vector<double> entropy;
  std::vector<double> entropy_se;
  std::vector<double> rate;       // forward interval-average
  std::vector<double> mass_plus;  // half-line masses
  std::vector<double> mass_minus;
  std::vector<double> core_plus;  // core masses
  std::vector<double> core_minus;

  double lambda_eff_max = 0.0;    // from phase-window average rates
  double lambda_eff_lcb = 0.0;
  double fm_risk_excess = 0.0;    // against the near-stationary (zero) teacher
  double min_core_mass = 1.0;     // over plateau times
  double endpoint_w2 = 0.0;
  double endpoint_entropy_gap = 0.0;

  std::string to_csv() const;     // t,entropy,rate,M_plus,M_minus,m_plus,m_minus
  nlohmann::json summary() const;
};

// E3-style parameter ladder: eps_n = 0.04 * 2^-n, tau_n = 0.1 * 2^-n.
std::vector<CollapseParams> collapse_sequence(Index n_terms, double a = 4.0, double sigma = 1.0,
                                              double horizon = 1.0);

CollapseDiagnostics run_collapse_term(const CollapseParams& params, Index batch,
                                      std::uint64_t seed);

std::vector<CollapseDiagnostics> run_collapse_sequence(const std::vector<CollapseParams>& terms,
                                                       Index batch, std::uint64_t seed);

}  // namespace ecfm

#endif  // ECFM_COLLAPSE_HPP
