#pragma once

#include <functional>
#include <optional>

#include "svytmle/glm.hpp"
#include "svytmle/report.hpp"

namespace svytmle {

// Fitted nuisance state for the binary-exposure parameter. Q_star is the
// fluctuated conditional mean expit(logit Q + t_star (2a-1)/g(a|w)).
struct BinaryNuisance {
  GlmModel q;
  GlmModel g;  // g(1|w)
  double t_star = 0.0;
  bool fluctuation_converged = true;

  double g_at(double a, const Eigen::Ref<const Vector>& w, double v) const {
    const double g1 = g.predict(0.0, w, v);
    return a == 1.0 ? g1 : 1.0 - g1;
  }
  double q_star(double a, const Eigen::Ref<const Vector>& w, double v) const {
    const double q0 = q.predict(a, w, v);
    const double c = (2.0 * a - 1.0) / g_at(a, w, v);
    return clamp_unit(expit(logit(q0) + t_star * c), q.truncation);
  }
};

// D^b(P)(o) = [Q(1,w) - Q(0,w) - psi] + (y - Q(a,w)) (2a-1)/g(a|w),
// evaluated with the fluctuated Q when t_star is set.
double influence_b(const BinaryNuisance& nu, double psi, const Observation& o);

// Minimizes the HT-weighted logistic risk along the 1-D fluctuation.
// q_init and clever are per-unit values of Q(a_i, w_i) and (2a_i-1)/g_i;
// weights are the HT base weights eta_i/p_i (any positive scaling).
inline FluctuationResult fluctuate_binary(const Eigen::Ref<const Vector>& y,
                                          const Eigen::Ref<const Vector>& q_init,
                                          const Eigen::Ref<const Vector>& clever,
                                          const Eigen::Ref<const Vector>& weights,
                                          double score_tol = 1e-10,
                                          double t_bound = 50.0) {
  return logistic_fluctuation(y, q_init, clever, weights, score_tol, t_bound);
}

struct BinaryConfig {
  double alpha = 0.05;
  NuisanceOptions nuisance;
  // Test fixture: use a known exposure mechanism instead of fitting one.
  std::optional<std::function<double(const Eigen::Ref<const Vector>&, double)>>
      known_g1;
};

TmleReport estimate_binary(const Dataset& ds, const WeightedSample& s,
                           const BinaryConfig& cfg = {});

}  // namespace svytmle
