#include "svytmle/tmle_binary.hpp"

#include <algorithm>
#include <cmath>

namespace svytmle {

double influence_b(const BinaryNuisance& nu, double psi, const Observation& o) {
  const double q1 = nu.q_star(1.0, o.w, o.v);
  const double q0 = nu.q_star(0.0, o.w, o.v);
  const double qa = o.a == 1.0 ? q1 : q0;
  const double d1 = q1 - q0 - psi;
  const double d2 = (o.y - qa) * (2.0 * o.a - 1.0) / nu.g_at(o.a, o.w, o.v);
  return d1 + d2;
}

TmleReport estimate_binary(const Dataset& ds, const WeightedSample& s,
                           const BinaryConfig& cfg) {
  if (ds.exposure_kind() != ExposureKind::binary)
    throw std::invalid_argument("estimate_binary: dataset is not binary-exposure");
  const Eigen::Index m = s.size();
  if (m == 0) throw std::invalid_argument("estimate_binary: empty sample");

  TmleReport rep;
  rep.alpha = cfg.alpha;
  rep.n = s.size();
  rep.big_n = s.base_n;
  rep.gamma_n = 0.0;

  BinaryNuisance nu;
  NuisanceOptions no = cfg.nuisance;
  if (no.q_map.v_dummies) no.q_map.strata = ds.stratum_domain();
  if (no.w_map.v_dummies) no.w_map.strata = ds.stratum_domain();

  // per-unit data
  Vector y(m), a(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    y[k] = ds.y()[s.idx[k]];
    a[k] = ds.a()[s.idx[k]];
  }
  const Vector b = s.weights();

  Vector g1(m);
  if (cfg.known_g1) {
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto i = s.idx[k];
      const double raw = (*cfg.known_g1)(ds.w().row(i).transpose(), ds.v()[i]);
      g1[k] = std::clamp(raw, no.g_min, 1.0 - no.g_min);
    }
    // constant-free placeholder so q_star sees the same truncation
    nu.g = GlmModel{no.w_map, Vector::Zero(no.w_map.dim(ds.context_dim())), no.g_min};
  } else {
    nu.g = fit_g_binary(ds, s, no);
    g1 = nu.g.predict(ds, s.idx);
  }

  nu.q = fit_q(ds, s, no);
  if (!nu.q.converged) rep.warnings.push_back("Q fit did not converge");
  Vector qa = nu.q.predict(ds, s.idx);
  Vector q1 = nu.q.predict(ds, s.idx, Vector::Ones(m));
  Vector q0 = nu.q.predict(ds, s.idx, Vector::Zero(m));

  Vector clever(m), ga(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    ga[k] = a[k] == 1.0 ? g1[k] : 1.0 - g1[k];
    clever[k] = (2.0 * a[k] - 1.0) / ga[k];
  }

  const FluctuationResult fl = fluctuate_binary(y, qa, clever, b);
  nu.t_star = fl.t_star;
  nu.fluctuation_converged = fl.converged;
  if (!fl.converged) {
    rep.warnings.push_back("fluctuation hit the t bound (possible separation)");
    rep.converged = false;
  }

  // fluctuate both counterfactual arms with their own clever covariates
  Vector q1s(m), q0s(m), qas(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    q1s[k] = clamp_unit(expit(logit(clamp_unit(q1[k])) + nu.t_star / g1[k]), 1e-12);
    q0s[k] = clamp_unit(expit(logit(clamp_unit(q0[k])) - nu.t_star / (1.0 - g1[k])), 1e-12);
    qas[k] = a[k] == 1.0 ? q1s[k] : q0s[k];
  }

  // HT-mass-normalized plug-in, so the D1 component is centered exactly
  KahanSum num, mass;
  for (Eigen::Index k = 0; k < m; ++k) {
    num.add(b[k] * (q1s[k] - q0s[k]));
    mass.add(b[k]);
  }
  rep.psi_star = num.value() / mass.value();

  // score residual and variance
  KahanSum sc, var;
  rep.influence_values.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const double d = (q1s[k] - q0s[k] - rep.psi_star) +
                     (y[k] - qas[k]) * clever[k];
    rep.influence_values[k] = d;
    sc.add(b[k] * d);
    var.add(b[k] * d * d / s.h[k]);
  }
  rep.score_residual = sc.value() / mass.value();
  rep.sigma_n = var.value();
  rep.iterations = 1;
  rep.score_trace = {rep.score_residual};
  finish_interval(rep);
  return rep;
}

}  // namespace svytmle
