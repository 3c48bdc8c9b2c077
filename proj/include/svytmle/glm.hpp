#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>

#include "svytmle/data.hpp"

namespace svytmle {

// Feature map over (a, w): intercept + W main effects, optionally the
// exposure and its interactions with W, optionally squares/cross terms of W
// and stratum dummies (richer maps for misspecification-sensitive fits).
struct FeatureMap {
  bool include_a = false;        // a and a * (W block)
  bool w_quadratic = false;      // w_j^2 and w_j w_k
  bool v_dummies = false;        // indicator per stratum beyond the first
  std::vector<double> strata;    // stratum domain when v_dummies is set

  Eigen::Index dim(Eigen::Index w_dim) const;
  void build_row(double a, const Eigen::Ref<const Vector>& w, double v,
                 Eigen::Ref<Vector> out) const;
  Matrix build(const Dataset& ds, const std::vector<Eigen::Index>& rows) const;
  Matrix build(const Dataset& ds, const std::vector<Eigen::Index>& rows,
               const Vector& a_override) const;
};

// Fitted logistic-link model; predictions are clamped to
// [truncation, 1 - truncation].
struct GlmModel {
  FeatureMap map;
  Vector beta;
  double truncation = 1e-12;
  bool converged = true;
  bool ridged = false;

  double predict(double a, const Eigen::Ref<const Vector>& w, double v) const;
  Vector predict(const Dataset& ds, const std::vector<Eigen::Index>& rows) const;
  Vector predict(const Dataset& ds, const std::vector<Eigen::Index>& rows,
                 const Vector& a_override) const;
};

// Logistic loss -[u log v + (1-u) log(1-v)]; v clamped to [1e-12, 1-1e-12].
double logistic_loss(double u, double v);

struct GlmOptions {
  int max_iter = 100;
  double grad_tol = 1e-8;   // on ||gradient|| relative to sum of weights
  double ridge = 1e-8;      // added on rank deficiency / non-SPD Hessian
};

struct GlmFit {
  Vector beta;
  bool converged = true;
  bool ridged = false;
  double final_loss = 0.0;
};

// Newton/IRLS minimizer of sum_i w_i ell(y_i, expit(x_i beta + offset_i)),
// with step-halving; weighted loss is non-increasing across iterations.
GlmFit fit_weighted_glm(const Eigen::Ref<const Matrix>& x,
                        const Eigen::Ref<const Vector>& y,
                        const Eigen::Ref<const Vector>& w,
                        const std::optional<Vector>& offset = std::nullopt,
                        const GlmOptions& opts = {});

struct FluctuationResult {
  double t_star = 0.0;
  bool converged = true;
  double score = 0.0;  // weighted score at t_star
};

// 1-D fluctuation of a logistic conditional mean along a clever covariate:
// minimizes sum_i w_i ell(y_i, expit(logit q_i + t c_i)) over t in
// [-t_bound, t_bound]. The weighted risk is strictly convex, so a
// bracket-safeguarded Newton solve drives the score below score_tol * sum(w).
FluctuationResult logistic_fluctuation(const Eigen::Ref<const Vector>& y,
                                       const Eigen::Ref<const Vector>& q_init,
                                       const Eigen::Ref<const Vector>& clever,
                                       const Eigen::Ref<const Vector>& weights,
                                       double score_tol = 1e-10,
                                       double t_bound = 50.0);

// Nuisance fits on an HT-weighted sub-sample. g-type conditional
// probabilities are truncated to [g_min, 1 - g_min].
struct NuisanceOptions {
  FeatureMap q_map{.include_a = true};
  FeatureMap w_map{};            // for g, mu
  double g_min = 0.01;
  bool gls_pass = false;         // variance-reweighted second pass for Q
  GlmOptions glm;
};

GlmModel fit_q(const Dataset& ds, const WeightedSample& s, const NuisanceOptions& no);
// Binary exposure mechanism g(1|w).
GlmModel fit_g_binary(const Dataset& ds, const WeightedSample& s,
                      const NuisanceOptions& no);
// Continuous case: conditional mean of the exposure, fit on A affinely
// rescaled to [0,1] and mapped back on prediction.
struct MuModel {
  GlmModel core;
  double a_min = 0.0, a_max = 1.0;
  double predict(const Eigen::Ref<const Vector>& w, double v) const {
    return a_min + (a_max - a_min) * core.predict(0.0, w, v);
  }
};
MuModel fit_mu(const Dataset& ds, const WeightedSample& s, const NuisanceOptions& no);
// Continuous case: g(0|w) = P(A = 0 | W = w).
GlmModel fit_g0_continuous(const Dataset& ds, const WeightedSample& s,
                           const NuisanceOptions& no);

}  // namespace svytmle
