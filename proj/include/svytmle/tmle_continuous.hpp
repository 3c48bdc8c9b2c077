#pragma once

#include <optional>

#include "svytmle/glm.hpp"
#include "svytmle/report.hpp"
#include "svytmle/rng.hpp"

namespace svytmle {

// Discrete measure view used by the ratio evaluation: weighted atoms carrying
// the exposure and the conditional-mean values at the atom and at a = 0.
struct WeightedAtoms {
  Vector weight;
  Vector a;
  Vector q_at_a;
  Vector q_at_0;
};

// Psi = sum w a (q_a - q_0) / sum w a^2; throws when the exposure second
// moment is not positive.
double psi_c_ratio(const WeightedAtoms& atoms);

// Fitted nuisance bundle for the continuous-exposure parameter (functional
// models, as used at entry to the targeting loop).
struct ContinuousNuisance {
  GlmModel q;
  MuModel mu;
  GlmModel g0;     // g(0|w)
  GlmModel sigma2; // conditional variance of Y given (A,W), [0,1]-valued
  double zeta2 = 1.0;
};

// D^c(P)(o) = [a(Q(a,w) - Q(0,w) - a psi) + (y - Q(a,w))(a - mu(w) 1{a=0}/g0(w))] / zeta2.
double influence_c(const ContinuousNuisance& nu, double psi, const Observation& o);

struct TiltResult {
  double t = 0.0;
  double loglik_gain = 0.0;  // sum w log(1 + t d) at the optimum (>= 0)
  bool interior = true;      // false when the bound was binding
};

// Maximizes sum_i w_i log(1 + t d_i) over |t| <= bound (strictly concave).
TiltResult optimal_tilt(const Eigen::Ref<const Vector>& d,
                        const Eigen::Ref<const Vector>& weights, double bound);

struct ContinuousConfig {
  double alpha = 0.05;
  int max_iter = 7;
  double mic_tol = 0.01;   // stop when |score| <= mic_tol * sqrt(Sigma_n / n)
  double psi_tol = 0.05;   // stop when |psi step| <= psi_tol * CI half-width
  NuisanceOptions nuisance{.q_map = {.include_a = true}};
  Eigen::Index mixture_cap = 1024;  // support cap for conditional-moment sums
  bool mc_mode = false;             // evaluate psi* by Monte Carlo (eq. replay)
  int mc_draws = 20000;
  std::uint64_t mc_seed = 1;
};

TmleReport estimate_continuous(const Dataset& ds, const WeightedSample& s,
                               const ContinuousConfig& cfg = {});

}  // namespace svytmle
