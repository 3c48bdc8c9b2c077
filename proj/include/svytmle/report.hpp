#pragma once

#include <string>
#include <vector>

#include "svytmle/stats.hpp"

namespace svytmle {

// Estimation output on the rescaled-outcome scale; reporting layers multiply
// psi / CI endpoints back by the original outcome range.
struct TmleReport {
  double psi_star = 0.0;
  double sigma_n = 0.0;        // substitution variance estimate
  double gamma_n = 0.0;        // 0 for the binary parameter
  double score_residual = 0.0; // HT mean of D(P*) at exit
  double ci_lo = 0.0, ci_hi = 0.0;
  double alpha = 0.05;
  Eigen::Index n = 0, big_n = 0;
  int iterations = 0;
  std::vector<double> score_trace;
  double zeta2_initial = 0.0;  // continuous case bookkeeping
  double zeta2_star = 0.0;
  bool converged = true;
  std::vector<std::string> warnings;
  // D(P*) evaluated at the sampled units, aligned with the sample order
  // (design optimization regresses these squared on V).
  Vector influence_values;
};

inline void finish_interval(TmleReport& r) {
  const double xi = normal_quantile(1.0 - r.alpha / 2.0);
  const double denom = std::fabs(1.0 - r.gamma_n) * std::sqrt(static_cast<double>(r.n));
  const double half = xi * std::sqrt(std::max(r.sigma_n, 0.0)) / denom;
  r.ci_lo = r.psi_star - half;
  r.ci_hi = r.psi_star + half;
}

}  // namespace svytmle
