#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "svytmle/data.hpp"
#include "svytmle/rng.hpp"

namespace svytmle {

// Thrown when the conditioned-Poisson draw fails to hit size n within the
// attempt budget; callers fall back to pareto_sample.
struct RejectiveInfeasible : std::runtime_error {
  explicit RejectiveInfeasible(int attempts)
      : std::runtime_error("rejective-infeasible after " + std::to_string(attempts) +
                           " attempts") {}
};

// p_i = clip(n h(V_i) / N, clip_eps, 1 - clip_eps); clip engages only when
// the raw value leaves (0,1). clip_eps = 0 disables clipping (test fixtures
// with p_i = 1).
InclusionPlan make_plan(const Dataset& ds, const SamplingFunction& h, Eigen::Index n,
                        double clip_eps = 1e-6);

// Plan from explicit probabilities (oracles and tests).
InclusionPlan plan_from_probabilities(Vector p, Eigen::Index n);

WeightedSample poisson_sample(const InclusionPlan& plan, Rng& rng);

// Poisson design conditioned on size n, realized by acceptance-rejection.
WeightedSample rejective_sample(const InclusionPlan& plan, Rng& rng,
                                int max_attempts = 1000);

// Order sampling: rank Q_i = [U_i/(1-U_i)] [(1-p_i)/p_i], keep the n smallest.
WeightedSample pareto_sample(const InclusionPlan& plan, Rng& rng);

enum class DesignUsed { rejective, pareto };

// Rejective with automatic Pareto fallback (the fallback is recorded so the
// CLI can log it).
std::pair<WeightedSample, DesignUsed> draw_fixed_size(const InclusionPlan& plan,
                                                      Rng& rng,
                                                      int max_attempts = 1000);

// Exhaustive rejective design on small instances: every size-n subset with
// probability proportional to prod_{i in s} p_i prod_{j not in s} (1 - p_j).
struct ExactDesign {
  std::vector<std::vector<Eigen::Index>> subsets;
  Vector probabilities;  // sums to 1
  Vector pi;             // marginal inclusion probabilities, sum = n
};

ExactDesign exact_rejective_design(const InclusionPlan& plan);

// d_N = sum p_i (1 - p_i); the Poisson-to-rejective coupling degrades when
// this is small. Emits a warning on std::clog below 25.
double dN_diagnostic(const InclusionPlan& plan);

}  // namespace svytmle
