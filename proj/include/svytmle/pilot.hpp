#pragma once

#include "svytmle/sampling.hpp"
#include "svytmle/tmle_binary.hpp"
#include "svytmle/tmle_continuous.hpp"

namespace svytmle {

// Output of the uniform-pilot design optimization: per-stratum f2 estimates,
// the optimal sampling function, and the pilot rows to exclude from the main
// draw.
struct PilotResult {
  std::vector<double> strata;
  Vector f2;            // f2(v) = sqrt(mean of f1^2 within stratum)
  double pi2_hat = 0.0; // estimate of P0 f2
  SamplingFunction h_opt;
  std::vector<Eigen::Index> pilot_indices;
  std::vector<double> imputed_strata;  // strata with no pilot units (pooled f2)
  TmleReport pilot_report;
};

struct PilotConfig {
  ExposureKind estimator = ExposureKind::continuous;
  double h_floor = 0.05;  // floor on h before renormalization
  int max_attempts = 1000;
  BinaryConfig binary;
  ContinuousConfig continuous;
};

// Draws a uniform rejective pilot of size n0, runs the configured TMLE,
// sets f1 = D(P*) at the pilot units, and builds h_opt = max(f2/pi2, floor)
// renormalized to full-data mean 1.
PilotResult run_pilot(const Dataset& ds, Eigen::Index n0, Rng& rng,
                      const PilotConfig& cfg = {});

// sigma_1^2(h) = sum_v P(v) f2(v)^2 / h(v).
double asymptotic_variance(const Eigen::Ref<const Vector>& f2,
                           const Eigen::Ref<const Vector>& stratum_probs,
                           const Eigen::Ref<const Vector>& h);

}  // namespace svytmle
