#pragma once

#include <string>
#include <vector>

#include "svytmle/pilot.hpp"

namespace svytmle {

// The three-stratum data-generating process of the study: V categorical with
// probabilities (1/6, 1/3, 1/2); (W1, W2) | V Gaussian; the exposure is zero
// with probability 0.8 inside the (W1 >= 1.1, W2 >= 0.8) quadrant and 0.1
// outside, otherwise 1 + a noncentral chi-square(1) draw; the outcome is
// Gaussian around A(W1+W2)/6 + W1 + W2/4 + exp((W1+W2)/10) with a
// stratum-dependent standard deviation that is the only difference between
// the three variants.
struct DgpSpec {
  int j = 1;                 // variant in {1,2,3}
  double sd[3] = {0, 0, 0};  // outcome SD per stratum
  double y_lo = 0.0, y_hi = 1.0;  // fixed outcome clipping/scaling range
};

DgpSpec make_dgp(int j);

struct RawObservation {
  double v = 0.0, w1 = 0.0, w2 = 0.0, a = 0.0, y = 0.0;  // y unscaled
};

RawObservation draw_observation(const DgpSpec& spec, Rng& rng);

// E[Y | A, W] before outcome rescaling.
double dgp_conditional_mean(double a, double w1, double w2);

struct GeneratedData {
  Dataset dataset;
  double clip_fraction = 0.0;  // outcome mass clipped into [y_lo, y_hi]
};

GeneratedData generate_dataset(const DgpSpec& spec, Eigen::Index n, Rng& rng);

// Reference value of the target parameter (shared across variants).
double true_psi_c();
// Monte Carlo recomputation from the ratio representation
// E[A^2 (W1+W2)/6] / E[A^2] (validation oracle).
double true_psi_c_mc(const DgpSpec& spec, std::int64_t draws, Rng& rng);

// Jarque-Bera omnibus p-value; requires at least 20 estimates.
double normality_diagnostic(const Eigen::Ref<const Vector>& estimates);

enum class HMode { uniform, pilot_optimal };

struct StudyConfig {
  std::vector<int> dgps = {1, 2, 3};
  Eigen::Index big_n = 200000;
  int replicates = 200;
  std::vector<Eigen::Index> n_grid = {500, 2000, 5000};
  std::vector<HMode> h_modes = {HMode::uniform, HMode::pilot_optimal};
  Eigen::Index pilot_n0 = 1000;
  std::uint64_t seed = 1;
  int threads = 1;
  bool allow_large_fraction = false;  // permit n/N > 0.05
  double max_failure_rate = 0.02;
  ContinuousConfig estimator;  // per-estimate settings
  PilotConfig pilot;           // pilot-phase settings
};

// Estimator/pilot settings used throughout the study: quadratic context
// features with stratum dummies and a variance-reweighted second pass for Q.
ContinuousConfig study_estimator_defaults();
PilotConfig study_pilot_defaults();

struct StudyRow {
  int dgp = 0;
  HMode h_mode = HMode::uniform;
  Eigen::Index n = 0;
  double bias = 0.0;        // mean |psi - psi0|  (original outcome units)
  double normality_p = 0.0; // Jarque-Bera p-value across replicates
  double coverage = 0.0;    // fraction of CIs containing psi0
  double n_variance = 0.0;  // n x empirical variance of the estimates
  double mean_ev = 0.0;     // mean of the estimated variances Sigma_n
  int failures = 0;
  int replicates = 0;
};

struct StudyMetrics {
  std::vector<StudyRow> rows;
  std::uint64_t seed = 0;
};

StudyMetrics run_study(const StudyConfig& cfg);

}  // namespace svytmle
