#include "svytmle/simstudy.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace svytmle {

namespace {

// per-stratum context means and Cholesky factors of the covariances
constexpr double kMeanW[3][2] = {{0.0, 0.0}, {1.0, 0.5}, {0.5, 1.0}};
// chol([[1,-0.2],[-0.2,1]]), chol([[0.5,0.1],[0.1,0.5]]), chol(I)
const double kCholW[3][3] = {
    {1.0, -0.2, 0.9797958971132712},
    {0.7071067811865476, 0.1414213562373095, 0.6928203230275509},
    {1.0, 0.0, 1.0}};

// fixed 0.001/0.999 outcome quantiles (10^7-draw calibration)
constexpr double kYLo[3] = {-6.68, -26.88, -125.00};
constexpr double kYHi[3] = {11.39, 31.81, 126.74};

constexpr double kSd[3][3] = {{1.5, 1.0, 0.5}, {1.0, 5.0, 10.0}, {50.0, 10.0, 1.0}};

}  // namespace

DgpSpec make_dgp(int j) {
  if (j < 1 || j > 3) throw std::invalid_argument("make_dgp: j must be 1, 2 or 3");
  DgpSpec spec;
  spec.j = j;
  for (int v = 0; v < 3; ++v) spec.sd[v] = kSd[j - 1][v];
  spec.y_lo = kYLo[j - 1];
  spec.y_hi = kYHi[j - 1];
  return spec;
}

double dgp_conditional_mean(double a, double w1, double w2) {
  return a * (w1 + w2) / 6.0 + w1 + w2 / 4.0 + std::exp((w1 + w2) / 10.0);
}

RawObservation draw_observation(const DgpSpec& spec, Rng& rng) {
  RawObservation o;
  const double u = rng.uniform();
  const int v = u < 1.0 / 6.0 ? 0 : (u < 0.5 ? 1 : 2);
  o.v = static_cast<double>(v + 1);

  const double z1 = rng.normal();
  const double z2 = rng.normal();
  o.w1 = kMeanW[v][0] + kCholW[v][0] * z1;
  o.w2 = kMeanW[v][1] + kCholW[v][1] * z1 + kCholW[v][2] * z2;

  const double p_zero = (o.w1 >= 1.1 && o.w2 >= 0.8) ? 0.8 : 0.1;
  if (rng.uniform() < p_zero) {
    o.a = 0.0;
  } else {
    // noncentral chi-square(1, lambda) as (Z + sqrt(lambda))^2
    const double lambda =
        std::sqrt((o.w1 - 1.1) * (o.w1 - 1.1) + (o.w2 - 0.8) * (o.w2 - 0.8));
    const double z = rng.normal() + std::sqrt(lambda);
    o.a = 1.0 + z * z;
  }
  o.y = dgp_conditional_mean(o.a, o.w1, o.w2) + spec.sd[v] * rng.normal();
  return o;
}

GeneratedData generate_dataset(const DgpSpec& spec, Eigen::Index n, Rng& rng) {
  Matrix w(n, 2);
  Vector a(n), y(n), v(n);
  Eigen::Index clipped = 0;
  const double range = spec.y_hi - spec.y_lo;
  for (Eigen::Index i = 0; i < n; ++i) {
    const RawObservation o = draw_observation(spec, rng);
    w(i, 0) = o.w1;
    w(i, 1) = o.w2;
    a[i] = o.a;
    v[i] = o.v;
    double ys = (o.y - spec.y_lo) / range;
    if (ys < 0.0 || ys > 1.0) {
      ++clipped;
      ys = std::clamp(ys, 0.0, 1.0);
    }
    y[i] = ys;
  }
  GeneratedData out{Dataset::from_scaled_columns(std::move(w), std::move(a), std::move(y),
                                                 std::move(v), ExposureKind::continuous,
                                                 spec.y_lo, spec.y_hi),
                    static_cast<double>(clipped) / static_cast<double>(n)};
  return out;
}

double true_psi_c() { return 0.1204; }

double true_psi_c_mc(const DgpSpec& spec, std::int64_t draws, Rng& rng) {
  KahanSum num, den;
  for (std::int64_t i = 0; i < draws; ++i) {
    const RawObservation o = draw_observation(spec, rng);
    num.add(o.a * o.a * (o.w1 + o.w2) / 6.0);
    den.add(o.a * o.a);
  }
  return num.value() / den.value();
}

double normality_diagnostic(const Eigen::Ref<const Vector>& estimates) {
  if (estimates.size() < 20)
    throw std::invalid_argument("normality_diagnostic: needs at least 20 estimates");
  return jarque_bera(estimates).p_value;
}

ContinuousConfig study_estimator_defaults() {
  ContinuousConfig cfg;
  cfg.nuisance.q_map = FeatureMap{.include_a = true, .w_quadratic = true, .v_dummies = true};
  cfg.nuisance.w_map = FeatureMap{.w_quadratic = true, .v_dummies = true};
  cfg.nuisance.gls_pass = true;
  return cfg;
}

PilotConfig study_pilot_defaults() {
  PilotConfig cfg;
  cfg.estimator = ExposureKind::continuous;
  cfg.continuous = study_estimator_defaults();
  cfg.continuous.nuisance.g_min = 0.05;  // tempers 1/g0 in the f2 regression
  return cfg;
}

namespace {

struct ReplicateResult {
  // indexed by [h_mode][n]; NaN marks a failed estimate
  std::vector<std::vector<double>> psi, half, ev;
};

std::uint64_t stream_id(int j, int b) {
  return static_cast<std::uint64_t>(j) * 1000000u + static_cast<std::uint64_t>(b);
}

}  // namespace

StudyMetrics run_study(const StudyConfig& cfg) {
  for (const auto n : cfg.n_grid)
    if (!cfg.allow_large_fraction &&
        static_cast<double>(n) / static_cast<double>(cfg.big_n) > 0.05)
      throw std::invalid_argument(
          "run_study: n/N exceeds 0.05 (pass allow_large_fraction to override)");

  StudyMetrics metrics;
  metrics.seed = cfg.seed;
  const double psi0 = true_psi_c();
  const auto nan = std::numeric_limits<double>::quiet_NaN();

  for (const int j : cfg.dgps) {
    const DgpSpec spec = make_dgp(j);
    const double yrange = spec.y_hi - spec.y_lo;
    std::vector<ReplicateResult> results(static_cast<std::size_t>(cfg.replicates));

    std::atomic<int> next{0};
    const auto worker = [&]() {
      for (;;) {
        const int b = next.fetch_add(1);
        if (b >= cfg.replicates) return;
        ReplicateResult& rr = results[static_cast<std::size_t>(b)];
        rr.psi.assign(cfg.h_modes.size(),
                      std::vector<double>(cfg.n_grid.size(), nan));
        rr.half = rr.psi;
        rr.ev = rr.psi;

        Rng base(cfg.seed, stream_id(j, b));
        Rng gen = base.derive(0);
        const GeneratedData data = generate_dataset(spec, cfg.big_n, gen);

        for (std::size_t mi = 0; mi < cfg.h_modes.size(); ++mi) {
          SamplingFunction h = SamplingFunction::uniform();
          std::vector<Eigen::Index> excluded;
          if (cfg.h_modes[mi] == HMode::pilot_optimal) {
            try {
              Rng prng = base.derive(1);
              PilotResult pr = run_pilot(data.dataset, cfg.pilot_n0, prng, cfg.pilot);
              h = pr.h_opt;
              excluded = std::move(pr.pilot_indices);
              std::sort(excluded.begin(), excluded.end());
            } catch (const std::exception&) {
              continue;  // whole arm fails for this replicate
            }
          }
          for (std::size_t ni = 0; ni < cfg.n_grid.size(); ++ni) {
            try {
              Rng drng = base.derive(2 + static_cast<std::uint64_t>(mi) * 64 + ni);
              const InclusionPlan plan = make_plan(data.dataset, h, cfg.n_grid[ni]);
              auto [sample, used] = draw_fixed_size(plan, drng);
              (void)used;
              if (!excluded.empty()) {
                // pilot rows never re-enter the main draw
                std::vector<Eigen::Index> keep;
                keep.reserve(sample.idx.size());
                std::vector<Eigen::Index> keep_pos;
                for (std::size_t k = 0; k < sample.idx.size(); ++k)
                  if (!std::binary_search(excluded.begin(), excluded.end(),
                                          sample.idx[k])) {
                    keep.push_back(sample.idx[k]);
                    keep_pos.push_back(static_cast<Eigen::Index>(k));
                  }
                WeightedSample trimmed;
                trimmed.base_n = sample.base_n;
                trimmed.idx = std::move(keep);
                trimmed.p.resize(static_cast<Eigen::Index>(keep_pos.size()));
                trimmed.h.resize(static_cast<Eigen::Index>(keep_pos.size()));
                for (Eigen::Index k = 0; k < trimmed.p.size(); ++k) {
                  trimmed.p[k] = sample.p[keep_pos[static_cast<std::size_t>(k)]];
                  trimmed.h[k] = sample.h[keep_pos[static_cast<std::size_t>(k)]];
                }
                sample = std::move(trimmed);
              }
              TmleReport rep = estimate_continuous(data.dataset, sample, cfg.estimator);
              rr.psi[mi][ni] = rep.psi_star * yrange;
              rr.half[mi][ni] = 0.5 * (rep.ci_hi - rep.ci_lo) * yrange;
              rr.ev[mi][ni] = rep.sigma_n * yrange * yrange;
            } catch (const std::exception&) {
              // failure recorded as NaN
            }
          }
        }
      }
    };

    if (cfg.threads > 1) {
      std::vector<std::thread> pool;
      for (int t = 0; t < cfg.threads; ++t) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
    } else {
      worker();
    }

    // deterministic reduction in replicate order
    for (std::size_t mi = 0; mi < cfg.h_modes.size(); ++mi)
      for (std::size_t ni = 0; ni < cfg.n_grid.size(); ++ni) {
        std::vector<double> psis, halves, evs;
        int failures = 0;
        for (int b = 0; b < cfg.replicates; ++b) {
          const auto& rr = results[static_cast<std::size_t>(b)];
          const double p = rr.psi[mi][ni];
          if (std::isnan(p)) {
            ++failures;
            continue;
          }
          psis.push_back(p);
          halves.push_back(rr.half[mi][ni]);
          evs.push_back(rr.ev[mi][ni]);
        }
        StudyRow row;
        row.dgp = j;
        row.h_mode = cfg.h_modes[mi];
        row.n = cfg.n_grid[ni];
        row.failures = failures;
        row.replicates = static_cast<int>(psis.size());
        if (!psis.empty()) {
          const Eigen::Map<const Vector> pv(psis.data(),
                                            static_cast<Eigen::Index>(psis.size()));
          double mean = pv.mean();
          double var_pop = (pv.array() - mean).square().mean();
          row.bias = (pv.array() - psi0).abs().mean();
          row.n_variance = static_cast<double>(row.n) * var_pop;
          row.normality_p =
              psis.size() >= 20 ? jarque_bera(pv).p_value : std::numeric_limits<double>::quiet_NaN();
          int covered = 0;
          KahanSum ev_acc;
          for (std::size_t k = 0; k < psis.size(); ++k) {
            if (psis[k] - halves[k] <= psi0 && psi0 <= psis[k] + halves[k]) ++covered;
            ev_acc.add(evs[k]);
          }
          row.coverage = static_cast<double>(covered) / static_cast<double>(psis.size());
          row.mean_ev = ev_acc.value() / static_cast<double>(psis.size());
        }
        metrics.rows.push_back(row);
      }
  }

  for (const auto& row : metrics.rows) {
    const double rate = static_cast<double>(row.failures) /
                        static_cast<double>(row.failures + row.replicates);
    if (rate > cfg.max_failure_rate)
      throw std::runtime_error("run_study: failure rate " + std::to_string(rate) +
                               " exceeds " + std::to_string(cfg.max_failure_rate));
  }
  return metrics;
}

}  // namespace svytmle
