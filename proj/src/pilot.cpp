#include "svytmle/pilot.hpp"

#include <algorithm>
#include <cmath>

namespace svytmle {

PilotResult run_pilot(const Dataset& ds, Eigen::Index n0, Rng& rng,
                      const PilotConfig& cfg) {
  if (n0 >= ds.size())
    throw std::invalid_argument("run_pilot: n0 must be smaller than N");

  const InclusionPlan plan = make_plan(ds, SamplingFunction::uniform(), n0);
  auto [sample, design] = draw_fixed_size(plan, rng, cfg.max_attempts);
  (void)design;

  PilotResult out;
  out.pilot_indices = sample.idx;
  if (cfg.estimator == ExposureKind::binary)
    out.pilot_report = estimate_binary(ds, sample, cfg.binary);
  else
    out.pilot_report = estimate_continuous(ds, sample, cfg.continuous);

  const Vector& f1 = out.pilot_report.influence_values;
  const auto& dom = ds.stratum_domain();
  const Eigen::Index ns = static_cast<Eigen::Index>(dom.size());
  Vector sum2 = Vector::Zero(ns), cnt = Vector::Zero(ns);
  for (Eigen::Index k = 0; k < sample.size(); ++k) {
    const double v = ds.v()[sample.idx[k]];
    const auto it = std::lower_bound(dom.begin(), dom.end(), v);
    const Eigen::Index si = static_cast<Eigen::Index>(it - dom.begin());
    sum2[si] += f1[k] * f1[k];
    cnt[si] += 1.0;
  }
  const double pooled = std::sqrt(sum2.sum() / cnt.sum());
  out.strata = dom;
  out.f2.resize(ns);
  for (Eigen::Index v = 0; v < ns; ++v) {
    if (cnt[v] > 0.0) {
      out.f2[v] = std::sqrt(sum2[v] / cnt[v]);
    } else {
      out.f2[v] = pooled;
      out.imputed_strata.push_back(dom[static_cast<std::size_t>(v)]);
    }
  }

  const Vector probs = ds.stratum_frequencies();
  out.pi2_hat = probs.dot(out.f2);
  if (!(out.pi2_hat > 0.0))
    throw std::runtime_error("run_pilot: estimated P0 f2 is zero");

  Vector h = (out.f2 / out.pi2_hat).cwiseMax(cfg.h_floor);
  h /= probs.dot(h);  // full-data mean 1
  std::map<double, double> table;
  for (Eigen::Index v = 0; v < ns; ++v) table[dom[static_cast<std::size_t>(v)]] = h[v];
  out.h_opt = SamplingFunction(std::move(table), h.minCoeff());
  return out;
}

double asymptotic_variance(const Eigen::Ref<const Vector>& f2,
                           const Eigen::Ref<const Vector>& stratum_probs,
                           const Eigen::Ref<const Vector>& h) {
  if (f2.size() != stratum_probs.size() || f2.size() != h.size())
    throw std::invalid_argument("asymptotic_variance: size mismatch");
  double out = 0.0;
  for (Eigen::Index v = 0; v < f2.size(); ++v) {
    if (!(h[v] > 0.0)) throw std::invalid_argument("asymptotic_variance: h must be positive");
    out += stratum_probs[v] * f2[v] * f2[v] / h[v];
  }
  return out;
}

}  // namespace svytmle
