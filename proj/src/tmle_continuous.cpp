#include "svytmle/tmle_continuous.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace svytmle {

double psi_c_ratio(const WeightedAtoms& atoms) {
  KahanSum num, den;
  for (Eigen::Index i = 0; i < atoms.a.size(); ++i) {
    num.add(atoms.weight[i] * atoms.a[i] * (atoms.q_at_a[i] - atoms.q_at_0[i]));
    den.add(atoms.weight[i] * atoms.a[i] * atoms.a[i]);
  }
  if (!(den.value() > 0.0))
    throw std::runtime_error("psi_c_ratio: exposure second moment is not positive");
  return num.value() / den.value();
}

double influence_c(const ContinuousNuisance& nu, double psi, const Observation& o) {
  const double qa = nu.q.predict(o.a, o.w, o.v);
  const double q0 = nu.q.predict(0.0, o.w, o.v);
  const double d1 = o.a * (qa - q0 - o.a * psi);
  const double c2 = o.a == 0.0
                        ? -nu.mu.predict(o.w, o.v) / nu.g0.predict(0.0, o.w, o.v)
                        : o.a;
  const double d2 = (o.y - qa) * c2;
  return (d1 + d2) / nu.zeta2;
}

TiltResult optimal_tilt(const Eigen::Ref<const Vector>& d,
                        const Eigen::Ref<const Vector>& weights, double bound) {
  TiltResult out;
  if (!(bound > 0.0)) return out;

  const auto deriv = [&](double t, double& g, double& h) {
    KahanSum gs, hs;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      const double r = 1.0 + t * d[i];
      gs.add(weights[i] * d[i] / r);
      hs.add(weights[i] * d[i] * d[i] / (r * r));
    }
    g = gs.value();
    h = hs.value();
  };

  double t = 0.0;
  double lo = -bound, hi = bound;
  for (int it = 0; it < 200; ++it) {
    double g, h;
    deriv(t, g, h);
    if (std::fabs(g) <= 1e-13 * weights.sum() || h <= 0.0) break;
    if (g > 0.0)
      lo = t;
    else
      hi = t;
    double next = t + g / h;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == t) break;
    t = next;
  }
  // the maximizer may sit at the boundary when the derivative never vanishes
  double g, h;
  deriv(hi, g, h);
  if (g > 0.0) t = hi;
  deriv(lo, g, h);
  if (g < 0.0) t = lo;
  out.t = t;
  out.interior = std::fabs(std::fabs(t) - bound) > 1e-12 * bound;

  KahanSum ll;
  for (Eigen::Index i = 0; i < d.size(); ++i)
    ll.add(weights[i] * std::log1p(t * d[i]));
  out.loglik_gain = ll.value();
  return out;
}

namespace {

constexpr double kQClamp = 1e-9;

struct LevelRecord {
  double eps = 0.0;
  double t = 0.0;
  double psi = 0.0;
  double zeta2 = 1.0;
  Vector q0;  // post-recentering values, used by cross-pair replay
};

// Linear-in-a decomposition of a logistic model's predictor at fixed (w, v):
// eta(a) = c + a * d. Holds for feature maps whose only a-terms are a and a*w.
void linear_in_a(const GlmModel& model, const Dataset& ds,
                 const std::vector<Eigen::Index>& rows, Vector& c, Vector& d) {
  const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
  const Matrix x0 = model.map.build(ds, rows, Vector::Zero(m));
  const Matrix x1 = model.map.build(ds, rows, Vector::Ones(m));
  c = x0 * model.beta;
  d = x1 * model.beta - c;
}

// Deterministic weight-proportional subsample (systematic, fixed phase).
std::vector<Eigen::Index> systematic_subsample(const std::vector<Eigen::Index>& pool,
                                               const Vector& w, Eigen::Index k) {
  const Eigen::Index n = static_cast<Eigen::Index>(pool.size());
  if (k >= n) return pool;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) total += w[i];
  std::vector<Eigen::Index> out;
  out.reserve(static_cast<std::size_t>(k));
  double cum = 0.0;
  Eigen::Index j = 0;
  for (Eigen::Index i = 0; i < n && j < k; ++i) {
    cum += w[i];
    while (j < k && (static_cast<double>(j) + 0.5) / static_cast<double>(k) * total <= cum) {
      out.push_back(pool[i]);
      ++j;
    }
  }
  return out;
}

}  // namespace

TmleReport estimate_continuous(const Dataset& ds, const WeightedSample& s,
                               const ContinuousConfig& cfg) {
  if (ds.exposure_kind() != ExposureKind::continuous)
    throw std::invalid_argument("estimate_continuous: dataset is not continuous-exposure");
  const Eigen::Index m = s.size();
  if (m == 0) throw std::invalid_argument("estimate_continuous: empty sample");

  TmleReport rep;
  rep.alpha = cfg.alpha;
  rep.n = m;
  rep.big_n = s.base_n;

  NuisanceOptions no = cfg.nuisance;
  no.q_map.include_a = true;
  if (no.q_map.v_dummies) no.q_map.strata = ds.stratum_domain();
  if (no.w_map.v_dummies) no.w_map.strata = ds.stratum_domain();

  Vector y(m), a(m);
  bool any_zero = false, any_nonzero = false;
  for (Eigen::Index k = 0; k < m; ++k) {
    y[k] = ds.y()[s.idx[k]];
    a[k] = ds.a()[s.idx[k]];
    (a[k] == 0.0 ? any_zero : any_nonzero) = true;
  }
  if (!any_zero)
    throw std::runtime_error("estimate_continuous: no reference-level exposure in sample");
  if (!any_nonzero)
    throw std::runtime_error("estimate_continuous: exposure is identically zero");

  const Vector b = s.weights();
  const double bsum = b.sum();

  // initial nuisances
  ContinuousNuisance nu;
  nu.q = fit_q(ds, s, no);
  nu.mu = fit_mu(ds, s, no);
  nu.g0 = fit_g0_continuous(ds, s, no);
  if (!nu.q.converged) rep.warnings.push_back("Q fit did not converge");

  Vector qa = nu.q.predict(ds, s.idx);
  Vector q0 = nu.q.predict(ds, s.idx, Vector::Zero(m));
  Vector mu_i(m), g0_i(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto i = s.idx[k];
    mu_i[k] = nu.mu.predict(ds.w().row(i).transpose(), ds.v()[i]);
    g0_i[k] = nu.g0.predict(0.0, ds.w().row(i).transpose(), ds.v()[i]);
  }

  // conditional-variance auxiliary, fit on squared residuals
  {
    const Matrix xq = no.q_map.build(ds, s.idx);
    Vector r2(m);
    for (Eigen::Index k = 0; k < m; ++k)
      r2[k] = std::clamp((y[k] - qa[k]) * (y[k] - qa[k]), 0.0, 1.0);
    const GlmFit fit = fit_weighted_glm(xq, r2, b, std::nullopt, no.glm);
    nu.sigma2 = GlmModel{no.q_map, fit.beta, 1e-12, fit.converged, fit.ridged};
  }
  Vector s2a(m), s20(m);
  {
    Vector cs, dsl;
    linear_in_a(nu.sigma2, ds, s.idx, cs, dsl);
    for (Eigen::Index k = 0; k < m; ++k) {
      s2a[k] = clamp_unit(expit(cs[k] + a[k] * dsl[k]));
      s20[k] = clamp_unit(expit(cs[k]));
    }
  }

  const double zeta2_0 = [&] {
    KahanSum z;
    for (Eigen::Index k = 0; k < m; ++k) z.add(b[k] * a[k] * a[k]);
    return z.value() / bsum;
  }();
  rep.zeta2_initial = zeta2_0;

  // mixture support for conditional moments: nonzero-exposure atoms, capped
  std::vector<Eigen::Index> nz;
  for (Eigen::Index k = 0; k < m; ++k)
    if (a[k] != 0.0) nz.push_back(k);
  Eigen::Index cap = cfg.mixture_cap;
  const Eigen::Index budget = 8'000'000 / std::max<Eigen::Index>(m, 1);
  cap = std::min(cap, std::max<Eigen::Index>(budget, 64));
  std::vector<Eigen::Index> mix;
  {
    Vector wnz(static_cast<Eigen::Index>(nz.size()));
    for (std::size_t j = 0; j < nz.size(); ++j)
      wnz[static_cast<Eigen::Index>(j)] = b[nz[j]];
    mix = systematic_subsample(nz, wnz, cap);
  }
  const Eigen::Index mx = static_cast<Eigen::Index>(mix.size());
  Vector a_mix(mx), b_mix(mx);
  for (Eigen::Index j = 0; j < mx; ++j) {
    a_mix[j] = a[mix[j]];
    b_mix[j] = b[mix[j]];
  }

  // cross matrices Q(a_j, w_i) and sigma2(a_j, w_i) via the linear-in-a form
  Matrix qx(m, mx), s2x(m, mx);
  {
    Vector cq, dq, cs, dsl;
    linear_in_a(nu.q, ds, s.idx, cq, dq);
    linear_in_a(nu.sigma2, ds, s.idx, cs, dsl);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < mx; ++j) {
        qx(i, j) = clamp_unit(expit(cq[i] + a_mix[j] * dq[i]), kQClamp);
        s2x(i, j) = clamp_unit(expit(cs[i] + a_mix[j] * dsl[i]));
      }
  }

  Vector r = Vector::Ones(m);
  std::vector<LevelRecord> history;
  double psi = 0.0, zeta2 = zeta2_0, sigma_n = 0.0, score = 0.0;
  double psi_prev = std::numeric_limits<double>::quiet_NaN();
  bool stopped = false;
  int tilt_count = 0;

  for (int iter = 0; iter <= cfg.max_iter; ++iter) {
    Vector u = b.cwiseProduct(r);
    const double usum = u.sum();
    {
      KahanSum z;
      for (Eigen::Index k = 0; k < m; ++k) z.add(u[k] * a[k] * a[k]);
      zeta2 = z.value() / usum;
    }

    // clever covariate under current (mu, g0)
    Vector c2(m), c20(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      c20[k] = -mu_i[k] / g0_i[k];
      c2[k] = a[k] == 0.0 ? c20[k] : a[k];
    }

    // recenter the residual equation: 1-D fluctuation of Q along c2 under u
    const FluctuationResult fl = logistic_fluctuation(y, qa, c2, u, 1e-12);
    const double eps = fl.t_star;
    for (Eigen::Index k = 0; k < m; ++k) {
      qa[k] = clamp_unit(expit(logit(qa[k]) + eps * c2[k]), kQClamp);
      q0[k] = clamp_unit(expit(logit(q0[k]) + eps * c20[k]), kQClamp);
    }
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < mx; ++j)
        qx(i, j) = clamp_unit(expit(logit(qx(i, j)) + eps * a_mix[j]), kQClamp);

    {
      KahanSum num, den;
      for (Eigen::Index k = 0; k < m; ++k) {
        num.add(u[k] * a[k] * (qa[k] - q0[k]));
        den.add(u[k] * a[k] * a[k]);
      }
      psi = num.value() / den.value();
    }

    Vector d1(m), dvec(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      d1[k] = a[k] * (qa[k] - q0[k] - a[k] * psi) / zeta2;
      dvec[k] = d1[k] + (y[k] - qa[k]) * c2[k] / zeta2;
    }

    KahanSum sc, var;
    for (Eigen::Index k = 0; k < m; ++k) {
      sc.add(b[k] * dvec[k]);
      var.add(b[k] * dvec[k] * dvec[k] / s.h[k]);
    }
    score = sc.value() / bsum;
    sigma_n = var.value();
    rep.score_trace.push_back(score);
    rep.influence_values = dvec;

    // every level (including the last) enters the replay history
    LevelRecord rec;
    rec.eps = eps;
    rec.t = 0.0;
    rec.psi = psi;
    rec.zeta2 = zeta2;
    rec.q0 = q0;
    history.push_back(std::move(rec));

    const double se = std::sqrt(std::max(sigma_n, 0.0) / static_cast<double>(m));
    const double gamma_now = 1.0 - zeta2_0 / zeta2;
    const double half = normal_quantile(1.0 - cfg.alpha / 2.0) * se /
                        std::max(std::fabs(1.0 - gamma_now), 1e-12);
    const bool mic_ok = std::fabs(score) <= cfg.mic_tol * se;
    const bool psi_ok =
        std::isfinite(psi_prev) && std::fabs(psi - psi_prev) <= cfg.psi_tol * half;
    psi_prev = psi;
    if (mic_ok || psi_ok) {
      stopped = true;
      break;
    }
    if (iter == cfg.max_iter) break;

    // admissible tilt range: keep 1 + t*D positive at atoms and at every
    // cross pair entering the conditional updates
    double dmax = dvec.cwiseAbs().maxCoeff();
    Vector mbar = Vector::Zero(m), mbar_a = Vector::Zero(m);
    {
      KahanSum umix_sum;
      Vector um(mx);
      for (Eigen::Index j = 0; j < mx; ++j) {
        um[j] = b_mix[j] * r[mix[j]];
        umix_sum.add(um[j]);
      }
      const double umx = umix_sum.value();
      for (Eigen::Index i = 0; i < m; ++i) {
        KahanSum acc0, acc1;
        for (Eigen::Index j = 0; j < mx; ++j) {
          const double d1x =
              a_mix[j] * (qx(i, j) - q0[i] - a_mix[j] * psi) / zeta2;
          dmax = std::max(dmax, std::fabs(d1x));
          acc0.add(um[j] * d1x);
          acc1.add(um[j] * a_mix[j] * d1x);
        }
        mbar[i] = (1.0 - g0_i[i]) * acc0.value() / umx;
        mbar_a[i] = (1.0 - g0_i[i]) * acc1.value() / umx;
      }
    }
    const double bound = dmax > 0.0 ? 0.99 / dmax : 0.0;

    const TiltResult tilt = optimal_tilt(dvec, b, bound);
    const double t = tilt.t;
    history.back().t = t;
    ++tilt_count;

    if (t == 0.0) continue;  // stationary tilt; functional state unchanged

    for (Eigen::Index k = 0; k < m; ++k) r[k] *= 1.0 + t * dvec[k];

    // closed-form conditional updates under dP(t)/dP = 1 + t D
    Vector q0_new(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      q0_new[k] = clamp_unit(q0[k] + t * s20[k] * c20[k] / zeta2, kQClamp);
      qa[k] = clamp_unit(
          (qa[k] + t * (qa[k] * d1[k] + s2a[k] * c2[k] / zeta2)) / (1.0 + t * d1[k]),
          kQClamp);
    }
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < mx; ++j) {
        const double d1x = a_mix[j] * (qx(i, j) - q0[i] - a_mix[j] * psi) / zeta2;
        qx(i, j) = clamp_unit(
            (qx(i, j) + t * (qx(i, j) * d1x + s2x(i, j) * a_mix[j] / zeta2)) /
                (1.0 + t * d1x),
            kQClamp);
      }
    q0 = std::move(q0_new);
    for (Eigen::Index k = 0; k < m; ++k) {
      const double denom = 1.0 + t * mbar[k];
      mu_i[k] = (mu_i[k] + t * mbar_a[k]) / denom;
      g0_i[k] = std::clamp(g0_i[k] / denom, no.g_min, 1.0 - no.g_min);
    }
  }

  rep.iterations = tilt_count;
  rep.converged = stopped;
  if (!stopped)
    rep.warnings.push_back("targeting stopped at max_iter with score above tolerance");

  {
    Vector u = b.cwiseProduct(r);
    KahanSum z;
    for (Eigen::Index k = 0; k < m; ++k) z.add(u[k] * a[k] * a[k]);
    rep.zeta2_star = z.value() / u.sum();
  }
  rep.gamma_n = 1.0 - zeta2_0 / rep.zeta2_star;
  if (std::fabs(1.0 - rep.gamma_n) <= 1e-6)
    throw std::runtime_error("estimate_continuous: A4 degenerate (Gamma_n near 1)");

  rep.psi_star = psi;
  rep.sigma_n = sigma_n;
  rep.score_residual = score;

  if (cfg.mc_mode) {
    // Monte Carlo evaluation of psi*: W from the reweighted atom marginal,
    // A from the mixture (0 w.p. g0*(w), else a reweighted nonzero atom),
    // Q* at off-atom pairs reconstructed by replaying the update history.
    Rng rng(cfg.mc_seed, 0x6d63);
    Vector u = b.cwiseProduct(r);
    std::vector<double> cum_w(m), cum_mix(mx);
    double cw = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) cum_w[k] = (cw += u[k]);
    double cm = 0.0;
    for (Eigen::Index j = 0; j < mx; ++j) cum_mix[j] = (cm += b_mix[j] * r[mix[j]]);

    Vector cq, dq, cs, dsl;
    linear_in_a(nu.q, ds, s.idx, cq, dq);
    linear_in_a(nu.sigma2, ds, s.idx, cs, dsl);

    const auto pick = [&](const std::vector<double>& cum, double total) {
      const double x = rng.uniform() * total;
      return static_cast<Eigen::Index>(
          std::lower_bound(cum.begin(), cum.end(), x) - cum.begin());
    };

    KahanSum acc;
    for (int bdraw = 0; bdraw < cfg.mc_draws; ++bdraw) {
      const Eigen::Index i = std::min<Eigen::Index>(pick(cum_w, cw), m - 1);
      if (rng.uniform() < g0_i[i]) continue;  // a = 0 contributes nothing
      const Eigen::Index j = std::min<Eigen::Index>(pick(cum_mix, cm), mx - 1);
      const double aa = a_mix[j];
      double qp = clamp_unit(expit(cq[i] + aa * dq[i]), kQClamp);
      const double s2p = clamp_unit(expit(cs[i] + aa * dsl[i]));
      for (const auto& rec : history) {
        qp = clamp_unit(expit(logit(qp) + rec.eps * aa), kQClamp);
        const double d1p = aa * (qp - rec.q0[i] - aa * rec.psi) / rec.zeta2;
        qp = clamp_unit(
            (qp + rec.t * (qp * d1p + s2p * aa / rec.zeta2)) / (1.0 + rec.t * d1p),
            kQClamp);
      }
      acc.add(aa * (qp - q0[i]));
    }
    rep.psi_star = acc.value() / (static_cast<double>(cfg.mc_draws) * rep.zeta2_star);
  }

  finish_interval(rep);
  return rep;
}

}  // namespace svytmle
