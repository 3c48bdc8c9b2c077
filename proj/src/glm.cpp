#include "svytmle/glm.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>

namespace svytmle {

Eigen::Index FeatureMap::dim(Eigen::Index w_dim) const {
  Eigen::Index d = 1 + w_dim;
  if (w_quadratic) d += w_dim * (w_dim + 1) / 2;
  if (v_dummies && strata.size() > 1)
    d += static_cast<Eigen::Index>(strata.size()) - 1;
  if (include_a) d += 1 + w_dim;  // a, a*w
  return d;
}

void FeatureMap::build_row(double a, const Eigen::Ref<const Vector>& w, double v,
                           Eigen::Ref<Vector> out) const {
  Eigen::Index k = 0;
  out[k++] = 1.0;
  for (Eigen::Index j = 0; j < w.size(); ++j) out[k++] = w[j];
  if (w_quadratic)
    for (Eigen::Index j = 0; j < w.size(); ++j)
      for (Eigen::Index l = j; l < w.size(); ++l) out[k++] = w[j] * w[l];
  if (v_dummies && strata.size() > 1)
    for (std::size_t m = 1; m < strata.size(); ++m)
      out[k++] = (v == strata[m]) ? 1.0 : 0.0;
  if (include_a) {
    out[k++] = a;
    for (Eigen::Index j = 0; j < w.size(); ++j) out[k++] = a * w[j];
  }
}

Matrix FeatureMap::build(const Dataset& ds, const std::vector<Eigen::Index>& rows) const {
  Matrix x(static_cast<Eigen::Index>(rows.size()), dim(ds.context_dim()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto i = rows[k];
    build_row(ds.a()[i], ds.w().row(i).transpose(), ds.v()[i],
              x.row(static_cast<Eigen::Index>(k)).transpose());
  }
  return x;
}

Matrix FeatureMap::build(const Dataset& ds, const std::vector<Eigen::Index>& rows,
                         const Vector& a_override) const {
  Matrix x(static_cast<Eigen::Index>(rows.size()), dim(ds.context_dim()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto i = rows[k];
    build_row(a_override[static_cast<Eigen::Index>(k)], ds.w().row(i).transpose(),
              ds.v()[i], x.row(static_cast<Eigen::Index>(k)).transpose());
  }
  return x;
}

double GlmModel::predict(double a, const Eigen::Ref<const Vector>& w, double v) const {
  Vector row(map.dim(w.size()));
  map.build_row(a, w, v, row);
  return clamp_unit(expit(row.dot(beta)), truncation);
}

Vector GlmModel::predict(const Dataset& ds, const std::vector<Eigen::Index>& rows) const {
  const Matrix x = map.build(ds, rows);
  Vector out = x * beta;
  for (Eigen::Index k = 0; k < out.size(); ++k)
    out[k] = clamp_unit(expit(out[k]), truncation);
  return out;
}

Vector GlmModel::predict(const Dataset& ds, const std::vector<Eigen::Index>& rows,
                         const Vector& a_override) const {
  const Matrix x = map.build(ds, rows, a_override);
  Vector out = x * beta;
  for (Eigen::Index k = 0; k < out.size(); ++k)
    out[k] = clamp_unit(expit(out[k]), truncation);
  return out;
}

double logistic_loss(double u, double v) {
  v = clamp_unit(v);
  return -(u * std::log(v) + (1.0 - u) * std::log(1.0 - v));
}

namespace {

double weighted_loss(const Eigen::Ref<const Matrix>& x,
                     const Eigen::Ref<const Vector>& y,
                     const Eigen::Ref<const Vector>& w, const Vector& offset,
                     const Vector& beta) {
  KahanSum acc;
  const Vector eta = x * beta + offset;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (w[i] != 0.0) acc.add(w[i] * logistic_loss(y[i], expit(eta[i])));
  return acc.value();
}

}  // namespace

GlmFit fit_weighted_glm(const Eigen::Ref<const Matrix>& x,
                        const Eigen::Ref<const Vector>& y,
                        const Eigen::Ref<const Vector>& w,
                        const std::optional<Vector>& offset_in,
                        const GlmOptions& opts) {
  const Eigen::Index n = y.size();
  const Eigen::Index d = x.cols();
  if (x.rows() != n || w.size() != n)
    throw std::invalid_argument("fit_weighted_glm: dimension mismatch");
  const double wsum = w.sum();
  if (!(wsum > 0.0))
    throw std::invalid_argument("fit_weighted_glm: needs a positive weight");
  for (Eigen::Index i = 0; i < n; ++i)
    if (w[i] < 0.0) throw std::invalid_argument("fit_weighted_glm: negative weight");

  const Vector offset = offset_in.value_or(Vector::Zero(n));
  GlmFit fit;
  fit.beta = Vector::Zero(d);
  double loss = weighted_loss(x, y, w, offset, fit.beta);
  fit.converged = false;

  for (int it = 0; it < opts.max_iter; ++it) {
    const Vector eta = x * fit.beta + offset;
    Vector mu(n), irls_w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = expit(eta[i]);
      irls_w[i] = w[i] * mu[i] * (1.0 - mu[i]);
    }
    const Vector grad = x.transpose() * (w.cwiseProduct(y - mu));
    if (grad.norm() <= opts.grad_tol * wsum) {
      fit.converged = true;
      break;
    }
    Matrix hess = x.transpose() * irls_w.asDiagonal() * x;
    Eigen::LLT<Matrix> llt(hess);
    if (llt.info() != Eigen::Success) {
      hess.diagonal().array() += opts.ridge * wsum;
      llt.compute(hess);
      fit.ridged = true;
      if (llt.info() != Eigen::Success) break;
    }
    const Vector step = llt.solve(grad);
    // step-halving keeps the weighted loss monotone
    double scale = 1.0;
    double new_loss = loss;
    Vector cand = fit.beta;
    for (int half = 0; half < 30; ++half) {
      cand = fit.beta + scale * step;
      new_loss = weighted_loss(x, y, w, offset, cand);
      if (new_loss <= loss + 1e-14 * std::fabs(loss)) break;
      scale *= 0.5;
    }
    if (new_loss > loss) break;  // no descent left; report best iterate
    fit.beta = cand;
    loss = new_loss;
  }
  fit.final_loss = loss;
  return fit;
}

FluctuationResult logistic_fluctuation(const Eigen::Ref<const Vector>& y,
                                       const Eigen::Ref<const Vector>& q_init,
                                       const Eigen::Ref<const Vector>& clever,
                                       const Eigen::Ref<const Vector>& weights,
                                       double score_tol, double t_bound) {
  const Eigen::Index n = y.size();
  Vector lq(n);
  for (Eigen::Index i = 0; i < n; ++i) lq[i] = logit(clamp_unit(q_init[i]));
  const double wsum = weights.sum();

  const auto score_and_curv = [&](double t, double& score, double& curv) {
    KahanSum s, c;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double q = expit(lq[i] + t * clever[i]);
      s.add(weights[i] * (y[i] - q) * clever[i]);
      c.add(weights[i] * q * (1.0 - q) * clever[i] * clever[i]);
    }
    score = s.value();
    curv = c.value();
  };

  FluctuationResult out;
  double t = 0.0;
  // The score is strictly decreasing in t; Newton with a shrinking bracket.
  double lo = -t_bound, hi = t_bound;
  for (int it = 0; it < 200; ++it) {
    double score, curv;
    score_and_curv(t, score, curv);
    if (std::fabs(score) <= score_tol * wsum) {
      out.t_star = t;
      out.score = score;
      return out;
    }
    if (score > 0.0)
      lo = t;
    else
      hi = t;
    double next = curv > 0.0 ? t + score / curv : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == t) break;
    t = next;
  }
  double score, curv;
  score_and_curv(t, score, curv);
  out.t_star = t;
  out.score = score;
  out.converged = std::fabs(score) <= score_tol * wsum;
  return out;
}

namespace {

GlmModel model_from_fit(FeatureMap map, GlmFit fit, double truncation) {
  GlmModel m;
  m.map = std::move(map);
  m.beta = std::move(fit.beta);
  m.truncation = truncation;
  m.converged = fit.converged;
  m.ridged = fit.ridged;
  return m;
}

}  // namespace

GlmModel fit_q(const Dataset& ds, const WeightedSample& s, const NuisanceOptions& no) {
  FeatureMap map = no.q_map;
  map.include_a = true;
  if (map.v_dummies) map.strata = ds.stratum_domain();
  const Matrix x = map.build(ds, s.idx);
  Vector y(s.size());
  for (Eigen::Index k = 0; k < s.size(); ++k) y[k] = ds.y()[s.idx[k]];
  Vector w = s.weights();
  GlmFit fit = fit_weighted_glm(x, y, w, std::nullopt, no.glm);
  if (no.gls_pass) {
    // second pass reweighted by inverse within-stratum residual variance
    Vector mu = x * fit.beta;
    const auto& dom = ds.stratum_domain();
    Vector ss = Vector::Zero(static_cast<Eigen::Index>(dom.size()));
    Vector cnt = Vector::Zero(ss.size());
    std::vector<Eigen::Index> svi(s.size());
    for (Eigen::Index k = 0; k < s.size(); ++k) {
      const double v = ds.v()[s.idx[k]];
      const auto it = std::lower_bound(dom.begin(), dom.end(), v);
      svi[k] = static_cast<Eigen::Index>(it - dom.begin());
      const double r = y[k] - expit(mu[k]);
      ss[svi[k]] += r * r;
      cnt[svi[k]] += 1.0;
    }
    Vector w2 = w;
    for (Eigen::Index k = 0; k < s.size(); ++k) {
      const double s2 = cnt[svi[k]] > 0 ? std::max(ss[svi[k]] / cnt[svi[k]], 1e-8) : 1.0;
      w2[k] = w[k] / s2;
    }
    fit = fit_weighted_glm(x, y, w2, std::nullopt, no.glm);
  }
  return model_from_fit(std::move(map), std::move(fit), 1e-9);
}

GlmModel fit_g_binary(const Dataset& ds, const WeightedSample& s,
                      const NuisanceOptions& no) {
  Vector a(s.size());
  bool any0 = false, any1 = false;
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    a[k] = ds.a()[s.idx[k]];
    (a[k] == 0.0 ? any0 : any1) = true;
  }
  if (!any0 || !any1)
    throw std::runtime_error("fit_g_binary: positivity violated in sample");
  FeatureMap map = no.w_map;
  map.include_a = false;
  if (map.v_dummies) map.strata = ds.stratum_domain();
  const Matrix x = map.build(ds, s.idx);
  const GlmFit fit = fit_weighted_glm(x, a, s.weights(), std::nullopt, no.glm);
  return model_from_fit(std::move(map), fit, no.g_min);
}

MuModel fit_mu(const Dataset& ds, const WeightedSample& s, const NuisanceOptions& no) {
  bool any_nonzero = false;
  Vector a(s.size());
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    a[k] = ds.a()[s.idx[k]];
    if (a[k] != 0.0) any_nonzero = true;
  }
  if (!any_nonzero)
    throw std::runtime_error("fit_mu: positivity violated in sample");
  const double lo = ds.a_min(), hi = ds.a_max();
  if (!(hi > lo)) throw std::runtime_error("fit_mu: degenerate exposure range");
  const Vector target = (a.array() - lo) / (hi - lo);
  FeatureMap map = no.w_map;
  map.include_a = false;
  if (map.v_dummies) map.strata = ds.stratum_domain();
  const Matrix x = map.build(ds, s.idx);
  const GlmFit fit = fit_weighted_glm(x, target, s.weights(), std::nullopt, no.glm);
  MuModel m;
  m.core = model_from_fit(std::move(map), fit, 1e-12);
  m.a_min = lo;
  m.a_max = hi;
  return m;
}

GlmModel fit_g0_continuous(const Dataset& ds, const WeightedSample& s,
                           const NuisanceOptions& no) {
  Vector z(s.size());
  bool any0 = false;
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    z[k] = ds.a()[s.idx[k]] == 0.0 ? 1.0 : 0.0;
    if (z[k] == 1.0) any0 = true;
  }
  if (!any0)
    throw std::runtime_error("fit_g0_continuous: positivity violated in sample");
  FeatureMap map = no.w_map;
  map.include_a = false;
  if (map.v_dummies) map.strata = ds.stratum_domain();
  const Matrix x = map.build(ds, s.idx);
  const GlmFit fit = fit_weighted_glm(x, z, s.weights(), std::nullopt, no.glm);
  return model_from_fit(std::move(map), fit, no.g_min);
}

}  // namespace svytmle
