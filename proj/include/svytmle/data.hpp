#pragma once

#include <Eigen/Core>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "svytmle/stats.hpp"

namespace svytmle {

enum class ExposureKind { binary, continuous };

// One record as seen by scalar evaluators (oracles, ht_integral callables).
struct Observation {
  Eigen::VectorXd w;
  double a = 0.0;
  double y = 0.0;  // rescaled to [0,1]
  double v = 0.0;  // stratum label
};

// Columnar, immutable-after-construction data set. The outcome is stored
// rescaled to [0,1]; (y_min, y_max) keep the original range for reporting.
class Dataset {
 public:
  static Dataset from_columns(Matrix w, Vector a, Vector y, Vector v,
                              ExposureKind kind);
  // y already lies in [0,1]; (y_min, y_max) is the original range the values
  // were mapped from (fixed calibration constants rather than data extremes).
  static Dataset from_scaled_columns(Matrix w, Vector a, Vector y, Vector v,
                                     ExposureKind kind, double y_min, double y_max);

  Eigen::Index size() const { return a_.size(); }
  Eigen::Index context_dim() const { return w_.cols(); }
  ExposureKind exposure_kind() const { return kind_; }

  const Matrix& w() const { return w_; }
  const Vector& a() const { return a_; }
  const Vector& y() const { return y_; }
  const Vector& v() const { return v_; }

  double y_min() const { return y_min_; }
  double y_max() const { return y_max_; }
  double y_range() const { return y_max_ - y_min_; }
  double a_min() const { return a_min_; }
  double a_max() const { return a_max_; }

  const std::vector<double>& stratum_domain() const { return strata_; }
  // Empirical stratum frequencies over the full data set, aligned with
  // stratum_domain().
  Vector stratum_frequencies() const;

  Observation row(Eigen::Index i) const {
    return Observation{w_.row(i).transpose(), a_[i], y_[i], v_[i]};
  }

  // Exact inverse of the outcome rescaling, for point values on the Y scale.
  double unscale_value(double x) const { return y_min_ + x * y_range(); }
  // Differences and CI half-widths transform by the range alone.
  double unscale_difference(double x) const { return x * y_range(); }

 private:
  Dataset() = default;
  Matrix w_;
  Vector a_, y_, v_;
  ExposureKind kind_ = ExposureKind::binary;
  double y_min_ = 0.0, y_max_ = 1.0;
  double a_min_ = 0.0, a_max_ = 1.0;
  std::vector<double> strata_;
};

// Sampling function h: positive weight per stratum with floor c_h. The
// normalization target is the empirical mean of h over the full data set.
class SamplingFunction {
 public:
  SamplingFunction() = default;
  SamplingFunction(std::map<double, double> by_stratum, double floor);

  static SamplingFunction uniform() { return SamplingFunction({}, 1.0); }
  bool is_uniform() const { return table_.empty(); }

  double floor() const { return floor_; }
  double operator()(double v) const;
  Vector evaluate(const Dataset& ds) const;
  // Empirical mean of h over the data set.
  double dataset_mean(const Dataset& ds) const;

  const std::map<double, double>& table() const { return table_; }

 private:
  std::map<double, double> table_;  // empty means h == 1
  double floor_ = 1.0;
};

// Per-unit inclusion probabilities p_i = clip(n h(V_i) / N).
struct InclusionPlan {
  Eigen::Index n = 0;
  Vector p;        // length N
  Vector h;        // h(V_i), length N
  double clip_eps = 1e-6;
  double d_n = 0.0;  // sum p_i (1 - p_i)
};

// A drawn sub-sample: indices into the data set plus the per-unit inclusion
// probabilities and h-values restricted to it. Stores indices, never copies.
struct WeightedSample {
  std::vector<Eigen::Index> idx;
  Vector p;  // aligned with idx
  Vector h;  // aligned with idx
  Eigen::Index base_n = 0;

  Eigen::Index size() const { return static_cast<Eigen::Index>(idx.size()); }
  // HT base weight of the k-th selected unit: 1 / (N p_k).
  double weight(Eigen::Index k) const {
    return 1.0 / (static_cast<double>(base_n) * p[k]);
  }
  Vector weights() const {
    Vector w(size());
    for (Eigen::Index k = 0; k < size(); ++k) w[k] = weight(k);
    return w;
  }
};

// HT empirical measure applied to f: (1/N) sum_{i in S} f(O_i) / p_i.
double ht_integral(const WeightedSample& s, const Eigen::Ref<const Vector>& fvals);

template <class F>
double ht_integral(const WeightedSample& s, const Dataset& ds, F&& f) {
  KahanSum acc;
  for (Eigen::Index k = 0; k < s.size(); ++k)
    acc.add(f(ds.row(s.idx[k])) / s.p[k]);
  return acc.value() / static_cast<double>(s.base_n);
}

double ht_mass(const WeightedSample& s);

// Weighted discrete measure on contexts: atoms at W_i with masses 1/(N p_i).
struct HtMarginal {
  std::vector<Eigen::Index> idx;
  Vector mass;
  double total = 0.0;
};

HtMarginal ht_marginal_w(const WeightedSample& s);

// rho_N(f, f') = sqrt( (1/N) sum_i (f(O_i) - f'(O_i))^2 ), over the full set.
template <class F, class G>
double empirical_metric_rho(const Dataset& ds, F&& f, G&& g) {
  KahanSum acc;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    const double d = f(ds.row(i)) - g(ds.row(i));
    acc.add(d * d);
  }
  return std::sqrt(acc.value() / static_cast<double>(ds.size()));
}

}  // namespace svytmle
