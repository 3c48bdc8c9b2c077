#include "svytmle/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace svytmle {

Dataset Dataset::from_columns(Matrix w, Vector a, Vector y, Vector v,
                              ExposureKind kind) {
  const Eigen::Index n = a.size();
  if (w.rows() != n || y.size() != n || v.size() != n)
    throw std::invalid_argument("Dataset: column length mismatch");
  if (n == 0) throw std::invalid_argument("Dataset: empty");

  Dataset ds;
  ds.kind_ = kind;
  ds.y_min_ = y.minCoeff();
  ds.y_max_ = y.maxCoeff();
  if (!(ds.y_max_ > ds.y_min_))
    throw std::invalid_argument("Dataset: degenerate outcome range");
  ds.y_ = (y.array() - ds.y_min_) / (ds.y_max_ - ds.y_min_);

  if (kind == ExposureKind::binary) {
    for (Eigen::Index i = 0; i < n; ++i)
      if (a[i] != 0.0 && a[i] != 1.0)
        throw std::invalid_argument("Dataset: binary exposure must be 0/1");
    ds.a_min_ = 0.0;
    ds.a_max_ = 1.0;
  } else {
    ds.a_min_ = std::min(0.0, a.minCoeff());
    ds.a_max_ = std::max(0.0, a.maxCoeff());
  }
  ds.a_ = std::move(a);
  ds.w_ = std::move(w);

  std::set<double> dom(v.begin(), v.end());
  ds.strata_.assign(dom.begin(), dom.end());
  ds.v_ = std::move(v);
  return ds;
}

Dataset Dataset::from_scaled_columns(Matrix w, Vector a, Vector y, Vector v,
                                     ExposureKind kind, double y_min, double y_max) {
  const Eigen::Index n = a.size();
  if (w.rows() != n || y.size() != n || v.size() != n)
    throw std::invalid_argument("Dataset: column length mismatch");
  if (n == 0) throw std::invalid_argument("Dataset: empty");
  if (!(y_max > y_min))
    throw std::invalid_argument("Dataset: degenerate outcome range");
  for (Eigen::Index i = 0; i < n; ++i)
    if (y[i] < 0.0 || y[i] > 1.0)
      throw std::invalid_argument("Dataset: scaled outcome outside [0,1]");

  Dataset ds;
  ds.kind_ = kind;
  ds.y_min_ = y_min;
  ds.y_max_ = y_max;
  ds.y_ = std::move(y);
  if (kind == ExposureKind::binary) {
    for (Eigen::Index i = 0; i < n; ++i)
      if (a[i] != 0.0 && a[i] != 1.0)
        throw std::invalid_argument("Dataset: binary exposure must be 0/1");
    ds.a_min_ = 0.0;
    ds.a_max_ = 1.0;
  } else {
    ds.a_min_ = std::min(0.0, a.minCoeff());
    ds.a_max_ = std::max(0.0, a.maxCoeff());
  }
  ds.a_ = std::move(a);
  ds.w_ = std::move(w);
  std::set<double> dom(v.begin(), v.end());
  ds.strata_.assign(dom.begin(), dom.end());
  ds.v_ = std::move(v);
  return ds;
}

Vector Dataset::stratum_frequencies() const {
  Vector freq = Vector::Zero(static_cast<Eigen::Index>(strata_.size()));
  for (Eigen::Index i = 0; i < v_.size(); ++i) {
    const auto it = std::lower_bound(strata_.begin(), strata_.end(), v_[i]);
    freq[static_cast<Eigen::Index>(it - strata_.begin())] += 1.0;
  }
  return freq / static_cast<double>(v_.size());
}

SamplingFunction::SamplingFunction(std::map<double, double> by_stratum, double floor)
    : table_(std::move(by_stratum)), floor_(floor) {
  if (!(floor_ > 0.0)) throw std::invalid_argument("SamplingFunction: floor must be positive");
  for (const auto& [v, hv] : table_)
    if (!(hv > 0.0))
      throw std::invalid_argument("SamplingFunction: nonpositive value at stratum " +
                                  std::to_string(v));
}

double SamplingFunction::operator()(double v) const {
  if (table_.empty()) return 1.0;
  const auto it = table_.find(v);
  if (it == table_.end())
    throw std::out_of_range("SamplingFunction: stratum " + std::to_string(v) +
                            " not in table");
  return std::max(it->second, floor_);
}

Vector SamplingFunction::evaluate(const Dataset& ds) const {
  Vector h(ds.size());
  for (Eigen::Index i = 0; i < ds.size(); ++i) h[i] = (*this)(ds.v()[i]);
  return h;
}

double SamplingFunction::dataset_mean(const Dataset& ds) const {
  return evaluate(ds).mean();
}

double ht_integral(const WeightedSample& s, const Eigen::Ref<const Vector>& fvals) {
  if (fvals.size() != s.size())
    throw std::invalid_argument("ht_integral: fvals length mismatch");
  KahanSum acc;
  for (Eigen::Index k = 0; k < s.size(); ++k) acc.add(fvals[k] / s.p[k]);
  return acc.value() / static_cast<double>(s.base_n);
}

double ht_mass(const WeightedSample& s) {
  KahanSum acc;
  for (Eigen::Index k = 0; k < s.size(); ++k) acc.add(1.0 / s.p[k]);
  return acc.value() / static_cast<double>(s.base_n);
}

HtMarginal ht_marginal_w(const WeightedSample& s) {
  HtMarginal m;
  m.idx = s.idx;
  m.mass.resize(s.size());
  KahanSum acc;
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    m.mass[k] = s.weight(k);
    acc.add(m.mass[k]);
  }
  m.total = acc.value();
  return m;
}

}  // namespace svytmle
