#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>

namespace svytmle {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline double expit(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double clamp_unit(double p, double eps = 1e-12) {
  if (p < eps) return eps;
  if (p > 1.0 - eps) return 1.0 - eps;
  return p;
}

// Compensated (Kahan) accumulator; HT weights span orders of magnitude.
class KahanSum {
 public:
  void add(double x) {
    const double y = x - c_;
    const double t = s_ + y;
    c_ = (t - s_) - y;
    s_ = t;
  }
  double value() const { return s_; }

 private:
  double s_ = 0.0;
  double c_ = 0.0;
};

double normal_cdf(double x);

// Standard-normal quantile, |error| < 1e-10 over (1e-300, 1-1e-16):
// rational approximation refined by one Halley step against erfc.
double normal_quantile(double p);

// Regularized incomplete gamma P(a,x) and Q(a,x) = 1 - P(a,x).
double gamma_p(double a, double x);
double gamma_q(double a, double x);

// Upper tail of the chi-square distribution with df degrees of freedom.
double chi2_sf(double x, double df);

struct JarqueBera {
  double statistic = 0.0;
  double p_value = 1.0;
  double skewness = 0.0;
  double kurtosis = 0.0;
  bool degenerate = false;  // constant input
};

// Omnibus normality diagnostic on a sample of estimates.
JarqueBera jarque_bera(const Eigen::Ref<const Vector>& x);

// Chi-square goodness-of-fit p-value for observed counts against expected.
double chi2_gof_pvalue(const Eigen::Ref<const Vector>& observed,
                       const Eigen::Ref<const Vector>& expected);

inline double mean_of(const Eigen::Ref<const Vector>& x) {
  return x.size() == 0 ? 0.0 : x.mean();
}

inline double variance_of(const Eigen::Ref<const Vector>& x) {
  const auto n = x.size();
  if (n < 2) return 0.0;
  const double m = x.mean();
  return (x.array() - m).square().sum() / static_cast<double>(n - 1);
}

}  // namespace svytmle
