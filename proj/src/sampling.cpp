#include "svytmle/sampling.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>

namespace svytmle {

InclusionPlan make_plan(const Dataset& ds, const SamplingFunction& h, Eigen::Index n,
                        double clip_eps) {
  if (n >= ds.size())
    throw std::invalid_argument("make_plan: n must be smaller than N");
  if (n <= 0) throw std::invalid_argument("make_plan: n must be positive");

  InclusionPlan plan;
  plan.n = n;
  plan.clip_eps = clip_eps;
  plan.h = h.evaluate(ds);  // throws on nonpositive h
  const double ratio = static_cast<double>(n) / static_cast<double>(ds.size());
  plan.p = ratio * plan.h;
  if (clip_eps > 0.0) {
    plan.p = plan.p.cwiseMax(clip_eps).cwiseMin(1.0 - clip_eps);
  } else {
    plan.p = plan.p.cwiseMin(1.0);
    if ((plan.p.array() <= 0.0).any())
      throw std::invalid_argument("make_plan: nonpositive inclusion probability");
  }
  plan.d_n = (plan.p.array() * (1.0 - plan.p.array())).sum();
  return plan;
}

InclusionPlan plan_from_probabilities(Vector p, Eigen::Index n) {
  InclusionPlan plan;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (!(p[i] > 0.0) || !(p[i] <= 1.0))
      throw std::invalid_argument("plan_from_probabilities: p outside (0,1]");
  plan.n = n;
  plan.h = p * (static_cast<double>(p.size()) / static_cast<double>(n));
  plan.p = std::move(p);
  plan.clip_eps = 0.0;
  plan.d_n = (plan.p.array() * (1.0 - plan.p.array())).sum();
  return plan;
}

namespace {

WeightedSample restrict(const InclusionPlan& plan, std::vector<Eigen::Index> idx) {
  WeightedSample s;
  s.base_n = plan.p.size();
  s.p.resize(static_cast<Eigen::Index>(idx.size()));
  s.h.resize(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    s.p[static_cast<Eigen::Index>(k)] = plan.p[idx[k]];
    s.h[static_cast<Eigen::Index>(k)] = plan.h[idx[k]];
  }
  s.idx = std::move(idx);
  return s;
}

}  // namespace

WeightedSample poisson_sample(const InclusionPlan& plan, Rng& rng) {
  std::vector<Eigen::Index> idx;
  idx.reserve(static_cast<std::size_t>(plan.n) + 16);
  for (Eigen::Index i = 0; i < plan.p.size(); ++i)
    if (rng.uniform() < plan.p[i]) idx.push_back(i);
  return restrict(plan, std::move(idx));
}

WeightedSample rejective_sample(const InclusionPlan& plan, Rng& rng, int max_attempts) {
  if (max_attempts < 1) throw std::invalid_argument("rejective_sample: max_attempts < 1");
  const Eigen::Index n = plan.n;
  std::vector<Eigen::Index> idx;
  idx.reserve(static_cast<std::size_t>(n) + 16);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    idx.clear();
    bool overflow = false;
    for (Eigen::Index i = 0; i < plan.p.size(); ++i) {
      if (rng.uniform() < plan.p[i]) {
        if (static_cast<Eigen::Index>(idx.size()) == n) {
          overflow = true;
          break;
        }
        idx.push_back(i);
      }
    }
    if (!overflow && static_cast<Eigen::Index>(idx.size()) == n)
      return restrict(plan, std::move(idx));
  }
  throw RejectiveInfeasible(max_attempts);
}

WeightedSample pareto_sample(const InclusionPlan& plan, Rng& rng) {
  const Eigen::Index big_n = plan.p.size();
  Vector q(big_n);
  for (Eigen::Index i = 0; i < big_n; ++i) {
    const double u = rng.uniform_pos();
    q[i] = (u / (1.0 - u)) * ((1.0 - plan.p[i]) / plan.p[i]);
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(big_n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::partial_sort(order.begin(), order.begin() + plan.n, order.end(),
                    [&](Eigen::Index a, Eigen::Index b) {
                      return q[a] < q[b] || (q[a] == q[b] && a < b);
                    });
  std::vector<Eigen::Index> idx(order.begin(), order.begin() + plan.n);
  std::sort(idx.begin(), idx.end());
  return restrict(plan, std::move(idx));
}

std::pair<WeightedSample, DesignUsed> draw_fixed_size(const InclusionPlan& plan,
                                                      Rng& rng, int max_attempts) {
  try {
    return {rejective_sample(plan, rng, max_attempts), DesignUsed::rejective};
  } catch (const RejectiveInfeasible&) {
    std::clog << "svytmle: rejective sampling infeasible, falling back to Pareto\n";
    return {pareto_sample(plan, rng), DesignUsed::pareto};
  }
}

ExactDesign exact_rejective_design(const InclusionPlan& plan) {
  const Eigen::Index big_n = plan.p.size();
  if (big_n > 20)
    throw std::invalid_argument("exact_rejective_design: N must be <= 20");
  for (Eigen::Index i = 0; i < big_n; ++i)
    if (!(plan.p[i] > 0.0 && plan.p[i] < 1.0))
      throw std::invalid_argument("exact_rejective_design: p must lie in (0,1)");
  const Eigen::Index n = plan.n;

  ExactDesign out;
  const double base = (1.0 - plan.p.array()).log().sum();  // log prod (1-p_j)
  std::vector<double> logw;
  std::vector<Eigen::Index> current;
  current.reserve(static_cast<std::size_t>(n));

  // enumerate size-n subsets
  const auto recurse = [&](auto&& self, Eigen::Index start) -> void {
    if (static_cast<Eigen::Index>(current.size()) == n) {
      double lw = base;
      for (const auto i : current)
        lw += std::log(plan.p[i]) - std::log1p(-plan.p[i]);
      out.subsets.push_back(current);
      logw.push_back(lw);
      return;
    }
    const Eigen::Index remaining = n - static_cast<Eigen::Index>(current.size());
    for (Eigen::Index i = start; i + remaining <= big_n; ++i) {
      current.push_back(i);
      self(self, i + 1);
      current.pop_back();
    }
  };
  recurse(recurse, 0);

  const double lmax = *std::max_element(logw.begin(), logw.end());
  out.probabilities.resize(static_cast<Eigen::Index>(logw.size()));
  KahanSum z;
  for (std::size_t k = 0; k < logw.size(); ++k) {
    out.probabilities[static_cast<Eigen::Index>(k)] = std::exp(logw[k] - lmax);
    z.add(out.probabilities[static_cast<Eigen::Index>(k)]);
  }
  out.probabilities /= z.value();

  out.pi = Vector::Zero(big_n);
  for (std::size_t k = 0; k < out.subsets.size(); ++k)
    for (const auto i : out.subsets[k])
      out.pi[i] += out.probabilities[static_cast<Eigen::Index>(k)];
  return out;
}

double dN_diagnostic(const InclusionPlan& plan) {
  if (plan.d_n < 25.0)
    std::clog << "svytmle: d_N = " << plan.d_n
              << " < 25; the rejective/Poisson coupling may be poor\n";
  return plan.d_n;
}

}  // namespace svytmle
