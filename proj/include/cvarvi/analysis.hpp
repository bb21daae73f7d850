#pragma once

#include "cvarvi/geometry.hpp"
#include "cvarvi/problem.hpp"
#include "cvarvi/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cvarvi {

struct KktPoint {
  Vec h;
  Vec lambda;  ///< inequality multipliers, >= 0
  Vec mu;      ///< equality multipliers
};

struct KktResidual {
  double stationarity = 0.0;     ///< ||F(h) + Dq(h)^T lambda + A^T mu||
  double primal_eq = 0.0;        ///< ||A h - b||_inf
  double primal_ineq = 0.0;      ///< max_i [q^i(h)]^+
  double dual_feas = 0.0;        ///< max_i [-lambda_i]^+
  double complementarity = 0.0;  ///< |lambda^T q(h)|

  double max() const { return std::max({stationarity, primal_eq, primal_ineq, dual_feas, complementarity}); }
};

namespace detail {

inline void require_exact(const StochasticVIProblem& p) {
  if (!p.has_exact_map()) throw std::invalid_argument("problem has no exact map");
}

}  // namespace detail

inline KktResidual kkt_residual(const KktPoint& point, const StochasticVIProblem& problem) {
  detail::require_exact(problem);
  const auto& set = problem.feasible;
  const Vec& h = point.h;
  if (h.size() != set.dim() || point.lambda.size() != set.ineq_count() || point.mu.size() != set.A().rows()) {
    throw std::invalid_argument("dimension mismatch");
  }
  KktResidual r;
  Vec station = problem.exact(h) + set.ineq_jacobian_transpose_times(h, point.lambda);
  if (set.A().rows() > 0) station += set.A().transpose() * point.mu;
  r.stationarity = station.norm();
  if (set.A().rows() > 0) r.primal_eq = (set.A() * h - set.b()).lpNorm<Eigen::Infinity>();
  if (set.ineq_count() > 0) {
    const Vec q = set.ineq_values(h);
    r.primal_ineq = std::max(0.0, q.maxCoeff());
    r.dual_feas = std::max(0.0, (-point.lambda).maxCoeff());
    r.complementarity = std::abs(point.lambda.dot(q));
  }
  return r;
}

/**
 * Lawson-Hanson active-set solver for min ||E x - f|| subject to x >= 0.
 */
inline Vec nnls(const Mat& E, const Vec& f, int max_iter = 0) {
  const Eigen::Index n = E.cols();
  if (max_iter <= 0) max_iter = static_cast<int>(3 * n + 30);
  Vec x = Vec::Zero(n);
  if (n == 0) return x;
  std::vector<char> passive(static_cast<std::size_t>(n), 0);
  const double tol = 1e-12 * std::max(1.0, E.lpNorm<Eigen::Infinity>()) * std::max(1.0, f.norm());

  auto solve_passive = [&](Vec& z) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (passive[static_cast<std::size_t>(i)]) idx.push_back(i);
    }
    Mat sub(E.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) sub.col(static_cast<Eigen::Index>(j)) = E.col(idx[j]);
    const Vec zs = sub.completeOrthogonalDecomposition().solve(f);
    z = Vec::Zero(n);
    for (std::size_t j = 0; j < idx.size(); ++j) z[idx[j]] = zs[static_cast<Eigen::Index>(j)];
  };

  for (int outer = 0; outer < max_iter; ++outer) {
    const Vec w = E.transpose() * (f - E * x);
    Eigen::Index best = -1;
    double best_w = tol;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!passive[static_cast<std::size_t>(i)] && w[i] > best_w) {
        best_w = w[i];
        best = i;
      }
    }
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = 1;
    for (int inner = 0; inner < max_iter; ++inner) {
      Vec z;
      solve_passive(z);
      bool feasible = true;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (passive[static_cast<std::size_t>(i)] && z[i] <= 0.0) feasible = false;
      }
      if (feasible) {
        x = z;
        break;
      }
      double step = 1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (passive[static_cast<std::size_t>(i)] && z[i] <= 0.0) step = std::min(step, x[i] / (x[i] - z[i]));
      }
      x += step * (z - x);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (passive[static_cast<std::size_t>(i)] && x[i] <= tol) {
          passive[static_cast<std::size_t>(i)] = 0;
          x[i] = 0.0;
        }
      }
    }
  }
  return x;
}

/**
 * Multipliers for a candidate solution h: lambda over the active inequalities
 * by nonnegative least squares on the stationarity equation, with the equality
 * multipliers mu eliminated through the null-space projector of A and then
 * recovered by least squares. Inactive inequalities get lambda = 0.
 */
inline KktPoint recover_multipliers(const Vec& h, const StochasticVIProblem& problem, double active_tol = -1.0) {
  detail::require_exact(problem);
  const auto& set = problem.feasible;
  if (active_tol < 0.0) active_tol = 1e-7 * (1.0 + h.lpNorm<Eigen::Infinity>());
  const Vec F = problem.exact(h);
  const Eigen::Index s = set.ineq_count();
  KktPoint out{h, Vec::Zero(s), Vec::Zero(set.A().rows())};

  std::vector<Eigen::Index> active;
  Mat D;
  if (s > 0) {
    const Vec q = set.ineq_values(h);
    D = set.ineq_jacobian(h);
    for (Eigen::Index i = 0; i < s; ++i) {
      if (q[i] >= -active_tol) active.push_back(i);
    }
  }
  const SubspaceProjector proj = build_subspace_projector(set.A());
  Mat E(set.dim(), static_cast<Eigen::Index>(active.size()));
  for (std::size_t j = 0; j < active.size(); ++j) {
    E.col(static_cast<Eigen::Index>(j)) = proj.L * D.row(active[j]).transpose();
  }
  const Vec lam = nnls(E, -(proj.L * F));
  for (std::size_t j = 0; j < active.size(); ++j) out.lambda[active[j]] = lam[static_cast<Eigen::Index>(j)];
  if (set.A().rows() > 0) {
    const Vec rest = F + set.ineq_jacobian_transpose_times(h, out.lambda);
    out.mu = set.A().transpose().completeOrthogonalDecomposition().solve(-rest);
  }
  return out;
}

struct CweWitness {
  std::size_t group = 0;
  Eigen::Index used_path = 0;
  Eigen::Index cheaper_path = 0;
};

struct CweReport {
  bool pass = true;
  double max_violation = 0.0;
  std::optional<CweWitness> witness;
};

/**
 * Wardrop check on CVaR costs: within every OD group, each path carrying more
 * than tol flow must cost at most tol more than any alternative in the group.
 */
inline CweReport check_cwe(const Vec& h, const Vec& costs, const std::vector<std::vector<Eigen::Index>>& od_groups,
                           double tol) {
  if (h.size() != costs.size()) throw std::invalid_argument("dimension mismatch");
  CweReport rep;
  for (std::size_t w = 0; w < od_groups.size(); ++w) {
    const auto& g = od_groups[w];
    for (Eigen::Index p : g) {
      if (p < 0 || p >= h.size()) throw std::invalid_argument("group index out of range");
    }
    for (Eigen::Index p : g) {
      if (!(h[p] > tol)) continue;
      for (Eigen::Index alt : g) {
        const double excess = costs[p] - costs[alt];
        if (excess > tol && excess > rep.max_violation) {
          rep.max_violation = excess;
          rep.witness = CweWitness{w, p, alt};
        }
      }
    }
  }
  rep.pass = !rep.witness.has_value();
  return rep;
}

struct MonotonicityReport {
  double min_inner = std::numeric_limits<double>::infinity();
  double ratio_at_min = std::numeric_limits<double>::quiet_NaN();  ///< min_inner / ||x - y||^2
  Vec x, y;
  std::size_t pairs_tested = 0;
  std::size_t degenerate_skipped = 0;
  /// A negative min_inner disproves monotonicity; a nonnegative one is only evidence.
  bool disproved() const { return min_inner < 0.0; }
  static constexpr const char* kind = "evidence, not proof";
};

/**
 * Random-pair probe of (F(x) - F(y))^T (x - y) over the box [lo, hi].
 * Pairs with x == y are skipped. `extra_pairs` are evaluated as well.
 */
inline MonotonicityReport monotonicity_probe(const CostMap& map, const Vec& lo, const Vec& hi, std::size_t pair_count,
                                             const RandomStream& rng,
                                             std::span<const std::pair<Vec, Vec>> extra_pairs = {}) {
  if (!map) throw std::invalid_argument("problem has no exact map");
  const Eigen::Index n = lo.size();
  MonotonicityReport rep;
  auto consider = [&](const Vec& x, const Vec& y) {
    const Vec d = x - y;
    const double dd = d.squaredNorm();
    if (dd == 0.0) {
      ++rep.degenerate_skipped;
      return;
    }
    const double inner = (map(x) - map(y)).dot(d);
    ++rep.pairs_tested;
    if (inner < rep.min_inner) {
      rep.min_inner = inner;
      rep.ratio_at_min = inner / dd;
      rep.x = x;
      rep.y = y;
    }
  };
  for (std::size_t pair = 0; pair < pair_count; ++pair) {
    Vec x(n), y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      x[i] = rng.uniform(lo[i], hi[i], static_cast<std::uint64_t>(i), 2 * pair);
      y[i] = rng.uniform(lo[i], hi[i], static_cast<std::uint64_t>(i), 2 * pair + 1);
    }
    consider(x, y);
  }
  for (const auto& [x, y] : extra_pairs) consider(x, y);
  return rep;
}

inline MonotonicityReport monotonicity_probe(const StochasticVIProblem& problem, const Vec& lo, const Vec& hi,
                                             std::size_t pair_count, const RandomStream& rng) {
  detail::require_exact(problem);
  return monotonicity_probe(problem.exact_map, lo, hi, pair_count, rng);
}

/// ||h - Pi_H(h - F(h))||, zero exactly at solutions of VI(H, F).
inline double natural_residual(const Vec& h, const Vec& Fh, const FeasibleSet& set, double proj_tol = 1e-12) {
  return (h - project_feasible(h - Fh, set, proj_tol)).norm();
}

struct ReferenceOptions {
  double tol = 1e-8;
  std::size_t max_iter = 1000000;
  double initial_step = 1.0;
  std::optional<Vec> start;
};

struct ReferenceResult {
  Vec h;
  std::size_t iterations = 0;
  double residual = 0.0;
  double step = 0.0;
};

/**
 * Extragradient oracle for VI(H, F) with the exact map:
 *   y = Pi(h - t F(h)),  h+ = Pi(h - t F(y)),
 * where t is halved whenever t ||F(y) - F(h)|| > 0.9 ||y - h|| and otherwise
 * kept fixed. Stops once the natural residual ||h - Pi(h - F(h))|| is at most
 * tol / 10, so that two runs from different starts agree in F to within 2 tol.
 */
inline ReferenceResult reference_solution(const StochasticVIProblem& problem, const ReferenceOptions& opt = {}) {
  detail::require_exact(problem);
  const auto& set = problem.feasible;
  const double ptol = std::min(1e-12, 0.01 * opt.tol);
  Vec h = project_feasible(opt.start ? *opt.start : problem.initial_point, set, ptol);
  double step = opt.initial_step;
  ReferenceResult res;
  Vec Fh = problem.exact(h);
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    const double r = natural_residual(h, Fh, set, ptol);
    if (r <= 0.1 * opt.tol) {
      res.h = h;
      res.iterations = it;
      res.residual = r;
      res.step = step;
      return res;
    }
    Vec y, Fy;
    for (int bt = 0; bt < 200; ++bt) {
      y = project_feasible(h - step * Fh, set, ptol);
      Fy = problem.exact(y);
      const double dy = (y - h).norm();
      if (step * (Fy - Fh).norm() <= 0.9 * dy || dy == 0.0) break;
      step *= 0.5;
    }
    h = project_feasible(h - step * Fy, set, ptol);
    Fh = problem.exact(h);
    if (!h.allFinite()) break;
  }
  throw std::runtime_error("oracle did not converge");
}

/// ||F(h) - F(h*)||. Invariant to the choice of h* when F is constant on SOL(H, F).
inline double error_metric(const Vec& h, const Vec& h_star, const StochasticVIProblem& problem) {
  detail::require_exact(problem);
  return (problem.exact(h) - problem.exact(h_star)).norm();
}

/// error_metric with F(h*) evaluated once.
class MapError {
 public:
  MapError(const StochasticVIProblem& problem, const Vec& h_star)
      : map_(problem.exact_map), f_star_((detail::require_exact(problem), problem.exact(h_star))) {}
  double operator()(const Vec& h) const { return (map_(h) - f_star_).norm(); }
  const Vec& f_star() const { return f_star_; }

 private:
  CostMap map_;
  Vec f_star_;
};

}  // namespace cvarvi
