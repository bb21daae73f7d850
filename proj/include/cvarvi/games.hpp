#pragma once

#include "cvarvi/problem.hpp"

#include <Eigen/Eigenvalues>

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace cvarvi {

/**
 * Additive-noise problem C_i(h, xi) = (M h + q)_i + xi_i with independent
 * xi_i ~ uniform(lo_i, hi_i) (or xi_i = 0 when no noise is given).
 *
 * Because the noise enters additively, F_i(h) = (M h + q)_i + CVaR[xi_i] exactly.
 */
inline StochasticVIProblem build_additive_problem(Mat M, Vec q, std::vector<std::optional<UniformNoise>> noise,
                                                  FeasibleSet feasible, RiskLevel level) {
  const Eigen::Index n = M.rows();
  if (M.cols() != n || q.size() != n || static_cast<Eigen::Index>(noise.size()) != n || feasible.dim() != n) {
    throw std::invalid_argument("dimension mismatch");
  }
  Vec shift = Vec::Zero(n);
  Vec lo = Vec::Zero(n), width = Vec::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (const auto& nz = noise[static_cast<std::size_t>(i)]) {
      shift[i] = exact_cvar_uniform(nz->lo, nz->hi, level);
      lo[i] = nz->lo;
      width[i] = nz->hi - nz->lo;
    }
  }
  Sampler sampler = [M, q, lo, width](const Vec& h, std::size_t count, const RandomStream& rng) {
    const Vec det = M * h + q;
    const auto N = static_cast<Eigen::Index>(count);
    SampleBatch out(N, det.size());
    for (Eigen::Index i = 0; i < det.size(); ++i) {
      for (Eigen::Index ev = 0; ev < N; ++ev) {
        const double xi = width[i] > 0.0 ? lo[i] + width[i] * rng.uniform01(static_cast<std::uint64_t>(i),
                                                                            static_cast<std::uint64_t>(ev))
                                         : lo[i];
        out(ev, i) = det[i] + xi;
      }
    }
    return out;
  };
  CostMap exact = [M, q, shift](const Vec& h) -> Vec { return M * h + q + shift; };
  Vec start = feasible.anchor();
  return StochasticVIProblem{
      .n = n,
      .sampler = std::move(sampler),
      .exact_map = std::move(exact),
      .feasible = std::move(feasible),
      .level = level,
      .name = "additive",
      .exact_map_note = "closed form: deterministic part plus CVaR of the additive uniform noise",
      .od_groups = {},
      .initial_point = std::move(start),
      .metadata = {},
  };
}

/**
 * Two parallel routes for one unit of demand: C_1 = 2 h_1 + xi with
 * xi ~ uniform(0, 0.5), C_2 = h_2 + 1. F(h) = (2 h_1 + CVaR[xi], h_2 + 1).
 */
inline StochasticVIProblem make_toy1(double alpha = 0.05) {
  Mat M(2, 2);
  M << 2.0, 0.0, 0.0, 1.0;
  Vec q(2);
  q << 0.0, 1.0;
  Mat A(1, 2);
  A << 1.0, 1.0;
  Vec b(1);
  b << 1.0;
  auto prob = build_additive_problem(M, q, {UniformNoise{0.0, 0.5}, std::nullopt},
                                     FeasibleSet::nonneg_orthant(A, b), RiskLevel(alpha));
  prob.name = "toy1";
  prob.od_groups = {{0, 1}};
  prob.initial_point = Vec::Constant(2, 0.5);
  return prob;
}

/**
 * CVaR Nash game with separable noise.
 *
 * Player i minimizes CVaR[f_i(x) g(xi) + fbar_i(x)] over the box [0, upper]^d,
 * with f_i affine and nondecreasing in x_i (gradient `risk_weight` block i,
 * nonnegative) and fbar_i quadratic with pseudo-gradient `coupling` x + `linear`.
 * Since g enters positively homogeneously,
 *   F(x) = CVaR[g] * risk_weight + coupling * x + linear.
 */
struct NashGameSpec {
  std::size_t players = 2;
  std::size_t dim = 1;  ///< strategy dimension per player
  Vec risk_weight;      ///< stacked grad_{x_i} f_i, all >= 0
  Mat coupling;         ///< stacked grad_{x_i} fbar_i = coupling * x + linear
  Vec linear;
  UniformNoise noise{0.0, 1.0};
  double upper = 1.0;
};

inline StochasticVIProblem build_nash_game(const NashGameSpec& spec, RiskLevel level) {
  const auto n = static_cast<Eigen::Index>(spec.players * spec.dim);
  if (spec.players != 2) throw std::invalid_argument("only two-player games are supported");
  if (spec.risk_weight.size() != n || spec.coupling.rows() != n || spec.coupling.cols() != n ||
      spec.linear.size() != n) {
    throw std::invalid_argument("dimension mismatch");
  }
  if ((spec.risk_weight.array() < 0.0).any()) {
    throw std::invalid_argument("risk weights must be nonnegative");
  }
  if (spec.noise.lo < 0.0 || spec.noise.hi < spec.noise.lo) {
    throw std::invalid_argument("noise g must be a nonnegative uniform");
  }
  if (!(spec.upper > 0.0)) throw std::invalid_argument("strategy box must be nondegenerate");
  const Mat sym = 0.5 * (spec.coupling + spec.coupling.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(sym, Eigen::EigenvaluesOnly);
  if (!(eig.eigenvalues().minCoeff() > 0.0)) throw std::invalid_argument("game not strictly monotone");

  const Vec w = spec.risk_weight;
  const Mat C = spec.coupling;
  const Vec r = spec.linear;
  const UniformNoise g = spec.noise;
  const double g_cvar = exact_cvar_uniform(g.lo, g.hi, level);

  Sampler sampler = [w, C, r, g](const Vec& x, std::size_t count, const RandomStream& rng) {
    const Vec det = C * x + r;
    const auto N = static_cast<Eigen::Index>(count);
    SampleBatch out(N, det.size());
    for (Eigen::Index ev = 0; ev < N; ++ev) {
      const double gv = g.lo + (g.hi - g.lo) * rng.uniform01(0, static_cast<std::uint64_t>(ev));
      out.row(ev) = (gv * w + det).transpose();
    }
    return out;
  };
  CostMap exact = [w, C, r, g_cvar](const Vec& x) -> Vec { return g_cvar * w + C * x + r; };

  auto feasible = FeasibleSet::box(Vec::Zero(n), Vec::Constant(n, spec.upper), Mat::Zero(0, n), Vec::Zero(0));
  return StochasticVIProblem{
      .n = n,
      .sampler = std::move(sampler),
      .exact_map = std::move(exact),
      .feasible = std::move(feasible),
      .level = level,
      .name = "nash",
      .exact_map_note = "closed form: CVaR[g] times the risk weights plus the deterministic pseudo-gradient",
      .od_groups = {},
      .initial_point = Vec::Constant(n, 0.5 * spec.upper),
      .metadata = {},
  };
}

/// f_i = x_i, fbar_i = x_i^2/2 + x_i x_{-i}/4, g ~ uniform(0,1), strategies in [0,1].
inline NashGameSpec nash2_spec() {
  NashGameSpec spec;
  spec.risk_weight = Vec::Ones(2);
  spec.coupling.resize(2, 2);
  spec.coupling << 1.0, 0.25, 0.25, 1.0;
  spec.linear = Vec::Zero(2);
  return spec;
}

}  // namespace cvarvi
