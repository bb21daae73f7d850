#include "cvarvi/analysis.hpp"
#include "cvarvi/games.hpp"
#include "cvarvi/presets.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace cvarvi;

namespace {

const Vec kToyStar = (Vec(2) << 1.5125 / 3.0, 1.0 - 1.5125 / 3.0).finished();
constexpr double kToyCost = 2.0 - 1.5125 / 3.0;  // common cost at the equilibrium

Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }

std::string sioux_falls_text() {
  std::ifstream in(std::string(CVARVI_DATA_DIR) + "/SiouxFalls_net.tntp");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// min ||E x - f|| over x >= 0 by enumerating supports (small n only).
Vec nnls_by_supports(const Mat& E, const Vec& f) {
  const int n = static_cast<int>(E.cols());
  Vec best = Vec::Zero(n);
  double best_r = f.norm();
  for (int mask = 1; mask < (1 << n); ++mask) {
    std::vector<int> idx;
    for (int i = 0; i < n; ++i) {
      if (mask & (1 << i)) idx.push_back(i);
    }
    Mat sub(E.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) sub.col(static_cast<Eigen::Index>(j)) = E.col(idx[j]);
    const Vec z = sub.completeOrthogonalDecomposition().solve(f);
    if (z.minCoeff() < 0.0) continue;
    Vec x = Vec::Zero(n);
    for (std::size_t j = 0; j < idx.size(); ++j) x[idx[j]] = z[static_cast<Eigen::Index>(j)];
    const double r = (E * x - f).norm();
    if (r < best_r - 1e-13) {
      best_r = r;
      best = x;
    }
  }
  return best;
}

StochasticVIProblem constant_map_problem(const Vec& c) {
  auto prob = make_toy1();
  prob.exact_map = [c](const Vec&) { return c; };
  return prob;
}

}  // namespace

TEST(KktResidual, Toy1AtSolution) {
  const auto prob = make_toy1();
  const KktPoint pt{kToyStar, Vec::Zero(2), Vec::Constant(1, -kToyCost)};
  const auto r = kkt_residual(pt, prob);
  EXPECT_LE(r.max(), 1e-5);
  EXPECT_LE(r.stationarity, 1e-12);
}

TEST(KktResidual, NegativeMultiplierShowsInDualFeasibility) {
  const auto prob = make_toy1();
  const KktPoint pt{kToyStar, v2(-0.3, 0.0), Vec::Constant(1, -kToyCost)};
  EXPECT_DOUBLE_EQ(kkt_residual(pt, prob).dual_feas, 0.3);
}

TEST(KktResidual, EqualityViolation) {
  const auto prob = make_toy1();
  const KktPoint pt{kToyStar + v2(0.01, 0.0), Vec::Zero(2), Vec::Constant(1, -kToyCost)};
  EXPECT_NEAR(kkt_residual(pt, prob).primal_eq, 0.01, 1e-15);
}

TEST(KktResidual, ComponentsNonnegativeAndErrors) {
  const auto prob = make_toy1();
  const KktPoint pt{v2(-0.2, 1.2), v2(0.5, 0.0), Vec::Constant(1, 3.0)};
  const auto r = kkt_residual(pt, prob);
  for (double c : {r.stationarity, r.primal_eq, r.primal_ineq, r.dual_feas, r.complementarity}) EXPECT_GE(c, 0.0);
  EXPECT_NEAR(r.primal_ineq, 0.2, 1e-15);
  EXPECT_NEAR(r.complementarity, 0.1, 1e-15);
  auto no_map = prob;
  no_map.exact_map = nullptr;
  EXPECT_THROW(kkt_residual(pt, no_map), std::invalid_argument);
  EXPECT_THROW(kkt_residual(KktPoint{kToyStar, Vec::Zero(3), Vec::Zero(1)}, prob), std::invalid_argument);
}

TEST(NnlsProperty, MatchesSupportEnumeration) {
  const RandomStream rng(77, 0);
  for (std::uint64_t t = 0; t < 200; ++t) {
    const auto r = rng.child(t);
    const Eigen::Index m = 2 + static_cast<Eigen::Index>(r.bits(0, 0) % 6);
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(r.bits(0, 1) % 5);
    Mat E(m, n);
    Vec f(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      f[i] = r.uniform(-1, 1, 1, static_cast<std::uint64_t>(i));
      for (Eigen::Index j = 0; j < n; ++j) E(i, j) = r.uniform(-1, 1, 2, static_cast<std::uint64_t>(i * n + j));
    }
    const Vec x = nnls(E, f);
    EXPECT_GE(x.minCoeff(), 0.0);
    EXPECT_NEAR((E * x - f).norm(), (E * nnls_by_supports(E, f) - f).norm(), 1e-10) << t;
  }
}

TEST(RecoverMultipliers, Toy1) {
  const auto prob = make_toy1();
  const auto pt = recover_multipliers(kToyStar, prob);
  EXPECT_LE(pt.lambda.norm(), 1e-12);
  EXPECT_NEAR(pt.mu[0], -kToyCost, 1e-12);
  EXPECT_LE(kkt_residual(pt, prob).max(), 1e-12);
}

TEST(RecoverMultipliers, BoundaryExampleHasPositiveMultiplier) {
  // Route 2 is so expensive that all flow uses route 1.
  Mat M = Mat::Identity(2, 2);
  const Vec q = v2(0.0, 5.0);
  const auto prob = build_additive_problem(M, q, {std::nullopt, std::nullopt},
                                           FeasibleSet::nonneg_orthant(Mat::Ones(1, 2), Vec::Ones(1)), RiskLevel(0.5));
  const auto pt = recover_multipliers(v2(1.0, 0.0), prob);
  // F = (1, 5): mu = -1, lambda_2 = 4.
  EXPECT_NEAR(pt.mu[0], -1.0, 1e-10);
  EXPECT_NEAR(pt.lambda[1], 4.0, 1e-10);
  EXPECT_NEAR(pt.lambda[0], 0.0, 1e-12);
  EXPECT_LE(kkt_residual(pt, prob).max(), 1e-10);
}

TEST(CheckCwe, Examples) {
  const std::vector<std::vector<Eigen::Index>> groups{{0, 1}};
  const auto ok = check_cwe(kToyStar, Vec::Constant(2, kToyCost), groups, 1e-6);
  EXPECT_TRUE(ok.pass);
  EXPECT_EQ(ok.max_violation, 0.0);

  const auto bad = check_cwe(v2(1.0, 0.0), make_toy1().exact(v2(1.0, 0.0)), groups, 1e-6);
  EXPECT_FALSE(bad.pass);
  EXPECT_NEAR(bad.max_violation, 1.4875, 1e-12);
  ASSERT_TRUE(bad.witness.has_value());
  EXPECT_EQ(bad.witness->group, 0u);
  EXPECT_EQ(bad.witness->used_path, 0);
  EXPECT_EQ(bad.witness->cheaper_path, 1);

  const auto single = check_cwe(v2(1.0, 2.0), v2(9.0, 0.0), {{0}, {1}}, 1e-6);
  EXPECT_TRUE(single.pass);
}

TEST(CheckCwe, UnusedExpensivePathIsFine) {
  const auto rep = check_cwe(v2(1.0, 0.0), v2(1.0, 3.0), {{0, 1}}, 1e-9);
  EXPECT_TRUE(rep.pass);
}

TEST(CheckCwe, BadGroupIndex) {
  try {
    check_cwe(v2(1.0, 0.0), v2(1.0, 3.0), {{0, 2}}, 1e-9);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "group index out of range");
  }
}

TEST(MonotonicityProbe, Toy1) {
  const auto prob = make_toy1();
  const auto rep = monotonicity_probe(prob, Vec::Zero(2), Vec::Ones(2), 1000, RandomStream(3, 0));
  EXPECT_EQ(rep.pairs_tested, 1000u);
  EXPECT_GE(rep.min_inner, 0.0);
  EXPECT_GE(rep.ratio_at_min, 1.0 - 1e-9);
  EXPECT_FALSE(rep.disproved());
  EXPECT_STREQ(MonotonicityReport::kind, "evidence, not proof");
}

TEST(MonotonicityProbe, DegeneratePairSkipped) {
  const auto prob = make_toy1();
  const std::vector<std::pair<Vec, Vec>> extra{{v2(0.3, 0.3), v2(0.3, 0.3)}};
  const auto rep = monotonicity_probe(prob.exact_map, Vec::Zero(2), Vec::Ones(2), 10, RandomStream(3, 0), extra);
  EXPECT_EQ(rep.degenerate_skipped, 1u);
  EXPECT_EQ(rep.pairs_tested, 10u);
  EXPECT_FALSE(rep.disproved());
}

TEST(MonotonicityProbe, AntiMonotoneMapDisproved) {
  const CostMap neg = [](const Vec& h) { return Vec(-h); };
  const auto rep = monotonicity_probe(neg, -Vec::Ones(3), Vec::Ones(3), 50, RandomStream(1, 1));
  EXPECT_LT(rep.min_inner, 0.0);
  EXPECT_TRUE(rep.disproved());
}

TEST(MonotonicityProbe, SiouxFallsEvidence) {
  const auto prob = make_sioux_falls_cvar(sioux_falls_text());
  const auto rep =
      monotonicity_probe(prob, Vec::Zero(prob.n), Vec::Constant(prob.n, 300.0), 200, RandomStream(4, 0));
  EXPECT_GE(rep.min_inner, 0.0);
}

TEST(ReferenceSolution, Toy1) {
  const auto prob = make_toy1();
  ReferenceOptions opt;
  opt.tol = 1e-8;
  const auto res = reference_solution(prob, opt);
  EXPECT_NEAR(res.h[0], 0.5041667, 1e-6);
  EXPECT_NEAR(res.h[1], 0.4958333, 1e-6);
  EXPECT_LE(res.residual, 1e-8);
}

TEST(ReferenceSolution, ZeroMapStopsImmediately) {
  const auto prob = constant_map_problem(Vec::Zero(2));
  const auto res = reference_solution(prob);
  EXPECT_EQ(res.iterations, 0u);
  EXPECT_EQ(res.residual, 0.0);
  EXPECT_LE(prob.feasible.violation(res.h), 1e-12);
}

TEST(ReferenceSolution, IterationCapIsAnError) {
  const auto prob = make_toy1();
  ReferenceOptions opt;
  opt.max_iter = 2;
  opt.start = v2(1.0, 0.0);
  try {
    reference_solution(prob, opt);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "oracle did not converge");
  }
}

TEST(ReferenceSolution, KktAndCweOnEveryPreset) {
  const double tol = 1e-8;
  const std::vector<StochasticVIProblem> presets{make_toy1(), make_nash2(), make_sioux_falls_cvar(sioux_falls_text())};
  for (const auto& prob : presets) {
    ReferenceOptions opt;
    opt.tol = tol;
    const auto res = reference_solution(prob, opt);
    const auto pt = recover_multipliers(res.h, prob);
    const auto r = kkt_residual(pt, prob);
    EXPECT_LE(r.max(), 10.0 * tol * (1.0 + prob.feasible.b().lpNorm<Eigen::Infinity>())) << prob.name;

    // LICQ: active inequality gradients and equality rows are independent.
    const Vec q = prob.feasible.ineq_values(res.h);
    const Mat D = prob.feasible.ineq_jacobian(res.h);
    std::vector<Eigen::Index> active;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      if (q[i] >= -1e-7 * (1.0 + res.h.lpNorm<Eigen::Infinity>())) active.push_back(i);
    }
    Mat G(static_cast<Eigen::Index>(active.size()) + prob.feasible.A().rows(), prob.n);
    for (std::size_t j = 0; j < active.size(); ++j) G.row(static_cast<Eigen::Index>(j)) = D.row(active[j]);
    G.bottomRows(prob.feasible.A().rows()) = prob.feasible.A();
    EXPECT_EQ(Eigen::FullPivLU<Mat>(G).rank(), G.rows()) << prob.name;

    if (!prob.od_groups.empty()) {
      const Vec F = prob.exact(res.h);
      EXPECT_TRUE(check_cwe(res.h, F, prob.od_groups, 1e-4 * (1.0 + F.lpNorm<Eigen::Infinity>())).pass) << prob.name;
    }
  }
}

TEST(ReferenceSolution, SiouxFallsLooseTolerance) {
  const auto prob = make_sioux_falls_cvar(sioux_falls_text());
  ReferenceOptions opt;
  opt.tol = 1e-6;
  const auto res = reference_solution(prob, opt);
  EXPECT_LE(kkt_residual(recover_multipliers(res.h, prob), prob).stationarity, 1e-4);
}

TEST(ReferenceSolution, DifferentStartsAgreeOnStrictlyMonotonePresets) {
  const double tol = 1e-8;
  for (const auto& prob : {make_toy1(), make_nash2()}) {
    ReferenceOptions a, b;
    a.tol = b.tol = tol;
    a.start = prob.feasible.anchor();
    b.start = project_feasible(Vec::Constant(2, 5.0) - Vec::LinSpaced(2, 0.0, 9.0), prob.feasible);
    const auto ha = reference_solution(prob, a).h, hb = reference_solution(prob, b).h;
    EXPECT_LE(error_metric(ha, hb, prob), 2.0 * tol) << prob.name;
    EXPECT_LE(error_metric(hb, ha, prob), 2.0 * tol) << prob.name;
  }
}

TEST(ErrorMetric, Examples) {
  const auto prob = make_toy1();
  EXPECT_EQ(error_metric(kToyStar, kToyStar, prob), 0.0);
  // F(1,0) = (2.4875, 1) and F(h*) = (1.4958333.., 1.4958333..).
  const double expected = std::hypot(2.4875 - kToyCost, 1.0 - kToyCost);
  EXPECT_NEAR(error_metric(v2(1.0, 0.0), kToyStar, prob), expected, 1e-12);
  EXPECT_NEAR(error_metric(v2(1.0, 0.0), kToyStar, prob), 1.108717, 1e-6);

  const auto flat = constant_map_problem(v2(3.0, -1.0));
  EXPECT_EQ(error_metric(v2(0.2, 0.8), v2(0.9, 0.1), flat), 0.0);

  auto no_map = prob;
  no_map.exact_map = nullptr;
  EXPECT_THROW(error_metric(kToyStar, kToyStar, no_map), std::invalid_argument);
}

TEST(ErrorMetric, CachedVariantAgrees) {
  const auto prob = make_toy1();
  const MapError err(prob, kToyStar);
  for (double t : {0.0, 0.25, 0.6, 1.0}) {
    const Vec h = v2(t, 1.0 - t);
    EXPECT_DOUBLE_EQ(err(h), error_metric(h, kToyStar, prob));
  }
}

TEST(NaturalResidual, ZeroOnlyAtSolution) {
  const auto prob = make_toy1();
  EXPECT_LE(natural_residual(kToyStar, prob.exact(kToyStar), prob.feasible), 1e-12);
  EXPECT_GT(natural_residual(v2(1.0, 0.0), prob.exact(v2(1.0, 0.0)), prob.feasible), 0.1);
}
