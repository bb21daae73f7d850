#include "cvarvi/algorithms.hpp"
#include "cvarvi/analysis.hpp"
#include "cvarvi/games.hpp"
#include "cvarvi/presets.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace cvarvi;

namespace {

// Equal-cost solve on TOY1: 2 h1 + 0.4875 = (1 - h1) + 1.
const Vec kToyStar = (Vec(2) << 1.5125 / 3.0, 1.0 - 1.5125 / 3.0).finished();

AlgorithmConfig toy_config(std::size_t iters, bool exact, std::uint64_t seed = 1, std::size_t N = 100) {
  AlgorithmConfig cfg;
  cfg.step = StepSchedule{0.5, 1.0, 1.0};
  cfg.samples = [N](std::size_t) { return N; };
  cfg.max_iter = iters;
  cfg.use_exact_map = exact;
  cfg.seed = seed;
  return cfg;
}

double final_error(const RunTrace& t, const StochasticVIProblem& p) { return error_metric(t.last().h, kToyStar, p); }

std::string sioux_falls_text() {
  std::ifstream in(std::string(CVARVI_DATA_DIR) + "/SiouxFalls_net.tntp");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_trace(const RunTrace& a, const RunTrace& b) {
  if (a.records.size() != b.records.size() || a.status != b.status) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto &x = a.records[i], &y = b.records[i];
    if (x.k != y.k || x.h != y.h || x.gamma != y.gamma || x.samples != y.samples) return false;
    if (x.lambda.has_value() != y.lambda.has_value() || (x.lambda && *x.lambda != *y.lambda)) return false;
  }
  return true;
}

}  // namespace

TEST(GatedPlus, Examples) {
  EXPECT_EQ(gated_plus(-1.0, 0.5), -1.0);
  EXPECT_EQ(gated_plus(-1.0, 0.0), 0.0);
  EXPECT_EQ(gated_plus(3.0, -2.0), 3.0);
  const Vec v = gated_plus((Vec(3) << -1.0, -1.0, 2.0).finished(), (Vec(3) << 1.0, -1.0, -1.0).finished());
  EXPECT_EQ(v, (Vec(3) << -1.0, 0.0, 2.0).finished());
  EXPECT_THROW(gated_plus(Vec::Zero(2), Vec::Zero(3)), std::invalid_argument);
}

TEST(StepSchedule, Formula) {
  const StepSchedule s{100.0, 100.0, 1.0, 0.5};
  EXPECT_DOUBLE_EQ(s(0), 0.5);
  EXPECT_DOUBLE_EQ(s(100), 0.5);
  EXPECT_DOUBLE_EQ(s(300), 0.25);
}

TEST(ValidateStepSchedule, ParametricFamily) {
  using V = StepValidation::Verdict;
  EXPECT_EQ(validate_step_schedule(StepSchedule{100, 100, 1.0}, 1000).verdict, V::valid);
  EXPECT_EQ(validate_step_schedule(StepSchedule{1, 1, 2.0}, 1000).verdict, V::invalid);
  EXPECT_EQ(validate_step_schedule(StepSchedule{1, 1, 0.5}, 1000).verdict, V::invalid);
  EXPECT_EQ(validate_step_schedule(StepSchedule{1, 1, 0.75}, 1000).verdict, V::valid);
  EXPECT_THROW(validate_step_schedule(StepSchedule{-1, 1, 1}, 10), std::invalid_argument);
}

TEST(ValidateStepSchedule, OpaqueScheduleGetsDiagnostics) {
  const auto v = validate_step_schedule([](std::size_t k) { return 1.0 / (1.0 + static_cast<double>(k)); }, 9);
  EXPECT_EQ(v.verdict, StepValidation::Verdict::undecided);
  double s = 0.0;
  for (int k = 0; k <= 9; ++k) s += 1.0 / (1.0 + k);
  EXPECT_NEAR(v.partial_sum, s, 1e-14);
  EXPECT_FALSE(v.message.empty());
  EXPECT_THROW(validate_step_schedule([](std::size_t k) { return k == 3 ? 0.0 : 1.0; }, 9), std::invalid_argument);
}

TEST(RunProjected, Toy1ZeroNoise) {
  const auto prob = make_toy1();
  const auto t = run_projected(prob, toy_config(500, true), prob.initial_point);
  EXPECT_EQ(t.status, TerminalStatus::completed);
  EXPECT_EQ(t.iterations, 500u);
  EXPECT_LE(final_error(t, prob), 1e-3);
}

TEST(RunProjected, Toy1Stochastic) {
  const auto prob = make_toy1();
  const auto t = run_projected(prob, toy_config(2000, false, 7), prob.initial_point);
  EXPECT_LE(final_error(t, prob), 0.05);
}

TEST(RunProjected, FixedPointAtSolution) {
  const auto prob = make_toy1();
  const auto t = run_projected(prob, toy_config(200, true), kToyStar);
  for (const auto& r : t.records) EXPECT_LE((r.h - kToyStar).norm(), 1e-6) << r.k;
}

TEST(RunProjected, ZeroNoiseErrorNonincreasingAfterTenIterations) {
  const auto prob = make_toy1();
  auto cfg = toy_config(500, true);
  const MapError err(prob, kToyStar);
  cfg.error = [&err](const Vec& h) { return err(h); };
  const auto t = run_projected(prob, cfg, (Vec(2) << 1.0, 0.0).finished());
  for (std::size_t i = 11; i < t.records.size(); ++i) {
    EXPECT_LE(*t.records[i].map_error, *t.records[i - 1].map_error + 1e-15) << i;
  }
}

TEST(RunProjected, InfeasibleStartRejected) {
  const auto prob = make_toy1();
  EXPECT_THROW(run_projected(prob, toy_config(10, true), Vec::Constant(2, 0.7)), std::invalid_argument);
}

TEST(RunSubspace, Toy1ZeroNoiseFixedPenalty) {
  const auto prob = make_toy1();
  auto cfg = toy_config(5000, true);
  cfg.penalty = [](std::size_t) { return 200.0; };
  const auto t = run_subspace(prob, cfg, prob.initial_point);
  EXPECT_EQ(t.status, TerminalStatus::completed);
  EXPECT_LE(final_error(t, prob), 1e-2);
}

TEST(RunSubspace, Preconditions) {
  const auto prob = make_toy1();
  auto cfg = toy_config(10, true);
  cfg.penalty = [](std::size_t) { return 1.0; };
  try {
    run_subspace(prob, cfg, Vec::Constant(2, 0.7));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "initial point violates A h = b");
  }
  cfg.penalty = nullptr;
  EXPECT_THROW(run_subspace(prob, cfg, prob.initial_point), std::invalid_argument);
}

TEST(RunSubspace, RampKeepsEqualities) {
  const auto prob = make_toy1();
  auto cfg = toy_config(3000, false, 3, 25);
  const StepSchedule step{0.5, 1.0, 1.0};
  cfg.penalty = [step](std::size_t k) { return std::min(1.0 / step(k), 200.0); };
  const auto t = run_subspace(prob, cfg, (Vec(2) << 1.0, 0.0).finished());
  for (const auto& r : t.records) {
    EXPECT_LE((prob.feasible.A() * r.h - prob.feasible.b()).lpNorm<Eigen::Infinity>(), 1e-6) << r.k;
  }
}

TEST(RunSubspace, SafeguardBoxCountsClamps) {
  const auto prob = make_toy1();
  auto cfg = toy_config(50, true);
  cfg.step = StepSchedule{5.0, 1.0, 1.0};
  cfg.penalty = [](std::size_t) { return 200.0; };
  cfg.safeguard_box = Box{Vec::Constant(2, -0.5), Vec::Constant(2, 1.5)};
  const auto t = run_subspace(prob, cfg, (Vec(2) << 1.0, 0.0).finished());
  EXPECT_GT(t.clamp_events, 0u);
  for (const auto& r : t.records) {
    EXPECT_GE(r.h.minCoeff(), -0.5);
    EXPECT_LE(r.h.maxCoeff(), 1.5);
  }
  cfg.safeguard_box = Box{Vec::Constant(2, 0.1), Vec::Constant(2, 1.5)};
  EXPECT_THROW(run_subspace(prob, cfg, prob.initial_point), std::invalid_argument);
}

TEST(RunMultiplier, Toy1ZeroNoise) {
  const auto prob = make_toy1();
  const auto t = run_multiplier(prob, toy_config(10000, true), prob.initial_point, Vec::Zero(2));
  EXPECT_EQ(t.status, TerminalStatus::completed);
  EXPECT_LE(final_error(t, prob), 1e-2);
}

TEST(RunMultiplier, Preconditions) {
  const auto prob = make_toy1();
  try {
    run_multiplier(prob, toy_config(10, true), prob.initial_point, (Vec(2) << 0.0, -1.0).finished());
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "initial multipliers must be nonnegative");
  }
  EXPECT_THROW(run_multiplier(prob, toy_config(10, true), Vec::Constant(2, 0.7), Vec::Zero(2)), std::invalid_argument);
  EXPECT_THROW(run_multiplier(prob, toy_config(10, true), prob.initial_point, Vec::Zero(3)), std::invalid_argument);
}

TEST(RunMultiplier, NonaffineConstraintsNeedOverride) {
  ConvexConstraint disk{[](const Vec& h) { return h.squaredNorm() - 4.0; }, [](const Vec& h) { return Vec(2.0 * h); },
                        false};
  auto set = FeasibleSet::general(Mat::Ones(1, 2), Vec::Ones(1), {disk});
  const auto prob = build_additive_problem(Mat::Identity(2, 2), Vec::Zero(2), {std::nullopt, std::nullopt}, set,
                                           RiskLevel(0.5));
  const Vec h0 = Vec::Constant(2, 0.5);
  try {
    run_multiplier(prob, toy_config(10, true), h0, Vec::Zero(1));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "affine q required");
  }
  auto cfg = toy_config(10, true);
  cfg.allow_nonaffine = true;
  EXPECT_EQ(run_multiplier(prob, cfg, h0, Vec::Zero(1)).status, TerminalStatus::completed);
}

TEST(RunMultiplier, StationaryAtKktPoint) {
  const auto prob = make_toy1();
  const auto kkt = recover_multipliers(kToyStar, prob);
  const auto t = run_multiplier(prob, toy_config(100, true), kToyStar, kkt.lambda);
  for (const auto& r : t.records) {
    EXPECT_LE((r.h - kToyStar).norm(), 1e-4) << r.k;
    EXPECT_LE((*r.lambda - kkt.lambda).norm(), 1e-4) << r.k;
  }
}

TEST(RunMultiplier, MultiplierBoundIsApplied) {
  const auto prob = make_toy1();
  auto cfg = toy_config(200, false, 2, 10);
  cfg.step = StepSchedule{5.0, 1.0, 1.0};
  cfg.multiplier_bound = 0.05;
  const auto t = run_multiplier(prob, cfg, (Vec(2) << 1.0, 0.0).finished(), Vec::Zero(2));
  for (const auto& r : t.records) EXPECT_LE(r.lambda->maxCoeff(), 0.05);
}

TEST(RunTraceLayout, RecordsStartAtZeroAndIncrease) {
  const auto prob = make_toy1();
  const auto t = run_projected(prob, toy_config(30, false), prob.initial_point);
  ASSERT_EQ(t.records.size(), 31u);
  EXPECT_EQ(t.records.front().k, 0u);
  EXPECT_EQ(t.records.front().h, prob.initial_point);
  for (std::size_t i = 1; i < t.records.size(); ++i) EXPECT_GT(t.records[i].k, t.records[i - 1].k);
  for (const auto& r : t.records) EXPECT_FALSE(r.lambda.has_value());
}

TEST(RunTraceLayout, ThinningAboveTenThousandIterations) {
  const auto prob = make_toy1();
  const auto t = run_projected(prob, toy_config(25001, true), prob.initial_point);
  // stride ceil(25001 / 10^4) = 3, plus the last iterate.
  EXPECT_EQ(t.records[1].k, 3u);
  EXPECT_EQ(t.records.back().k, 25001u);
  EXPECT_EQ(t.records.size(), 25001u / 3 + 2);
}

TEST(RunTraceLayout, DivergenceIsReported) {
  auto set = FeasibleSet::general(Mat::Zero(0, 2), Vec::Zero(0), {});
  const auto prob = build_additive_problem(-Mat::Identity(2, 2), Vec::Zero(2), {std::nullopt, std::nullopt}, set,
                                           RiskLevel(0.5));
  auto cfg = toy_config(1000, true);
  cfg.step = StepSchedule{1.0, 1.0, 0.0};
  const auto t = run_projected(prob, cfg, Vec::Ones(2));
  EXPECT_EQ(t.status, TerminalStatus::diverged);
  EXPECT_LT(t.iterations, 1000u);
  EXPECT_GT(t.last().h.norm(), 1e8);
}

TEST(RunTraceLayout, SamplerFailureIsAnErrorStatus) {
  auto prob = make_toy1();
  prob.sampler = [](const Vec&, std::size_t, const RandomStream&) -> SampleBatch {
    throw std::runtime_error("sampler broke");
  };
  const auto t = run_projected(prob, toy_config(10, false), prob.initial_point);
  EXPECT_EQ(t.status, TerminalStatus::error);
  EXPECT_EQ(t.message, "sampler broke");
}

TEST(Determinism, IdenticalInputsGiveIdenticalTraces) {
  const auto prob = make_toy1();
  auto cfg = toy_config(300, false, 42, 30);
  cfg.penalty = [](std::size_t) { return 50.0; };
  EXPECT_TRUE(same_trace(run_projected(prob, cfg, prob.initial_point), run_projected(prob, cfg, prob.initial_point)));
  EXPECT_TRUE(same_trace(run_subspace(prob, cfg, prob.initial_point), run_subspace(prob, cfg, prob.initial_point)));
  EXPECT_TRUE(same_trace(run_multiplier(prob, cfg, prob.initial_point, Vec::Zero(2)),
                         run_multiplier(prob, cfg, prob.initial_point, Vec::Zero(2))));
  auto other = cfg;
  other.seed = 43;
  EXPECT_FALSE(same_trace(run_projected(prob, cfg, prob.initial_point), run_projected(prob, other, prob.initial_point)));
}

TEST(Determinism, ChangingOneSampleSizeLeavesOtherIterationsDraws) {
  const auto prob = make_toy1();
  const RandomStream a(5, 10), b(5, 11);
  const auto small = prob.sampler(prob.initial_point, 10, a);
  const auto large = prob.sampler(prob.initial_point, 20, a);
  EXPECT_EQ(small, large.topRows(10));
  EXPECT_NE(small, prob.sampler(prob.initial_point, 10, b));
}

TEST(SampleSizeEffect, LargerBatchesGiveSmallerTerminalError) {
  const auto prob = make_toy1();
  double e25 = 0.0, e100 = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    e25 += final_error(run_projected(prob, toy_config(2000, false, seed, 25), prob.initial_point), prob);
    e100 += final_error(run_projected(prob, toy_config(2000, false, seed, 100), prob.initial_point), prob);
  }
  EXPECT_LE(e100, e25);
}

// Feasibility invariants over stochastic runs on both TOY1 and Sioux Falls.
TEST(AlgorithmInvariants, FeasibilityAlongStochasticRuns) {
  const auto sf = make_sioux_falls_cvar(sioux_falls_text());
  const auto toy = make_toy1();
  for (const auto* prob : {&toy, &sf}) {
    const bool routing = prob->name == "sioux_falls_cvar";
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto cfg = toy_config(routing ? 400 : 1000, false, seed, 25);
      if (routing) cfg.step = StepSchedule{100.0, 100.0, 1.0, 0.5};
      const StepSchedule step = routing ? StepSchedule{200.0, 200.0, 1.0} : StepSchedule{0.5, 1.0, 1.0};
      cfg.penalty = [step](std::size_t k) { return std::min(1.0 / step(k), 200.0); };
      cfg.multiplier_step_scale = [](std::size_t k) { return k < 100 ? 2.0 : 0.5; };
      const double scale = 1.0 + prob->feasible.b().lpNorm<Eigen::Infinity>();

      for (const auto& r : run_projected(*prob, cfg, prob->initial_point).records) {
        ASSERT_LE(prob->feasible.violation(r.h), 1e-8 * scale) << prob->name << " k=" << r.k;
      }
      auto sub_cfg = cfg;
      sub_cfg.step = step;
      for (const auto& r : run_subspace(*prob, sub_cfg, prob->initial_point).records) {
        ASSERT_LE((prob->feasible.A() * r.h - prob->feasible.b()).lpNorm<Eigen::Infinity>(), 1e-6 * scale);
      }
      const auto mt = run_multiplier(*prob, cfg, prob->initial_point, Vec::Zero(prob->n));
      for (const auto& r : mt.records) {
        ASSERT_TRUE(r.lambda.has_value());
        ASSERT_GE(r.lambda->minCoeff(), 0.0);
        ASSERT_LE((prob->feasible.A() * r.h - prob->feasible.b()).lpNorm<Eigen::Infinity>(), 1e-6 * scale);
      }
    }
  }
}
