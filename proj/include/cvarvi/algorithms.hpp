#pragma once

#include "cvarvi/geometry.hpp"
#include "cvarvi/problem.hpp"
#include "cvarvi/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvarvi {

/// [x]^+_y: x when y > 0, max(x, 0) otherwise.
constexpr double gated_plus(double x, double y) noexcept { return y > 0.0 ? x : std::max(x, 0.0); }

inline Vec gated_plus(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) throw std::invalid_argument("dimension mismatch");
  Vec out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = gated_plus(x[i], y[i]);
  return out;
}

/// gamma^k = min(scale / (offset + k)^power, cap).
struct StepSchedule {
  double scale = 1.0;
  double offset = 1.0;
  double power = 1.0;
  double cap = std::numeric_limits<double>::infinity();

  double operator()(std::size_t k) const {
    return std::min(scale / std::pow(offset + static_cast<double>(k), power), cap);
  }
};

struct StepValidation {
  enum class Verdict { valid, invalid, undecided };
  Verdict verdict = Verdict::undecided;
  std::string message;
  double partial_sum = 0.0;         ///< sum of gamma^k over the horizon
  double partial_sum_squares = 0.0; ///< sum of (gamma^k)^2 over the horizon
};

namespace detail {

inline StepValidation partial_sums(const std::function<double(std::size_t)>& schedule, std::size_t horizon) {
  StepValidation v;
  for (std::size_t k = 0; k <= horizon; ++k) {
    const double g = schedule(k);
    if (!(g > 0.0) || !std::isfinite(g)) {
      throw std::invalid_argument("nonpositive step at k = " + std::to_string(k));
    }
    v.partial_sum += g;
    v.partial_sum_squares += g * g;
  }
  return v;
}

}  // namespace detail

/**
 * Checks sum gamma^k = inf and sum (gamma^k)^2 < inf. The parametric family
 * is decided exactly (valid iff power in (1/2, 1]); for any other schedule
 * only partial sums over the horizon can be reported.
 */
inline StepValidation validate_step_schedule(const StepSchedule& schedule, std::size_t horizon) {
  if (!(schedule.scale > 0.0) || !(schedule.offset > 0.0) || !(schedule.cap > 0.0)) {
    throw std::invalid_argument("nonpositive step");
  }
  StepValidation v = detail::partial_sums(schedule, horizon);
  if (schedule.power > 0.5 && schedule.power <= 1.0) {
    v.verdict = StepValidation::Verdict::valid;
    v.message = "power in (1/2, 1]";
  } else if (schedule.power > 1.0) {
    v.verdict = StepValidation::Verdict::invalid;
    v.message = "sum of steps is finite (power > 1)";
  } else {
    v.verdict = StepValidation::Verdict::invalid;
    v.message = "sum of squared steps diverges (power <= 1/2)";
  }
  return v;
}

inline StepValidation validate_step_schedule(const std::function<double(std::size_t)>& schedule, std::size_t horizon) {
  StepValidation v = detail::partial_sums(schedule, horizon);
  std::ostringstream os;
  os << "opaque schedule: cannot decide from finitely many terms; over k <= " << horizon
     << " sum gamma = " << v.partial_sum << ", sum gamma^2 = " << v.partial_sum_squares;
  v.message = os.str();
  return v;
}

struct Box {
  Vec lo;
  Vec hi;
};

struct AlgorithmConfig {
  std::function<double(std::size_t)> step = StepSchedule{};
  std::function<std::size_t(std::size_t)> samples = [](std::size_t) -> std::size_t { return 100; };
  /// Penalty c^k (subspace-constrained algorithm only).
  std::function<double(std::size_t)> penalty;
  /// Dual step scaling rho^k; the multiplier step is rho^k gamma^k.
  std::function<double(std::size_t)> multiplier_step_scale = [](std::size_t) { return 1.0; };
  std::size_t max_iter = 1000;
  std::uint64_t seed = 0;
  /// Optional hyper-rectangle the primal iterates are clamped to.
  std::optional<Box> safeguard_box;
  /// Optional upper bound on the multipliers (lambda clamped to [0, bound]).
  std::optional<double> multiplier_bound;
  double projection_tol = 1e-9;
  /// Zero-noise mode: use the exact map instead of sampled estimates.
  bool use_exact_map = false;
  /// Record every k-th iterate; 0 picks 1 up to 10^4 iterations, else ceil(max_iter / 10^4).
  std::size_t record_every = 0;
  /// Permit the multiplier-driven algorithm on non-affine inequalities.
  bool allow_nonaffine = false;
  /// Optional error metric evaluated at recorded iterates.
  std::function<double(const Vec&)> error;
};

struct TraceRecord {
  std::size_t k = 0;
  Vec h;
  std::optional<Vec> lambda;
  double gamma = 0.0;
  std::size_t samples = 0;
  std::optional<double> map_error;
  double wall_clock_ms = 0.0;
};

enum class TerminalStatus { completed, diverged, error };

inline const char* to_string(TerminalStatus s) {
  switch (s) {
    case TerminalStatus::completed: return "completed";
    case TerminalStatus::diverged: return "diverged";
    case TerminalStatus::error: return "error";
  }
  return "?";
}

struct RunTrace {
  std::vector<TraceRecord> records;
  TerminalStatus status = TerminalStatus::completed;
  std::string message;
  std::size_t iterations = 0;
  std::size_t clamp_events = 0;
  std::size_t projection_calls = 0;

  const TraceRecord& last() const { return records.back(); }
};

namespace detail {

inline std::size_t record_stride(const AlgorithmConfig& cfg) {
  if (cfg.record_every > 0) return cfg.record_every;
  if (cfg.max_iter <= 10000) return 1;
  return (cfg.max_iter + 9999) / 10000;
}

inline void check_config(const AlgorithmConfig& cfg) {
  if (!cfg.step) throw std::invalid_argument("step schedule missing");
  if (!cfg.samples) throw std::invalid_argument("sample schedule missing");
}

// Shared driver. `advance` maps (k, h, lambda, F-estimate) to the next state
// and may throw; it returns false when it cannot continue.
class Runner {
 public:
  Runner(const StochasticVIProblem& problem, const AlgorithmConfig& cfg)
      : problem_(problem), cfg_(cfg), stride_(record_stride(cfg)), start_(std::chrono::steady_clock::now()) {
    check_config(cfg);
  }

  Vec estimate(std::size_t k, const Vec& h, std::size_t count) const {
    if (cfg_.use_exact_map) return problem_.exact(h);
    return problem_.estimate(h, count, RandomStream(cfg_.seed, k));
  }

  void record(RunTrace& trace, std::size_t k, const Vec& h, const std::optional<Vec>& lambda, bool force = false) {
    if (!force && k % stride_ != 0 && k != cfg_.max_iter) return;
    TraceRecord r;
    r.k = k;
    r.h = h;
    r.lambda = lambda;
    r.gamma = cfg_.step(k);
    r.samples = cfg_.samples(k);
    r.wall_clock_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    if (cfg_.error) r.map_error = cfg_.error(h);
    trace.records.push_back(std::move(r));
  }

  bool diverged(const Vec& h) const { return !h.allFinite() || h.norm() > 1e8; }

  Vec clamp(RunTrace& trace, const Vec& h) const {
    if (!cfg_.safeguard_box) return h;
    const Vec c = h.cwiseMax(cfg_.safeguard_box->lo).cwiseMin(cfg_.safeguard_box->hi);
    if (c != h) ++trace.clamp_events;
    return c;
  }

  const AlgorithmConfig& cfg() const { return cfg_; }

 private:
  const StochasticVIProblem& problem_;
  const AlgorithmConfig& cfg_;
  std::size_t stride_;
  std::chrono::steady_clock::time_point start_;
};

inline void check_box_contains(const AlgorithmConfig& cfg, const FeasibleSet& set) {
  if (!cfg.safeguard_box) return;
  const auto& box = *cfg.safeguard_box;
  if (box.lo.size() != set.dim() || box.hi.size() != set.dim()) throw std::invalid_argument("safeguard box dimension");
  const Vec& a = set.anchor();
  if ((a.array() < box.lo.array()).any() || (a.array() > box.hi.array()).any()) {
    throw std::invalid_argument("safeguard box does not contain the feasible set");
  }
  if (set.structure() == InequalityStructure::box) {
    if ((set.lower().array() < box.lo.array()).any() || (set.upper().array() > box.hi.array()).any()) {
      throw std::invalid_argument("safeguard box does not contain the feasible set");
    }
  }
  for (const auto& g : set.simplex_groups()) {
    for (Eigen::Index i : g.members) {
      if (box.lo[i] > 0.0 || box.hi[i] < g.total) {
        throw std::invalid_argument("safeguard box does not contain the feasible set");
      }
    }
  }
}

inline void check_affine_start(const Vec& h0, const FeasibleSet& set) {
  if (h0.size() != set.dim()) throw std::invalid_argument("dimension mismatch");
  if (set.A().rows() > 0 && (set.A() * h0 - set.b()).lpNorm<Eigen::Infinity>() > 1e-8) {
    throw std::invalid_argument("initial point violates A h = b");
  }
}

}  // namespace detail

/**
 * Projected algorithm: h^{k+1} = Pi_H(h^k - gamma^k Fhat^{N_k}(h^k)).
 *
 * Fhat is the column-wise empirical CVaR of a fresh batch drawn from the
 * stream (seed, k).
 */
inline RunTrace run_projected(const StochasticVIProblem& problem, const AlgorithmConfig& cfg, const Vec& h0) {
  detail::Runner run(problem, cfg);
  const auto& set = problem.feasible;
  if (h0.size() != set.dim()) throw std::invalid_argument("dimension mismatch");
  if (set.violation(h0) > std::max(cfg.projection_tol, 1e-12 * (1.0 + h0.lpNorm<Eigen::Infinity>()))) {
    throw std::invalid_argument("initial point is not in H");
  }
  RunTrace trace;
  Vec h = h0;
  run.record(trace, 0, h, std::nullopt, true);
  for (std::size_t k = 0; k < cfg.max_iter; ++k) {
    try {
      const Vec F = run.estimate(k, h, cfg.samples(k));
      h = project_feasible(h - cfg.step(k) * F, set, cfg.projection_tol);
      ++trace.projection_calls;
    } catch (const std::exception& e) {
      trace.status = TerminalStatus::error;
      trace.message = e.what();
      trace.iterations = k;
      return trace;
    }
    trace.iterations = k + 1;
    if (run.diverged(h)) {
      trace.status = TerminalStatus::diverged;
      run.record(trace, k + 1, h, std::nullopt, true);
      return trace;
    }
    run.record(trace, k + 1, h, std::nullopt);
  }
  return trace;
}

/**
 * Subspace-constrained algorithm:
 *   h^{k+1} = h^k - gamma^k L (Fhat(h^k) + c^k (h^k - Pi_ineq(h^k))),
 * L the projector onto null(A), so A h^k = b is kept by construction.
 */
inline RunTrace run_subspace(const StochasticVIProblem& problem, const AlgorithmConfig& cfg, const Vec& h0) {
  detail::Runner run(problem, cfg);
  const auto& set = problem.feasible;
  detail::check_affine_start(h0, set);
  if (!cfg.penalty) throw std::invalid_argument("penalty schedule missing");
  detail::check_box_contains(cfg, set);
  const SubspaceProjector L = build_subspace_projector(set.A());
  RunTrace trace;
  Vec h = h0;
  run.record(trace, 0, h, std::nullopt, true);
  for (std::size_t k = 0; k < cfg.max_iter; ++k) {
    try {
      const Vec F = run.estimate(k, h, cfg.samples(k));
      const Vec pull = h - project_ineq(h, set);
      ++trace.projection_calls;
      h = h - cfg.step(k) * L.apply(F + cfg.penalty(k) * pull);
      h = run.clamp(trace, h);
    } catch (const std::exception& e) {
      trace.status = TerminalStatus::error;
      trace.message = e.what();
      trace.iterations = k;
      return trace;
    }
    trace.iterations = k + 1;
    if (run.diverged(h)) {
      trace.status = TerminalStatus::diverged;
      run.record(trace, k + 1, h, std::nullopt, true);
      return trace;
    }
    run.record(trace, k + 1, h, std::nullopt);
  }
  return trace;
}

/**
 * Multiplier-driven algorithm:
 *   h^{k+1}      = h^k - gamma^k L (Fhat(h^k) + Dq(h^k)^T lambda^k)
 *   lambda^{k+1} = [lambda^k + rho^k gamma^k q(h^k)]^+
 */
inline RunTrace run_multiplier(const StochasticVIProblem& problem, const AlgorithmConfig& cfg, const Vec& h0,
                               const Vec& lambda0) {
  detail::Runner run(problem, cfg);
  const auto& set = problem.feasible;
  detail::check_affine_start(h0, set);
  if (lambda0.size() != set.ineq_count()) throw std::invalid_argument("multiplier dimension mismatch");
  if ((lambda0.array() < 0.0).any()) throw std::invalid_argument("initial multipliers must be nonnegative");
  if (!set.all_affine() && !cfg.allow_nonaffine) throw std::invalid_argument("affine q required");
  if (!cfg.multiplier_step_scale) throw std::invalid_argument("multiplier step scaling missing");
  detail::check_box_contains(cfg, set);
  const SubspaceProjector L = build_subspace_projector(set.A());
  RunTrace trace;
  Vec h = h0;
  Vec lambda = lambda0;
  run.record(trace, 0, h, lambda, true);
  for (std::size_t k = 0; k < cfg.max_iter; ++k) {
    try {
      const Vec F = run.estimate(k, h, cfg.samples(k));
      const double gamma = cfg.step(k);
      const Vec q = set.ineq_values(h);
      const Vec h_next = h - gamma * L.apply(F + set.ineq_jacobian_transpose_times(h, lambda));
      lambda = (lambda + cfg.multiplier_step_scale(k) * gamma * q).cwiseMax(0.0);
      if (cfg.multiplier_bound) lambda = lambda.cwiseMin(*cfg.multiplier_bound);
      h = run.clamp(trace, h_next);
    } catch (const std::exception& e) {
      trace.status = TerminalStatus::error;
      trace.message = e.what();
      trace.iterations = k;
      return trace;
    }
    trace.iterations = k + 1;
    if (run.diverged(h) || !lambda.allFinite()) {
      trace.status = TerminalStatus::diverged;
      run.record(trace, k + 1, h, lambda, true);
      return trace;
    }
    run.record(trace, k + 1, h, lambda);
  }
  return trace;
}

}  // namespace cvarvi
