#pragma once

#include "cvarvi/cvar.hpp"
#include "cvarvi/geometry.hpp"
#include "cvarvi/random.hpp"

#include <cstddef>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cvarvi {

/// Draws `count` events of the cost vector C(h, xi); one row per event.
using Sampler = std::function<SampleBatch(const Vec& h, std::size_t count, const RandomStream& rng)>;
/// F(h) = componentwise CVaR of C(h, xi).
using CostMap = std::function<Vec(const Vec& h)>;

struct UniformNoise {
  double lo = 0.0;
  double hi = 0.0;
};

/**
 * VI(H, F) with F_i(h) = CVaR_alpha[C_i(h, xi)], accessed through samples.
 *
 * `exact_map` is optional; when present it is the reference F used by the
 * verifiers and error metrics, and `exact_map_note` says how it is computed.
 */
struct StochasticVIProblem {
  Eigen::Index n = 0;
  Sampler sampler;
  CostMap exact_map;
  FeasibleSet feasible;
  RiskLevel level;
  std::string name;
  std::string exact_map_note;
  /// Path groups per OD pair for Wardrop checks; empty for non-routing problems.
  std::vector<std::vector<Eigen::Index>> od_groups;
  /// Default starting point in H.
  Vec initial_point;
  std::map<std::string, std::string> metadata;

  bool has_exact_map() const { return static_cast<bool>(exact_map); }

  Vec exact(const Vec& h) const {
    if (!exact_map) throw std::logic_error("problem has no exact map");
    return exact_map(h);
  }

  /// Plug-in estimate of F(h) from one batch of shared events.
  Vec estimate(const Vec& h, std::size_t count, const RandomStream& rng) const {
    return empirical_cvar_vector(sampler(h, count, rng), level);
  }
};

/// Monte Carlo stand-in for F with a frozen event set (common random numbers).
inline CostMap monte_carlo_map(Sampler sampler, RiskLevel level, std::size_t count, std::uint64_t seed) {
  return [sampler = std::move(sampler), level, count, seed](const Vec& h) {
    return empirical_cvar_vector(sampler(h, count, RandomStream(seed, 0)), level);
  };
}

}  // namespace cvarvi
