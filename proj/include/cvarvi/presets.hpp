#pragma once

#include "cvarvi/algorithms.hpp"
#include "cvarvi/games.hpp"
#include "cvarvi/routing.hpp"

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cvarvi {

enum class Algorithm { projected, subspace, multiplier };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::projected: return "projected";
    case Algorithm::subspace: return "subspace";
    case Algorithm::multiplier: return "multiplier";
  }
  return "?";
}

inline Algorithm parse_algorithm(std::string_view s) {
  if (s == "projected") return Algorithm::projected;
  if (s == "subspace") return Algorithm::subspace;
  if (s == "multiplier") return Algorithm::multiplier;
  throw std::invalid_argument("unknown algorithm '" + std::string(s) + "'");
}

struct PresetInfo {
  std::string name;
  std::string description;
};

inline std::vector<PresetInfo> list_presets() {
  return {
      {"sioux_falls_cvar",
       "Sioux Falls routing game: 3 OD pairs (1,19):300 (13,8):600 (12,18):200, 10 paths each, "
       "u_e ~ U(0,0.5) on edges at nodes 10/16/17, alpha = 0.05"},
      {"toy1", "two parallel routes, D = 1, C1 = 2 h1 + U(0,0.5), C2 = h2 + 1, alpha = 0.05"},
      {"nash2", "two-player CVaR Nash game, f_i = x_i, fbar_i = x_i^2/2 + x_i x_-i/4, g ~ U(0,1), box [0,1]"},
  };
}

inline bool is_preset(std::string_view name) {
  const auto all = list_presets();
  return std::any_of(all.begin(), all.end(), [&](const PresetInfo& p) { return p.name == name; });
}

/// Sioux Falls network with the edge noise and OD demands of the routing study.
inline RoutingNetwork sioux_falls_network(std::string_view net_text) {
  RoutingNetwork net = parse_tntp(net_text);
  // Nodes 10, 16, 17 in file numbering.
  add_noise_near_nodes(net, {9, 15, 16}, UniformNoise{0.0, 0.5});
  net.od_pairs = {{0, 18, 300.0}, {12, 7, 600.0}, {11, 17, 200.0}};
  return net;
}

inline StochasticVIProblem make_sioux_falls_cvar(std::string_view net_text) {
  auto prob = build_routing_game(sioux_falls_network(net_text), 10, RiskLevel(0.05));
  prob.name = "sioux_falls_cvar";
  return prob;
}

inline StochasticVIProblem make_nash2() {
  auto prob = build_nash_game(nash2_spec(), RiskLevel(0.05));
  prob.name = "nash2";
  return prob;
}

/// Schedules and budget used when an experiment does not override them.
struct AlgorithmDefaults {
  StepSchedule step;
  double penalty_cap = 200.0;
  bool penalty_ramp = false;  ///< c^k = min(1/gamma^k, cap) instead of c = cap
  double rho_early = 1.0;
  double rho_late = 1.0;
  std::size_t rho_switch = 0;
  std::size_t max_iter = 1000;
};

inline AlgorithmDefaults algorithm_defaults(std::string_view preset, Algorithm alg) {
  AlgorithmDefaults d;
  if (preset == "sioux_falls_cvar") {
    switch (alg) {
      case Algorithm::projected:
        d.step = StepSchedule{100.0, 100.0, 1.0};
        d.max_iter = 1000;
        break;
      case Algorithm::subspace:
        d.step = StepSchedule{200.0, 200.0, 1.0};
        d.penalty_ramp = true;
        d.penalty_cap = 200.0;
        d.max_iter = 50000;
        break;
      case Algorithm::multiplier:
        d.step = StepSchedule{100.0, 100.0, 1.0, 0.5};
        d.rho_early = 2.0;
        d.rho_late = 0.5;
        d.rho_switch = 1000;
        d.max_iter = 100000;
        break;
    }
    return d;
  }
  // Small synthetic problems: gamma^k = 0.5 / (1 + k).
  d.step = StepSchedule{0.5, 1.0, 1.0};
  switch (alg) {
    case Algorithm::projected: d.max_iter = 500; break;
    case Algorithm::subspace: d.max_iter = 5000; break;
    case Algorithm::multiplier: d.max_iter = 10000; break;
  }
  return d;
}

}  // namespace cvarvi
