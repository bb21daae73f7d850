#pragma once

#include "cvarvi/problem.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace cvarvi {

struct Edge {
  int tail = 0;  // 0-based node ids
  int head = 0;
  double free_flow_time = 0.0;
  double capacity = 0.0;
  std::optional<UniformNoise> noise;
};

struct OdPair {
  int origin = 0;  // 0-based node ids
  int destination = 0;
  double demand = 0.0;
};

struct Path {
  std::vector<std::size_t> edges;  // indices into RoutingNetwork::edges
  double free_flow_cost = 0.0;
};

struct RoutingNetwork {
  int node_count = 0;
  std::vector<Edge> edges;
  std::vector<OdPair> od_pairs;
  std::vector<std::vector<Path>> paths;  // per OD pair
  Mat incidence;                         // edges x total paths, 0/1

  std::size_t path_count() const {
    std::size_t n = 0;
    for (const auto& p : paths) n += p.size();
    return n;
  }
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline double parse_number(std::string_view tok, std::size_t line) {
  double v = 0.0;
  const char* b = tok.data();
  const char* e = tok.data() + tok.size();
  if (!tok.empty() && *b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e || !std::isfinite(v)) {
    throw ParseError(line, "non-numeric field '" + std::string(tok) + "'");
  }
  return v;
}

}  // namespace detail

/**
 * Parses a TNTP "_net" file. Keeps init node, term node, capacity and free
 * flow time; the other columns are checked for being numeric and dropped.
 * Node ids are 1-based in the file and 0-based in the result.
 */
inline RoutingNetwork parse_tntp(std::string_view text) {
  RoutingNetwork net;
  std::optional<long> nodes, links;
  bool end_of_metadata = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    ++line_no;
    auto line = detail::trim(raw);
    if (line.empty()) continue;
    if (!end_of_metadata) {
      if (line.front() != '<') {
        if (line.front() == '~') continue;
        throw ParseError(line_no, "link data before <END OF METADATA>");
      }
      const auto close = line.find('>');
      if (close == std::string_view::npos) throw ParseError(line_no, "malformed metadata tag");
      const auto tag = line.substr(0, close + 1);
      const auto value = detail::trim(line.substr(close + 1));
      if (tag == "<END OF METADATA>") {
        end_of_metadata = true;
        if (!nodes) throw ParseError(line_no, "missing <NUMBER OF NODES>");
        if (!links) throw ParseError(line_no, "missing <NUMBER OF LINKS>");
      } else if (tag == "<NUMBER OF NODES>") {
        nodes = static_cast<long>(detail::parse_number(value, line_no));
      } else if (tag == "<NUMBER OF LINKS>") {
        links = static_cast<long>(detail::parse_number(value, line_no));
      }
      continue;
    }
    if (line.front() == '~') continue;
    if (const auto semi = line.find(';'); semi != std::string_view::npos) line = line.substr(0, semi);
    std::vector<std::string_view> toks;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      if (j > i) toks.push_back(line.substr(i, j - i));
      i = j;
    }
    if (toks.empty()) continue;
    if (toks.size() < 10) throw ParseError(line_no, "link row has fewer than 10 columns");
    double vals[10];
    for (std::size_t c = 0; c < 10; ++c) vals[c] = detail::parse_number(toks[c], line_no);
    Edge e;
    e.tail = static_cast<int>(vals[0]) - 1;
    e.head = static_cast<int>(vals[1]) - 1;
    e.capacity = vals[2];
    e.free_flow_time = vals[4];
    if (vals[0] != std::floor(vals[0]) || vals[1] != std::floor(vals[1]) || e.tail < 0 || e.head < 0 ||
        e.tail >= *nodes || e.head >= *nodes) {
      throw ParseError(line_no, "node id out of range");
    }
    net.edges.push_back(e);
  }
  if (!end_of_metadata) throw ParseError(line_no, "missing <END OF METADATA>");
  net.node_count = static_cast<int>(*nodes);
  return net;
}

namespace detail {

// Paths ordered by total weight, then lexicographically by edge indices.
struct PathOrder {
  bool operator()(const Path& a, const Path& b) const {
    const double scale = std::max({1.0, std::abs(a.free_flow_cost), std::abs(b.free_flow_cost)});
    if (std::abs(a.free_flow_cost - b.free_flow_cost) > 1e-12 * scale) return a.free_flow_cost < b.free_flow_cost;
    return a.edges < b.edges;
  }
};

// Dijkstra under the (cost, edge sequence) order with banned nodes and edges.
inline std::optional<Path> constrained_shortest(const RoutingNetwork& net, int source, int target,
                                                const std::vector<char>& banned_node,
                                                const std::vector<char>& banned_edge) {
  const auto n = static_cast<std::size_t>(net.node_count);
  std::vector<std::optional<Path>> best(n);
  std::vector<char> done(n, 0);
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t e = 0; e < net.edges.size(); ++e) out[static_cast<std::size_t>(net.edges[e].tail)].push_back(e);
  best[static_cast<std::size_t>(source)] = Path{};
  const PathOrder less;
  for (;;) {
    std::size_t u = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (done[v] || !best[v]) continue;
      if (u == n || less(*best[v], *best[u])) u = v;
    }
    if (u == n) return std::nullopt;
    if (static_cast<int>(u) == target) return best[u];
    done[u] = 1;
    for (std::size_t e : out[u]) {
      if (banned_edge[e]) continue;
      const auto v = static_cast<std::size_t>(net.edges[e].head);
      if (done[v] || banned_node[v]) continue;
      Path cand = *best[u];
      cand.edges.push_back(e);
      cand.free_flow_cost += net.edges[e].free_flow_time;
      if (!best[v] || less(cand, *best[v])) best[v] = std::move(cand);
    }
  }
}

}  // namespace detail

/**
 * Yen's algorithm: up to k loopless paths from origin to dest in nondecreasing
 * free-flow time, ties broken lexicographically by edge index sequence.
 * Returns an empty list when dest is unreachable.
 */
inline std::vector<Path> yen_k_shortest_paths(const RoutingNetwork& net, int origin, int dest, std::size_t k) {
  if (origin == dest) throw std::invalid_argument("origin equals destination");
  if (origin < 0 || dest < 0 || origin >= net.node_count || dest >= net.node_count) {
    throw std::invalid_argument("node out of range");
  }
  for (const auto& e : net.edges) {
    if (!(e.free_flow_time > 0.0)) throw std::invalid_argument("edge weights must be positive");
  }
  std::vector<Path> accepted;
  if (k == 0) return accepted;
  const auto n = static_cast<std::size_t>(net.node_count);
  std::vector<char> no_nodes(n, 0), no_edges(net.edges.size(), 0);
  auto first = detail::constrained_shortest(net, origin, dest, no_nodes, no_edges);
  if (!first) return accepted;
  accepted.push_back(std::move(*first));
  std::set<Path, detail::PathOrder> candidates;

  while (accepted.size() < k) {
    const Path& last = accepted.back();
    int spur = origin;
    Path root;
    for (std::size_t i = 0; i < last.edges.size(); ++i) {
      std::vector<char> banned_node(n, 0), banned_edge(net.edges.size(), 0);
      for (const auto& p : accepted) {
        if (p.edges.size() > i && std::equal(root.edges.begin(), root.edges.end(), p.edges.begin())) {
          banned_edge[p.edges[i]] = 1;
        }
      }
      for (std::size_t e : root.edges) banned_node[static_cast<std::size_t>(net.edges[e].tail)] = 1;
      if (auto tail = detail::constrained_shortest(net, spur, dest, banned_node, banned_edge)) {
        Path total = root;
        total.edges.insert(total.edges.end(), tail->edges.begin(), tail->edges.end());
        total.free_flow_cost = 0.0;
        for (std::size_t e : total.edges) total.free_flow_cost += net.edges[e].free_flow_time;
        candidates.insert(std::move(total));
      }
      root.edges.push_back(last.edges[i]);
      root.free_flow_cost += net.edges[last.edges[i]].free_flow_time;
      spur = net.edges[last.edges[i]].head;
    }
    // Drop candidates that were already accepted (possible after ties).
    while (!candidates.empty() &&
           std::any_of(accepted.begin(), accepted.end(),
                       [&](const Path& p) { return p.edges == candidates.begin()->edges; })) {
      candidates.erase(candidates.begin());
    }
    if (candidates.empty()) break;
    accepted.push_back(*candidates.begin());
    candidates.erase(candidates.begin());
  }
  return accepted;
}

/// Fills `paths` with up to k free-flow shortest paths per OD pair and builds the incidence.
inline void select_paths(RoutingNetwork& net, std::size_t k) {
  net.paths.clear();
  for (const auto& od : net.od_pairs) {
    auto p = yen_k_shortest_paths(net, od.origin, od.destination, k);
    if (p.empty()) {
      throw std::invalid_argument("OD pair (" + std::to_string(od.origin + 1) + "," +
                                  std::to_string(od.destination + 1) + ") has no path");
    }
    net.paths.push_back(std::move(p));
  }
  net.incidence = Mat::Zero(static_cast<Eigen::Index>(net.edges.size()), static_cast<Eigen::Index>(net.path_count()));
  Eigen::Index col = 0;
  for (const auto& group : net.paths) {
    for (const auto& p : group) {
      for (std::size_t e : p.edges) net.incidence(static_cast<Eigen::Index>(e), col) = 1.0;
      ++col;
    }
  }
}

/// Attach uniform(lo, hi) noise to every edge incident to one of `nodes` (0-based).
inline void add_noise_near_nodes(RoutingNetwork& net, const std::vector<int>& nodes, UniformNoise noise) {
  for (auto& e : net.edges) {
    if (std::find(nodes.begin(), nodes.end(), e.tail) != nodes.end() ||
        std::find(nodes.begin(), nodes.end(), e.head) != nodes.end()) {
      e.noise = noise;
    }
  }
}

/**
 * CVaR routing game over the selected paths.
 *
 * Edge cost t_e (1 + u_e (100 / c_e) f_e) with f = incidence * h and u_e drawn
 * independently per edge and event; path cost is the sum over its edges.
 * H is {h >= 0, per-OD path sums = demand}. For fixed h each path cost is
 * a constant plus a nonnegative combination of independent uniforms, so the
 * exact map evaluates the CVaR of that sum in closed form.
 */
inline StochasticVIProblem build_routing_game(RoutingNetwork net, std::size_t k_paths, RiskLevel level) {
  for (const auto& e : net.edges) {
    if (!(e.free_flow_time > 0.0) || !(e.capacity > 0.0)) {
      throw std::invalid_argument("edge free-flow time and capacity must be positive");
    }
  }
  for (const auto& od : net.od_pairs) {
    if (!(od.demand >= 0.0)) throw std::invalid_argument("negative demand");
  }
  select_paths(net, k_paths);
  const auto n = static_cast<Eigen::Index>(net.path_count());
  const auto groups = static_cast<Eigen::Index>(net.od_pairs.size());

  Mat A = Mat::Zero(groups, n);
  Vec b(groups);
  std::vector<std::vector<Eigen::Index>> od_groups;
  Vec h0(n);
  Eigen::Index col = 0;
  for (Eigen::Index w = 0; w < groups; ++w) {
    const auto& group = net.paths[static_cast<std::size_t>(w)];
    const double demand = net.od_pairs[static_cast<std::size_t>(w)].demand;
    std::vector<Eigen::Index> members;
    for (std::size_t i = 0; i < group.size(); ++i, ++col) {
      A(w, col) = 1.0;
      members.push_back(col);
      h0[col] = demand / static_cast<double>(group.size());
    }
    b[w] = demand;
    od_groups.push_back(std::move(members));
  }

  // Noisy edges carry the only h-dependent part of the cost.
  std::vector<std::size_t> noisy;
  for (std::size_t e = 0; e < net.edges.size(); ++e) {
    if (net.edges[e].noise) noisy.push_back(e);
  }
  const auto m = static_cast<Eigen::Index>(noisy.size());
  Vec base = Vec::Zero(n);
  for (Eigen::Index e = 0; e < static_cast<Eigen::Index>(net.edges.size()); ++e) {
    base += net.edges[static_cast<std::size_t>(e)].free_flow_time * net.incidence.row(e).transpose();
  }
  Mat noisy_incidence(m, n);   // noisy edge x path
  Mat flow_rows(m, n);         // rows of the incidence for noisy edges
  Vec slope(m), lo(m), width(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto& e = net.edges[noisy[static_cast<std::size_t>(j)]];
    noisy_incidence.row(j) = net.incidence.row(static_cast<Eigen::Index>(noisy[static_cast<std::size_t>(j)]));
    flow_rows.row(j) = noisy_incidence.row(j);
    slope[j] = e.free_flow_time * 100.0 / e.capacity;
    lo[j] = e.noise->lo;
    width[j] = e.noise->hi - e.noise->lo;
  }
  std::vector<std::vector<Eigen::Index>> path_noisy(static_cast<std::size_t>(n));
  for (Eigen::Index p = 0; p < n; ++p) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (noisy_incidence(j, p) != 0.0) path_noisy[static_cast<std::size_t>(p)].push_back(j);
    }
  }

  Sampler sampler = [base, noisy_incidence, flow_rows, slope, lo, width, noisy, m](
                        const Vec& h, std::size_t count, const RandomStream& rng) {
    const Vec gain = slope.cwiseProduct(flow_rows * h);  // t_e (100/c_e) f_e
    const auto N = static_cast<Eigen::Index>(count);
    Mat u(N, m);
    for (Eigen::Index j = 0; j < m; ++j) {
      for (Eigen::Index ev = 0; ev < N; ++ev) {
        u(ev, j) = lo[j] + width[j] * rng.uniform01(noisy[static_cast<std::size_t>(j)], static_cast<std::uint64_t>(ev));
      }
    }
    SampleBatch out = (u * gain.asDiagonal()) * noisy_incidence;
    out.rowwise() += base.transpose();
    return out;
  };

  CostMap exact = [base, flow_rows, slope, lo, width, path_noisy, n, level](const Vec& h) {
    const Vec gain = slope.cwiseProduct(flow_rows * h);
    Vec F(n);
    std::vector<double> widths;
    for (Eigen::Index p = 0; p < n; ++p) {
      double offset = base[p];
      widths.clear();
      for (Eigen::Index j : path_noisy[static_cast<std::size_t>(p)]) {
        offset += gain[j] * lo[j];
        widths.push_back(gain[j] * width[j]);
      }
      F[p] = exact_cvar_uniform_sum(offset, widths, level);
    }
    return F;
  };

  StochasticVIProblem prob{
      .n = n,
      .sampler = std::move(sampler),
      .exact_map = std::move(exact),
      .feasible = FeasibleSet::nonneg_orthant(std::move(A), std::move(b)),
      .level = level,
      .name = "routing",
      .exact_map_note = "exact CVaR of independent uniform edge terms (piecewise-polynomial convolution)",
      .od_groups = std::move(od_groups),
      .initial_point = std::move(h0),
      .metadata = {},
  };
  prob.metadata["noisy_edges"] = std::to_string(m);
  prob.metadata["paths"] = std::to_string(n);
  return prob;
}

}  // namespace cvarvi
