#pragma once

#include "cvarvi/algorithms.hpp"
#include "cvarvi/analysis.hpp"
#include "cvarvi/presets.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>
#include <utility>
#include <vector>

#ifndef CVARVI_DATA_DIR
#define CVARVI_DATA_DIR "data"
#endif

namespace cvarvi {

namespace fs = std::filesystem;

/// Invalid experiment configuration; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat "key = value" document; '#' starts a comment. Keys may contain dots.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text) {
    KeyValueConfig cfg;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto nl = text.find('\n', pos);
      auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
      pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
      }
      const std::string key(detail::trim(line.substr(0, eq)));
      const std::string value(detail::trim(line.substr(eq + 1)));
      if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
      if (cfg.values_.count(key)) throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) const {
    used_.push_back(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::optional<std::string> find(const std::string& key) const {
    used_.push_back(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  double number(const std::string& key, double fallback) const {
    const auto v = find(key);
    if (!v) return fallback;
    return to_number(key, *v);
  }

  std::optional<double> number(const std::string& key) const {
    const auto v = find(key);
    if (!v) return std::nullopt;
    return to_number(key, *v);
  }

  std::size_t count(const std::string& key, std::size_t fallback) const {
    const auto v = find(key);
    if (!v) return fallback;
    return to_count(key, *v);
  }

  bool flag(const std::string& key, bool fallback) const {
    const auto v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "on" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "off" || *v == "0" || *v == "no") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + *v + "'");
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    const auto v = find(key);
    if (!v) return out;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      auto t = detail::trim(item);
      if (!t.empty()) out.emplace_back(t);
    }
    return out;
  }

  /// Keys present in the document but never read.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (std::find(used_.begin(), used_.end(), k) == used_.end()) out.push_back(k);
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  static double to_number(const std::string& key, const std::string& v) {
    double out = 0.0;
    const char* b = v.data();
    const char* e = v.data() + v.size();
    if (!v.empty() && *b == '+') ++b;
    auto [ptr, ec] = std::from_chars(b, e, out);
    if (ec != std::errc() || ptr != e) throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    return out;
  }

  static std::size_t to_count(const std::string& key, const std::string& v) {
    const double d = to_number(key, v);
    if (d < 0.0 || d != std::floor(d)) throw ConfigError("key '" + key + "': expected a nonnegative integer");
    return static_cast<std::size_t>(d);
  }

 private:
  std::map<std::string, std::string> values_;
  mutable std::vector<std::string> used_;
};

/// Resolved experiment settings; see docs/config.md for the file schema.
struct ExperimentConfig {
  std::string preset;           ///< preset name, or "network" for a TNTP file
  std::string network_path;     ///< TNTP file (sioux_falls_cvar and custom networks)
  std::vector<OdPair> od_pairs; ///< custom networks only
  std::vector<int> noise_nodes; ///< custom networks only (0-based)
  UniformNoise edge_noise{0.0, 0.5};
  double alpha = 0.05;
  std::size_t k_paths = 10;

  Algorithm algorithm = Algorithm::projected;
  StepSchedule step;
  std::size_t samples = 100;     ///< N_0
  double samples_growth = 0.0;   ///< N_k = ceil(N_0 (1 + k)^growth)
  bool penalty_ramp = false;
  double penalty_cap = 200.0;
  double rho_early = 1.0;
  double rho_late = 1.0;
  std::size_t rho_switch = 0;
  std::optional<double> multiplier_bound;
  std::optional<std::pair<double, double>> safeguard;
  bool zero_noise = false;
  std::size_t max_iter = 1000;
  std::vector<std::uint64_t> seeds;
  std::string output_dir;
  std::string cache_dir;
  std::string label;
  std::size_t record_every = 0;
  bool record_wallclock = false;

  std::string oracle = "exact";  ///< exact | monte_carlo
  std::size_t oracle_samples = 1000000;
  std::uint64_t oracle_seed = 20240101;
  double reference_tol = 1e-8;

  std::size_t sample_count(std::size_t k) const {
    if (samples_growth == 0.0) return samples;
    return static_cast<std::size_t>(
        std::ceil(static_cast<double>(samples) * std::pow(1.0 + static_cast<double>(k), samples_growth)));
  }
};

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string default_network_path() {
  if (const char* env = std::getenv("CVARVI_DATA_DIR")) return std::string(env) + "/SiouxFalls_net.tntp";
  return std::string(CVARVI_DATA_DIR) + "/SiouxFalls_net.tntp";
}

inline std::uint64_t seed_offset_from_env() {
  const char* env = std::getenv("CVARVI_SEED_OFFSET");
  if (!env || !*env) return 0;
  try {
    return KeyValueConfig::to_count("CVARVI_SEED_OFFSET", env);
  } catch (const ConfigError&) {
    throw ConfigError("CVARVI_SEED_OFFSET must be a nonnegative integer");
  }
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/**
 * Builds an ExperimentConfig from a key-value document. Missing schedule keys
 * fall back to the preset's defaults for the chosen algorithm. Unknown keys
 * are rejected. A relative problem.network is resolved against base_dir when
 * one is given.
 */
inline ExperimentConfig parse_experiment_config(std::string_view text, const fs::path& base_dir = {}) {
  const auto kv = KeyValueConfig::parse(text);
  ExperimentConfig c;
  try {
    c.preset = kv.get("problem.preset", "");
    const auto network = kv.find("problem.network");
    if (c.preset.empty() && !network) throw ConfigError("problem.preset or problem.network is required");
    if (!c.preset.empty() && !is_preset(c.preset)) throw ConfigError("unknown preset '" + c.preset + "'");
    if (c.preset.empty()) c.preset = "network";
    if (network) {
      const fs::path p(*network);
      c.network_path = (p.is_relative() && !base_dir.empty()) ? (base_dir / p).string() : p.string();
    }
    if (c.preset == "sioux_falls_cvar" && c.network_path.empty()) c.network_path = detail::default_network_path();
    if (c.preset == "network") {
      for (const auto& item : kv.list("problem.od")) {
        // origin-destination:demand, 1-based node ids
        int o = 0, d = 0;
        double dem = 0.0;
        char dash = 0, colon = 0;
        std::istringstream is(item);
        if (!(is >> o >> dash >> d >> colon >> dem) || dash != '-' || colon != ':') {
          throw ConfigError("problem.od: malformed entry '" + item + "' (expected o-d:demand)");
        }
        c.od_pairs.push_back({o - 1, d - 1, dem});
      }
      if (c.od_pairs.empty()) throw ConfigError("problem.od is required for a custom network");
      for (const auto& s : kv.list("problem.noise_nodes")) {
        c.noise_nodes.push_back(static_cast<int>(KeyValueConfig::to_count("problem.noise_nodes", s)) - 1);
      }
      c.edge_noise.lo = kv.number("problem.noise_lo", 0.0);
      c.edge_noise.hi = kv.number("problem.noise_hi", 0.5);
      c.alpha = kv.number("problem.alpha", 0.05);
      c.k_paths = kv.count("problem.k_paths", 10);
    }

    c.algorithm = parse_algorithm(kv.get("algorithm", "projected"));
    const auto d = algorithm_defaults(c.preset, c.algorithm);
    c.step.scale = kv.number("step.scale", d.step.scale);
    c.step.offset = kv.number("step.offset", d.step.offset);
    c.step.power = kv.number("step.power", d.step.power);
    c.step.cap = kv.number("step.cap", d.step.cap);
    c.samples = kv.count("samples.N", 100);
    c.samples_growth = kv.number("samples.growth", 0.0);
    const std::string penalty_mode = kv.get("penalty.mode", d.penalty_ramp ? "ramp" : "fixed");
    if (penalty_mode != "ramp" && penalty_mode != "fixed") throw ConfigError("penalty.mode must be ramp or fixed");
    c.penalty_ramp = penalty_mode == "ramp";
    c.penalty_cap = kv.number("penalty.cap", d.penalty_cap);
    c.rho_early = kv.number("multiplier.scale_early", d.rho_early);
    c.rho_late = kv.number("multiplier.scale_late", d.rho_late);
    c.rho_switch = kv.count("multiplier.switch", d.rho_switch);
    c.multiplier_bound = kv.number("multiplier.bound");
    const auto sg_lo = kv.number("safeguard.lo");
    const auto sg_hi = kv.number("safeguard.hi");
    if (sg_lo.has_value() != sg_hi.has_value()) throw ConfigError("safeguard.lo and safeguard.hi go together");
    if (sg_lo) c.safeguard = std::make_pair(*sg_lo, *sg_hi);
    c.zero_noise = !kv.flag("noise", true);
    c.max_iter = kv.count("max_iter", d.max_iter);
    for (const auto& s : kv.list("seeds")) c.seeds.push_back(KeyValueConfig::to_count("seeds", s));
    c.output_dir = kv.get("output_dir", "");
    c.cache_dir = kv.get("cache_dir", c.output_dir);
    c.label = kv.get("label", std::string(to_string(c.algorithm)) + "_N" + std::to_string(c.samples));
    c.record_every = kv.count("record_every", 0);
    c.record_wallclock = kv.flag("trace.wallclock", false);
    c.oracle = kv.get("oracle", "exact");
    c.oracle_samples = kv.count("oracle.samples", 1000000);
    c.oracle_seed = kv.count("oracle.seed", 20240101);
    c.reference_tol = kv.number("reference.tol", 1e-8);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  if (c.seeds.empty()) throw ConfigError("seeds must be a nonempty list");
  if (c.max_iter < 1) throw ConfigError("max_iter must be at least 1");
  if (c.samples < 1) throw ConfigError("samples.N must be at least 1");
  if (c.output_dir.empty()) throw ConfigError("output_dir is required");
  if (!(c.step.scale > 0.0) || !(c.step.offset > 0.0) || !(c.step.cap > 0.0)) {
    throw ConfigError("step schedule must be positive");
  }
  if (!(c.alpha > 0.0 && c.alpha <= 1.0)) throw ConfigError("problem.alpha must lie in (0, 1]");
  if (c.oracle != "exact" && c.oracle != "monte_carlo") throw ConfigError("oracle must be exact or monte_carlo");
  if (!c.network_path.empty() && !fs::exists(c.network_path)) {
    throw ConfigError("network file '" + c.network_path + "' does not exist");
  }
  if (const auto extra = kv.unused(); !extra.empty()) throw ConfigError("unknown key '" + extra.front() + "'");
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(detail::read_file(path), fs::path(path).parent_path());
}

/// Problem described by the config, with the oracle swapped in when requested.
inline StochasticVIProblem build_problem(const ExperimentConfig& c) {
  StochasticVIProblem prob = [&] {
    if (c.preset == "toy1") return make_toy1();
    if (c.preset == "nash2") return make_nash2();
    const std::string text = detail::read_file(c.network_path);
    if (c.preset == "sioux_falls_cvar") return make_sioux_falls_cvar(text);
    RoutingNetwork net = parse_tntp(text);
    add_noise_near_nodes(net, c.noise_nodes, c.edge_noise);
    net.od_pairs = c.od_pairs;
    auto p = build_routing_game(std::move(net), c.k_paths, RiskLevel(c.alpha));
    p.name = "network";
    return p;
  }();
  if (c.oracle == "monte_carlo") {
    prob.exact_map = monte_carlo_map(prob.sampler, prob.level, c.oracle_samples, c.oracle_seed);
    prob.exact_map_note = "Monte Carlo with " + std::to_string(c.oracle_samples) + " frozen events, seed " +
                          std::to_string(c.oracle_seed);
  }
  return prob;
}

/// Content hash of everything that determines h*: problem inputs, oracle, tolerance.
inline std::string problem_hash(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "preset=" << c.preset << ";alpha=" << detail::format_double(c.alpha) << ";k=" << c.k_paths
     << ";noise=" << detail::format_double(c.edge_noise.lo) << "," << detail::format_double(c.edge_noise.hi)
     << ";oracle=" << c.oracle << ";tol=" << detail::format_double(c.reference_tol);
  if (c.oracle == "monte_carlo") os << ";oracle_n=" << c.oracle_samples << ";oracle_seed=" << c.oracle_seed;
  for (const auto& od : c.od_pairs) os << ";od=" << od.origin << "-" << od.destination << ":" << od.demand;
  for (int v : c.noise_nodes) os << ";nn=" << v;
  std::uint64_t h = detail::fnv1a(os.str());
  if (!c.network_path.empty() && c.preset != "toy1" && c.preset != "nash2") {
    h = detail::fnv1a(detail::read_file(c.network_path), h);
  }
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << h;
  return hex.str();
}

struct ReferenceInfo {
  Vec h_star;
  bool cache_hit = false;
  std::string cache_file;
};

/// h* from the cache when present, otherwise from the extragradient oracle (and cached).
inline ReferenceInfo cached_reference(const ExperimentConfig& c, const StochasticVIProblem& prob) {
  ReferenceInfo info;
  fs::create_directories(c.cache_dir);
  info.cache_file = (fs::path(c.cache_dir) / ("hstar_" + problem_hash(c) + ".txt")).string();
  if (std::ifstream in(info.cache_file); in) {
    std::vector<double> v;
    std::string tok;
    while (in >> tok) v.push_back(KeyValueConfig::to_number("cache", tok));
    if (static_cast<Eigen::Index>(v.size()) == prob.n) {
      info.h_star = Eigen::Map<Vec>(v.data(), prob.n);
      info.cache_hit = true;
      return info;
    }
  }
  ReferenceOptions opt;
  opt.tol = c.reference_tol;
  info.h_star = reference_solution(prob, opt).h;
  std::ofstream out(info.cache_file);
  for (Eigen::Index i = 0; i < info.h_star.size(); ++i) out << detail::format_double(info.h_star[i]) << "\n";
  return info;
}

inline AlgorithmConfig make_algorithm_config(const ExperimentConfig& c, std::uint64_t seed, std::size_t n) {
  AlgorithmConfig a;
  a.step = c.step;
  a.samples = [c](std::size_t k) { return c.sample_count(k); };
  const StepSchedule step = c.step;
  const double cap = c.penalty_cap;
  if (c.penalty_ramp) {
    a.penalty = [step, cap](std::size_t k) { return std::min(1.0 / step(k), cap); };
  } else {
    a.penalty = [cap](std::size_t) { return cap; };
  }
  const double early = c.rho_early, late = c.rho_late;
  const std::size_t sw = c.rho_switch;
  a.multiplier_step_scale = [early, late, sw](std::size_t k) { return k < sw ? early : late; };
  a.multiplier_bound = c.multiplier_bound;
  if (c.safeguard) {
    a.safeguard_box = Box{Vec::Constant(static_cast<Eigen::Index>(n), c.safeguard->first),
                          Vec::Constant(static_cast<Eigen::Index>(n), c.safeguard->second)};
  }
  a.max_iter = c.max_iter;
  a.seed = seed;
  a.use_exact_map = c.zero_noise;
  a.record_every = c.record_every;
  return a;
}

inline RunTrace run_algorithm(Algorithm alg, const StochasticVIProblem& prob, const AlgorithmConfig& cfg) {
  switch (alg) {
    case Algorithm::projected: return run_projected(prob, cfg, prob.initial_point);
    case Algorithm::subspace: return run_subspace(prob, cfg, prob.initial_point);
    case Algorithm::multiplier:
      return run_multiplier(prob, cfg, prob.initial_point, Vec::Zero(prob.feasible.ineq_count()));
  }
  throw std::logic_error("unreachable");
}

inline std::string trace_csv(const RunTrace& trace, bool wallclock) {
  std::string out = "k,gamma,N,error,wallclock_ms\n";
  for (const auto& r : trace.records) {
    out += std::to_string(r.k);
    out += ',';
    out += detail::format_double(r.gamma);
    out += ',';
    out += std::to_string(r.samples);
    out += ',';
    out += detail::format_double(r.map_error.value_or(std::nan("")));
    out += ',';
    out += wallclock ? detail::format_double(r.wall_clock_ms) : std::string("0");
    out += '\n';
  }
  return out;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::string trace_file;
  double terminal_error = 0.0;
  std::size_t iterations = 0;
  std::string status;
  std::string message;
  std::size_t clamp_events = 0;
  std::size_t projection_calls = 0;
};

struct ExperimentResult {
  std::vector<SeedOutcome> seeds;
  std::string summary_file;
  nlohmann::json summary;
};

/**
 * Runs the configured algorithm once per seed (up to `jobs` in parallel),
 * writes one trace CSV per seed and a JSON summary. Divergence is recorded,
 * not raised.
 */
inline ExperimentResult run_experiment(const ExperimentConfig& c, unsigned jobs = 1) {
  const StochasticVIProblem prob = build_problem(c);
  if (!prob.has_exact_map()) throw ConfigError("problem has no exact map for error traces");
  fs::create_directories(c.output_dir);
  const ReferenceInfo ref = cached_reference(c, prob);
  const MapError metric(prob, ref.h_star);
  const std::uint64_t offset = detail::seed_offset_from_env();

  ExperimentResult result;
  result.seeds.resize(c.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < c.seeds.size(); i = next++) {
      const std::uint64_t seed = c.seeds[i] + offset;
      AlgorithmConfig cfg = make_algorithm_config(c, seed, static_cast<std::size_t>(prob.n));
      cfg.error = [&metric](const Vec& h) { return metric(h); };
      SeedOutcome& out = result.seeds[i];
      out.seed = seed;
      RunTrace trace;
      try {
        trace = run_algorithm(c.algorithm, prob, cfg);
      } catch (const std::invalid_argument& e) {
        trace.status = TerminalStatus::error;
        trace.message = e.what();
      }
      out.trace_file = c.label + "_seed" + std::to_string(seed) + ".csv";
      std::ofstream(fs::path(c.output_dir) / out.trace_file, std::ios::binary) << trace_csv(trace, c.record_wallclock);
      out.terminal_error = trace.records.empty() ? std::nan("") : trace.last().map_error.value_or(std::nan(""));
      out.iterations = trace.iterations;
      out.status = to_string(trace.status);
      out.message = trace.message;
      out.clamp_events = trace.clamp_events;
      out.projection_calls = trace.projection_calls;
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(c.seeds.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  double sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t finite = 0, diverged = 0, errors = 0, clamps = 0, projections = 0;
  nlohmann::json per_seed = nlohmann::json::array();
  for (const auto& s : result.seeds) {
    if (std::isfinite(s.terminal_error)) {
      sum += s.terminal_error;
      lo = std::min(lo, s.terminal_error);
      hi = std::max(hi, s.terminal_error);
      ++finite;
    }
    diverged += s.status == "diverged";
    errors += s.status == "error";
    clamps += s.clamp_events;
    projections += s.projection_calls;
    per_seed.push_back({{"seed", s.seed},
                        {"trace", s.trace_file},
                        {"terminal_error", s.terminal_error},
                        {"iterations", s.iterations},
                        {"status", s.status},
                        {"message", s.message},
                        {"clamp_events", s.clamp_events},
                        {"projection_calls", s.projection_calls}});
  }
  nlohmann::json j;
  j["label"] = c.label;
  j["problem"] = prob.name;
  j["algorithm"] = to_string(c.algorithm);
  j["samples"] = c.samples;
  j["samples_growth"] = c.samples_growth;
  j["max_iter"] = c.max_iter;
  j["zero_noise"] = c.zero_noise;
  j["alpha"] = prob.level.alpha();
  j["oracle"] = prob.exact_map_note;
  j["reference"] = {{"cache_file", fs::path(ref.cache_file).filename().string()},
                    {"cache_hit", ref.cache_hit},
                    {"hash", problem_hash(c)}};
  if (finite > 0) {
    j["terminal_error"] = {{"mean", sum / static_cast<double>(finite)}, {"min", lo}, {"max", hi}};
  } else {
    j["terminal_error"] = {{"mean", nullptr}, {"min", nullptr}, {"max", nullptr}};
  }
  j["diverged"] = diverged;
  j["errors"] = errors;
  j["clamp_events"] = clamps;
  j["projection_calls"] = projections;
  j["runs"] = per_seed;
  result.summary = j;
  result.summary_file = (fs::path(c.output_dir) / (c.label + "_summary.json")).string();
  std::ofstream(result.summary_file) << j.dump(2) << "\n";
  return result;
}

/// One trace file with its grouping keys.
struct TraceData {
  std::string algorithm;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> k;
  std::vector<double> error;
};

inline TraceData read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read trace '" + path + "'");
  TraceData t;
  std::string line;
  std::getline(in, line);
  if (detail::trim(line) != "k,gamma,N,error,wallclock_ms") throw std::runtime_error("bad trace header in '" + path + "'");
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    if (cols.size() != 5) throw std::runtime_error("bad trace row in '" + path + "'");
    t.k.push_back(KeyValueConfig::to_count("k", cols[0]));
    t.samples = KeyValueConfig::to_count("N", cols[2]);
    t.error.push_back(cols[3] == "nan" ? std::nan("") : KeyValueConfig::to_number("error", cols[3]));
  }
  return t;
}

/// All traces listed by the *_summary.json files in a directory, in a stable order.
inline std::vector<TraceData> load_traces(const std::string& dir) {
  std::vector<fs::path> summaries;
  if (!fs::is_directory(dir)) throw std::runtime_error("'" + dir + "' is not a directory");
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.size() > 13 && name.ends_with("_summary.json")) summaries.push_back(e.path());
  }
  std::sort(summaries.begin(), summaries.end());
  std::vector<TraceData> out;
  for (const auto& s : summaries) {
    std::ifstream in(s);
    const auto j = nlohmann::json::parse(in);
    for (const auto& run : j.at("runs")) {
      TraceData t = read_trace_csv((fs::path(dir) / run.at("trace").get<std::string>()).string());
      t.algorithm = j.at("algorithm").get<std::string>();
      t.samples = j.at("samples").get<std::size_t>();
      t.seed = run.at("seed").get<std::uint64_t>();
      out.push_back(std::move(t));
    }
  }
  return out;
}

/// Index of the first record with error below the threshold, if any.
inline std::optional<std::size_t> first_crossing(const TraceData& t, double threshold) {
  for (std::size_t i = 0; i < t.error.size(); ++i) {
    if (t.error[i] < threshold) return i;
  }
  return std::nullopt;
}

/// Mean error over the records from the first crossing to the end of the trace.
inline std::optional<double> post_threshold_mean(const TraceData& t, double threshold) {
  const auto start = first_crossing(t, threshold);
  if (!start) return std::nullopt;
  double sum = 0.0;
  for (std::size_t i = *start; i < t.error.size(); ++i) sum += t.error[i];
  return sum / static_cast<double>(t.error.size() - *start);
}

struct TableCell {
  std::optional<double> mean;     ///< n/a when no trace crossed
  std::size_t traces = 0;
  std::size_t crossed = 0;
  std::optional<double> mean_crossing_k;
};

struct SummaryTable {
  std::vector<std::string> algorithms;
  std::vector<std::size_t> sizes;
  std::vector<double> thresholds;
  std::vector<std::vector<TableCell>> cells;  ///< [algorithm][size]

  std::string to_text() const {
    std::ostringstream os;
    os << std::left << std::setw(22) << "samples per iteration";
    for (std::size_t s : sizes) os << std::right << std::setw(12) << s;
    os << "\n" << std::left << std::setw(22) << "threshold";
    for (double t : thresholds) os << std::right << std::setw(12) << detail::format_double(t);
    os << "\n";
    for (std::size_t a = 0; a < algorithms.size(); ++a) {
      os << std::left << std::setw(22) << algorithms[a];
      for (const auto& c : cells[a]) {
        std::ostringstream v;
        if (c.mean) {
          v << std::fixed << std::setprecision(4) << *c.mean;
        } else {
          v << "n/a";
        }
        os << std::right << std::setw(12) << v.str();
      }
      os << "\n";
    }
    os << "cell = mean error over iterates from the first one below the column threshold to the end of the run,\n"
          "averaged over the traces that crossed; n/a = threshold never reached.\n";
    return os.str();
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "algorithm,samples,threshold,mean_error,traces,crossed,mean_crossing_k\n";
    for (std::size_t a = 0; a < algorithms.size(); ++a) {
      for (std::size_t s = 0; s < sizes.size(); ++s) {
        const auto& c = cells[a][s];
        os << algorithms[a] << ',' << sizes[s] << ',' << detail::format_double(thresholds[s]) << ','
           << (c.mean ? detail::format_double(*c.mean) : "n/a") << ',' << c.traces << ',' << c.crossed << ','
           << (c.mean_crossing_k ? detail::format_double(*c.mean_crossing_k) : "n/a") << "\n";
      }
    }
    return os.str();
  }
};

/**
 * Table of post-threshold mean errors: rows are algorithms, columns pair
 * sizes[i] with thresholds[i].
 */
inline SummaryTable summarize_table(const std::vector<TraceData>& traces, const std::vector<double>& thresholds,
                                    const std::vector<std::size_t>& sizes) {
  if (thresholds.size() != sizes.size()) throw std::invalid_argument("thresholds and sizes must pair up");
  SummaryTable tab;
  tab.sizes = sizes;
  tab.thresholds = thresholds;
  for (const auto& t : traces) {
    if (std::find(tab.algorithms.begin(), tab.algorithms.end(), t.algorithm) == tab.algorithms.end()) {
      tab.algorithms.push_back(t.algorithm);
    }
  }
  // Known algorithms first, in the order they are introduced; others keep their order.
  auto rank = [](const std::string& a) {
    static const std::vector<std::string> known{"projected", "subspace", "multiplier"};
    return static_cast<std::size_t>(std::find(known.begin(), known.end(), a) - known.begin());
  };
  std::stable_sort(tab.algorithms.begin(), tab.algorithms.end(),
                   [&](const std::string& x, const std::string& y) { return rank(x) < rank(y); });
  tab.cells.assign(tab.algorithms.size(), std::vector<TableCell>(sizes.size()));
  for (std::size_t a = 0; a < tab.algorithms.size(); ++a) {
    for (std::size_t s = 0; s < sizes.size(); ++s) {
      TableCell& cell = tab.cells[a][s];
      double sum = 0.0, ksum = 0.0;
      for (const auto& t : traces) {
        if (t.algorithm != tab.algorithms[a] || t.samples != sizes[s]) continue;
        ++cell.traces;
        if (const auto m = post_threshold_mean(t, thresholds[s])) {
          ++cell.crossed;
          sum += *m;
          ksum += static_cast<double>(t.k[*first_crossing(t, thresholds[s])]);
        }
      }
      if (cell.crossed > 0) {
        cell.mean = sum / static_cast<double>(cell.crossed);
        cell.mean_crossing_k = ksum / static_cast<double>(cell.crossed);
      }
    }
  }
  return tab;
}

/// Long-format CSV (algorithm,seed,k,error,clamped); zero errors become 1e-16 with clamped = 1.
inline std::string emit_plot_data(const std::vector<TraceData>& traces) {
  std::string out = "algorithm,seed,k,error,clamped\n";
  for (const auto& t : traces) {
    for (std::size_t i = 0; i < t.k.size(); ++i) {
      double e = t.error[i];
      bool clamped = false;
      if (e <= 0.0) {
        e = 1e-16;
        clamped = true;
      }
      out += t.algorithm + "_N" + std::to_string(t.samples) + ',' + std::to_string(t.seed) + ',' +
             std::to_string(t.k[i]) + ',' + detail::format_double(e) + ',' + (clamped ? "1" : "0") + '\n';
    }
  }
  return out;
}

}  // namespace cvarvi
