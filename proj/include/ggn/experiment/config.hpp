#pragma once

// Declarative experiment configuration read from an INI file. Every key is
// optional except problem.case; unknown sections or keys are rejected with
// their dotted path.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ggn/errors.hpp"
#include "ggn/ggn.hpp"
#include "ggn/gossip.hpp"

namespace ggn::experiment {

enum class Algorithm { Centralized, Ggn, Diffusion };

[[nodiscard]] inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Centralized: return "centralized";
    case Algorithm::Ggn: return "ggn";
    case Algorithm::Diffusion: return "diffusion";
  }
  return "?";
}

enum class TopologyKind { Complete, Ring, Path, Edges };

struct ExperimentConfig {
  // [problem]
  std::string case_path;
  std::string true_state_path;
  double load_scale = 1.0;
  double sigma2 = 1e-6;
  int snapshots = 1;
  double theta_max = std::numbers::pi / 2;
  double v_max = 1.5;

  // [sites]
  int sites = 3;
  std::string partition = "contiguous";

  // [algorithm]
  Algorithm algorithm = Algorithm::Ggn;
  double alpha = 0.5;
  int exchanges = 3;
  ExchangeSchedule::Kind schedule = ExchangeSchedule::Kind::Constant;
  int max_updates = 15;
  double stop_tol = 1e-10;
  double ridge_scale = 1e-8;
  double condition_cap = kDefaultConditionCap;
  bool record_discrepancy = false;

  // [gossip]
  gossip::Protocol protocol = gossip::Protocol::CSE;
  TopologyKind topology = TopologyKind::Complete;
  /// 1-based agent pairs when topology = edges.
  std::vector<std::pair<int, int>> edges;
  double beta = 0.3;
  double link_failure_prob = 0.0;
  int comm_interval = 1;

  // [diffusion]
  StepSchedule::Kind step_kind = StepSchedule::Kind::Diminishing;
  double step_c = 0.3;
  long total_exchanges = 900;

  // [certificate]
  bool certificate = true;
  int certificate_samples = 48;
  double xi = 0.25;
  /// "operating": box around the reference solution; "box": the whole constraint set.
  std::string certificate_region = "operating";
  double region_theta = 0.1;
  double region_v = 0.05;

  // [run]
  int repetitions = 20;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  std::string run_id = "run";

  [[nodiscard]] GgnConfig ggn_config() const {
    GgnConfig c;
    c.alpha = alpha;
    c.schedule = {schedule, exchanges};
    c.max_updates = max_updates;
    c.stop_tol = stop_tol;
    c.ridge_scale = ridge_scale;
    c.condition_cap = condition_cap;
    c.record_discrepancy = record_discrepancy;
    return c;
  }

  [[nodiscard]] gossip::Topology topology_graph() const {
    switch (topology) {
      case TopologyKind::Complete: return gossip::Topology::complete(sites);
      case TopologyKind::Ring: return gossip::Topology::ring(sites);
      case TopologyKind::Path: return gossip::Topology::path(sites);
      case TopologyKind::Edges: {
        gossip::Topology t{sites, {}};
        for (auto [a, b] : edges) t.edges.emplace_back(a - 1, b - 1);
        return t;
      }
    }
    return {};
  }

  [[nodiscard]] gossip::GossipConfig gossip_config(std::uint64_t rng_seed) const {
    gossip::GossipConfig g;
    g.protocol = protocol;
    g.beta = beta;
    g.link_failure_prob = link_failure_prob;
    g.comm_interval = comm_interval;
    g.rng_seed = rng_seed;
    if (protocol == gossip::Protocol::URE) g.ure_pick_probs = gossip::neighbor_pick_matrix(topology_graph());
    return g;
  }

  /// Range checks with dotted field paths.
  void validate() const {
    auto fail = [](const char* field, const std::string& what) { throw ConfigError(field, what); };
    if (case_path.empty()) fail("problem.case", "required");
    if (!std::filesystem::exists(case_path)) fail("problem.case", "file not found: " + case_path);
    if (!true_state_path.empty() && !std::filesystem::exists(true_state_path))
      fail("problem.true_state", "file not found: " + true_state_path);
    if (!(load_scale > 0.0)) fail("problem.load_scale", "must be positive");
    if (!(sigma2 >= 0.0)) fail("problem.sigma2", "must be nonnegative");
    if (snapshots < 1) fail("problem.snapshots", "must be >= 1");
    if (!(theta_max > 0.0)) fail("problem.theta_max", "must be positive");
    if (!(v_max > 0.0)) fail("problem.v_max", "must be positive");
    if (sites < 1) fail("sites.count", "must be >= 1");
    if (partition != "contiguous") fail("sites.partition", "only 'contiguous' is supported");
    if (!(alpha > 0.0 && alpha <= 1.0)) fail("algorithm.alpha", "must lie in (0, 1]");
    if (exchanges < 1) fail("algorithm.exchanges", "must be >= 1");
    if (max_updates < 0) fail("algorithm.max_updates", "must be >= 0");
    if (!(stop_tol > 0.0)) fail("algorithm.stop_tol", "must be positive");
    if (!(ridge_scale >= 0.0)) fail("algorithm.ridge_scale", "must be nonnegative");
    if (!(condition_cap > 1.0)) fail("algorithm.condition_cap", "must exceed 1");
    if (!(beta > 0.0 && beta < 1.0)) fail("gossip.beta", "must lie in (0, 1)");
    if (!(link_failure_prob >= 0.0 && link_failure_prob < 1.0))
      fail("gossip.link_failure_prob", "must lie in [0, 1)");
    if (comm_interval < 1) fail("gossip.comm_interval", "must be >= 1");
    if (protocol == gossip::Protocol::URE && sites < 2 && algorithm != Algorithm::Centralized)
      fail("gossip.protocol", "URE needs at least two sites");
    for (auto [a, b] : edges)
      if (a < 1 || b < 1 || a > sites || b > sites || a == b)
        fail("gossip.edges", "edge endpoints must be distinct agents in [1, sites.count]");
    if (!(step_c >= 0.0)) fail("diffusion.step", "must be nonnegative");
    if (total_exchanges < 0) fail("diffusion.total_exchanges", "must be >= 0");
    if (algorithm == Algorithm::Diffusion && snapshots != 1)
      fail("problem.snapshots", "the diffusion baseline runs on a single snapshot");
    if (certificate_samples < 2) fail("certificate.samples", "must be >= 2");
    if (!(xi > 0.0 && xi < 0.5)) fail("certificate.xi", "must lie in (0, 1/2)");
    if (certificate_region != "operating" && certificate_region != "box")
      fail("certificate.region", "must be 'operating' or 'box'");
    if (!(region_theta > 0.0)) fail("certificate.region_theta", "must be positive");
    if (!(region_v > 0.0)) fail("certificate.region_v", "must be positive");
    if (repetitions < 1) fail("run.repetitions", "must be >= 1");
    if (output_dir.empty()) fail("run.output_dir", "must not be empty");
  }
};

namespace detail {

using boost::property_tree::ptree;

class Reader {
 public:
  explicit Reader(const ptree& root) : root_(root) {}

  template <class T>
  void get(const char* section, const char* key, T& out) {
    const std::string path = std::string(section) + "." + key;
    used_.insert(path);
    const auto sec = root_.get_child_optional(section);
    if (!sec) return;
    const auto v = sec->get_optional<std::string>(key);
    if (!v) return;
    out = convert<T>(path, trim(*v));
  }

  /// Fails on any key that was never requested.
  void reject_unknown() const {
    static const std::set<std::string> sections{"problem", "sites",       "algorithm", "gossip",
                                                "diffusion", "certificate", "run"};
    for (const auto& [name, sec] : root_) {
      if (!sec.data().empty() && sec.empty()) throw ConfigError(name, "key outside any section");
      if (!sections.count(name)) throw ConfigError(name, "unknown section");
      for (const auto& [key, _] : sec) {
        const std::string path = name + "." + key;
        if (!used_.count(path)) throw ConfigError(path, "unknown key");
      }
    }
  }

 private:
  static std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\"");
    const auto e = s.find_last_not_of(" \t\"");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }

  template <class T>
  static T convert(const std::string& path, const std::string& s) {
    if constexpr (std::is_same_v<T, std::string>) {
      return s;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (s == "true" || s == "1" || s == "yes") return true;
      if (s == "false" || s == "0" || s == "no") return false;
      throw ConfigError(path, "expected a boolean, got '" + s + "'");
    } else {
      std::istringstream is(s);
      T v{};
      is >> v;
      if (!is || !is.eof()) throw ConfigError(path, "expected a number, got '" + s + "'");
      if constexpr (std::is_floating_point_v<T>)
        if (!std::isfinite(v)) throw ConfigError(path, "must be finite");
      return v;
    }
  }

  const ptree& root_;
  std::set<std::string> used_;
};

template <class E>
E pick(const std::string& path, const std::string& value, std::initializer_list<std::pair<const char*, E>> options) {
  for (const auto& [name, e] : options)
    if (value == name) return e;
  std::string allowed;
  for (const auto& [name, _] : options) allowed += (allowed.empty() ? "" : ", ") + std::string(name);
  throw ConfigError(path, "unknown value '" + value + "' (expected one of: " + allowed + ")");
}

inline std::vector<std::pair<int, int>> parse_edges(const std::string& s) {
  std::vector<std::pair<int, int>> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) {
    if (tok.back() == ',') tok.pop_back();
    const auto dash = tok.find('-');
    if (dash == std::string::npos) throw ConfigError("gossip.edges", "expected pairs like 1-2, got '" + tok + "'");
    try {
      out.emplace_back(std::stoi(tok.substr(0, dash)), std::stoi(tok.substr(dash + 1)));
    } catch (const std::exception&) {
      throw ConfigError("gossip.edges", "malformed edge '" + tok + "'");
    }
  }
  return out;
}

}  // namespace detail

/// Parses INI text. Relative paths (case, true state, output directory)
/// resolve against `base_dir`.
[[nodiscard]] inline ExperimentConfig parse_config(const std::string& text, const std::string& base_dir = ".",
                                                 const std::string& default_run_id = "run") {
  boost::property_tree::ptree root;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(e.message(), static_cast<int>(e.line()));
  }
  detail::Reader rd(root);
  ExperimentConfig c;
  c.run_id = default_run_id;
  std::string s;

  rd.get("problem", "case", c.case_path);
  rd.get("problem", "true_state", c.true_state_path);
  rd.get("problem", "load_scale", c.load_scale);
  rd.get("problem", "sigma2", c.sigma2);
  rd.get("problem", "snapshots", c.snapshots);
  rd.get("problem", "theta_max", c.theta_max);
  rd.get("problem", "v_max", c.v_max);

  rd.get("sites", "count", c.sites);
  rd.get("sites", "partition", c.partition);

  s = to_string(c.algorithm);
  rd.get("algorithm", "kind", s);
  c.algorithm = detail::pick<Algorithm>("algorithm.kind", s,
                                        {{"centralized", Algorithm::Centralized},
                                         {"ggn", Algorithm::Ggn},
                                         {"diffusion", Algorithm::Diffusion}});
  rd.get("algorithm", "alpha", c.alpha);
  rd.get("algorithm", "exchanges", c.exchanges);
  s = "constant";
  rd.get("algorithm", "schedule", s);
  c.schedule = detail::pick<ExchangeSchedule::Kind>(
      "algorithm.schedule", s,
      {{"constant", ExchangeSchedule::Kind::Constant}, {"incrementing", ExchangeSchedule::Kind::Incrementing}});
  rd.get("algorithm", "max_updates", c.max_updates);
  rd.get("algorithm", "stop_tol", c.stop_tol);
  rd.get("algorithm", "ridge_scale", c.ridge_scale);
  rd.get("algorithm", "condition_cap", c.condition_cap);
  rd.get("algorithm", "record_discrepancy", c.record_discrepancy);

  s = "cse";
  rd.get("gossip", "protocol", s);
  c.protocol = detail::pick<gossip::Protocol>("gossip.protocol", s,
                                              {{"cse", gossip::Protocol::CSE}, {"ure", gossip::Protocol::URE}});
  s = "complete";
  rd.get("gossip", "topology", s);
  c.topology = detail::pick<TopologyKind>("gossip.topology", s,
                                          {{"complete", TopologyKind::Complete},
                                           {"ring", TopologyKind::Ring},
                                           {"path", TopologyKind::Path},
                                           {"edges", TopologyKind::Edges}});
  s.clear();
  rd.get("gossip", "edges", s);
  c.edges = detail::parse_edges(s);
  if (c.topology == TopologyKind::Edges && c.edges.empty())
    throw ConfigError("gossip.edges", "required when gossip.topology = edges");
  rd.get("gossip", "beta", c.beta);
  rd.get("gossip", "link_failure_prob", c.link_failure_prob);
  rd.get("gossip", "comm_interval", c.comm_interval);

  s = "diminishing";
  rd.get("diffusion", "schedule", s);
  c.step_kind = detail::pick<StepSchedule::Kind>(
      "diffusion.schedule", s,
      {{"diminishing", StepSchedule::Kind::Diminishing}, {"constant", StepSchedule::Kind::Constant}});
  rd.get("diffusion", "step", c.step_c);
  rd.get("diffusion", "total_exchanges", c.total_exchanges);

  rd.get("certificate", "enabled", c.certificate);
  rd.get("certificate", "samples", c.certificate_samples);
  rd.get("certificate", "xi", c.xi);
  rd.get("certificate", "region", c.certificate_region);
  rd.get("certificate", "region_theta", c.region_theta);
  rd.get("certificate", "region_v", c.region_v);

  rd.get("run", "repetitions", c.repetitions);
  rd.get("run", "seed", c.seed);
  rd.get("run", "output_dir", c.output_dir);
  rd.get("run", "run_id", c.run_id);
  rd.reject_unknown();

  namespace fs = std::filesystem;
  auto resolve = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (fs::path(base_dir) / p).lexically_normal().string();
  };
  resolve(c.case_path);
  resolve(c.true_state_path);
  resolve(c.output_dir);
  c.validate();
  return c;
}

/// Reads a config file; its directory anchors relative paths and its stem is
/// the default run id.
[[nodiscard]] inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::filesystem::path p(path);
  return parse_config(ss.str(), p.parent_path().empty() ? "." : p.parent_path().string(), p.stem().string());
}

}  // namespace ggn::experiment
