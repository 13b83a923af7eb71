#pragma once

// Experiment configuration, presets, seeded execution and CSV output.
//
// Config files are flat `key = value` text with `#` comments. Resolution order
// is preset defaults < file keys < command-line overrides; unknown keys and
// out-of-range values raise ConfigError naming the key.

#include "qrgt/engine.hpp"
#include "qrgt/network.hpp"
#include "qrgt/problems.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace qrgt {

inline constexpr const char* kMnistPathEnv = "QRGT_MNIST_PATH";
inline constexpr const char* kCsvHeader =
    "epoch,consensus_error,grad_norm,f_gap,ds,dist_mean,wall_ms,wire_bits_cum";

enum class ProblemKind { Synthetic, Mnist };

struct RunConfig {
  std::string preset;
  ProblemKind problem = ProblemKind::Synthetic;
  SyntheticSpec synthetic;
  std::string mnist_path;
  /// MNIST only: number of principal vectors.
  Eigen::Index mnist_r = 5;
  Topology topology = Topology::ring(16);
  std::string edges_path;
  AlgoConfig algo;
  double alpha_hat = 0.01;
  /// When set, used verbatim instead of the α̂ normalization.
  std::optional<double> alpha;
  std::string output_path = "trace.csv";

  int n() const { return problem == ProblemKind::Synthetic ? synthetic.n : topology.n; }
};

using RawConfig = std::map<std::string, std::string>;

// --- parsing ----------------------------------------------------------------

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Parses `key = value` lines. `source` prefixes error messages.
inline RawConfig parse_kv_text(const std::string& text, const std::string& source = "<config>") {
  RawConfig raw;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("", source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("", source + ":" + std::to_string(lineno) + ": empty key");
    raw[key] = value;
  }
  return raw;
}

inline RawConfig read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_kv_text(ss.str(), path);
}

inline RawConfig preset_values(const std::string& name) {
  if (name == "fig2-synthetic") {
    return {{"problem", "synthetic"}, {"n", "16"},           {"m", "1000"},
            {"d", "10"},              {"r", "5"},            {"eigengap", "0.8"},
            {"topology", "ring"},     {"t", "1"},            {"alpha_hat", "0.01"},
            {"max_epochs", "10000"},  {"ds_tol", "1e-8"}};
  }
  if (name == "fig3-mnist") {
    return {{"problem", "mnist"},     {"n", "16"},           {"d", "784"},
            {"r", "5"},               {"topology", "ring"},  {"topology.p", "0.3"},
            {"t", "1"},               {"alpha_hat", "0.01"}, {"max_epochs", "2000"},
            {"ds_tol", "1e-8"}};
  }
  throw ConfigError("preset", "unknown preset '" + name + "' (fig2-synthetic, fig3-mnist)");
}

namespace detail {

inline long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected an integer, got '" + v + "'");
  }
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected an unsigned integer, got '" + v + "'");
  }
}

inline double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError(key, "expected a boolean, got '" + v + "'");
}

template <class Fn>
void with_key(const RawConfig& raw, const std::string& key, Fn&& fn) {
  if (auto it = raw.find(key); it != raw.end()) fn(it->second);
}

}  // namespace detail

inline const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "preset",     "problem",    "n",          "m",          "d",
      "r",          "eigengap",   "sigma0",     "mnist_path", "topology",
      "topology.p", "topology.edges", "algorithm", "compression", "bits",
      "t",          "alpha_hat",  "alpha",      "max_epochs", "ds_tol",
      "seed",       "retraction", "enforce_safety", "threads", "wall_time",
      "output"};
  return keys;
}

/// Builds a validated RunConfig from file keys and overrides. The preset named
/// by either layer is expanded underneath both.
inline RunConfig resolve_config(const RawConfig& file, const RawConfig& overrides = {}) {
  RawConfig merged = file;
  for (const auto& [k, v] : overrides) merged[k] = v;
  RawConfig raw;
  if (auto it = merged.find("preset"); it != merged.end() && !it->second.empty())
    raw = preset_values(it->second);
  for (const auto& [k, v] : merged) raw[k] = v;

  const auto& keys = known_keys();
  for (const auto& [k, v] : raw)
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw ConfigError(k, "unknown configuration key");

  using namespace detail;
  RunConfig cfg;
  with_key(raw, "preset", [&](const std::string& v) { cfg.preset = v; });
  with_key(raw, "problem", [&](const std::string& v) {
    if (v == "synthetic") cfg.problem = ProblemKind::Synthetic;
    else if (v == "mnist") cfg.problem = ProblemKind::Mnist;
    else throw ConfigError("problem", "expected synthetic or mnist, got '" + v + "'");
  });

  int n = 16;
  with_key(raw, "n", [&](const std::string& v) { n = static_cast<int>(to_int("n", v)); });
  if (n < 1) throw ConfigError("n", "must be >= 1");
  cfg.synthetic.n = n;
  with_key(raw, "m", [&](const std::string& v) { cfg.synthetic.m = to_int("m", v); });
  with_key(raw, "d", [&](const std::string& v) { cfg.synthetic.d = to_int("d", v); });
  with_key(raw, "r", [&](const std::string& v) { cfg.synthetic.r = to_int("r", v); });
  cfg.mnist_r = cfg.synthetic.r;
  with_key(raw, "eigengap", [&](const std::string& v) { cfg.synthetic.eigengap = to_real("eigengap", v); });
  with_key(raw, "sigma0", [&](const std::string& v) { cfg.synthetic.sigma0 = to_real("sigma0", v); });
  with_key(raw, "mnist_path", [&](const std::string& v) { cfg.mnist_path = v; });
  if (const char* env = std::getenv(kMnistPathEnv); env && *env) cfg.mnist_path = env;

  if (cfg.synthetic.m < 1) throw ConfigError("m", "must be >= 1");
  if (cfg.synthetic.r < 1) throw ConfigError("r", "must be >= 1");
  if (cfg.synthetic.d < cfg.synthetic.r) throw ConfigError("d", "must be >= r");
  if (!(cfg.synthetic.eigengap > 0.0 && cfg.synthetic.eigengap < 1.0))
    throw ConfigError("eigengap", "must lie in (0, 1)");

  std::string topo = "ring";
  double p = 0.3;
  with_key(raw, "topology", [&](const std::string& v) { topo = v; });
  with_key(raw, "topology.p", [&](const std::string& v) { p = to_real("topology.p", v); });
  with_key(raw, "topology.edges", [&](const std::string& v) { cfg.edges_path = v; });

  std::uint64_t seed = 0;
  with_key(raw, "seed", [&](const std::string& v) { seed = to_u64("seed", v); });
  cfg.synthetic.seed = seed;
  cfg.algo.seed = seed;

  if (topo == "ring") {
    cfg.topology = Topology::ring(n);
  } else if (topo == "complete") {
    cfg.topology = Topology::complete(n);
  } else if (topo == "er") {
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("topology.p", "must lie in (0, 1]");
    cfg.topology = Topology::erdos_renyi(n, p, seed);
  } else if (topo == "edges") {
    if (cfg.edges_path.empty())
      throw ConfigError("topology.edges", "required when topology = edges");
    cfg.topology = Topology::explicit_edges(n, {});
  } else {
    throw ConfigError("topology", "expected ring, er, complete or edges, got '" + topo + "'");
  }

  with_key(raw, "algorithm", [&](const std::string& v) {
    if (v == "qrgt") cfg.algo.algorithm = Algorithm::QRGT;
    else if (v == "rgt") cfg.algo.algorithm = Algorithm::RGT;
    else throw ConfigError("algorithm", "expected qrgt or rgt, got '" + v + "'");
  });
  with_key(raw, "compression", [&](const std::string& v) {
    if (v == "dithered") cfg.algo.compression = Compression::Dithered;
    else if (v == "landing") cfg.algo.compression = Compression::Landing;
    else if (v == "nearest") cfg.algo.compression = Compression::Nearest;
    else if (v == "exact") cfg.algo.compression = Compression::Exact;
    else throw ConfigError("compression", "expected dithered, landing, nearest or exact");
  });
  with_key(raw, "bits", [&](const std::string& v) {
    const long long b = to_int("bits", v);
    if (b < 1 || b > 32) throw ConfigError("bits", "must lie in [1, 32], got " + v);
    cfg.algo.bits = BitWidth(static_cast<int>(b));
  });
  with_key(raw, "t", [&](const std::string& v) {
    const long long t = to_int("t", v);
    if (t < 1) throw ConfigError("t", "must be >= 1");
    cfg.algo.t = static_cast<int>(t);
  });
  with_key(raw, "alpha_hat", [&](const std::string& v) { cfg.alpha_hat = to_real("alpha_hat", v); });
  if (!(cfg.alpha_hat > 0.0)) throw ConfigError("alpha_hat", "must be positive");
  with_key(raw, "alpha", [&](const std::string& v) {
    cfg.alpha = to_real("alpha", v);
    if (!(*cfg.alpha > 0.0)) throw ConfigError("alpha", "must be positive");
  });
  with_key(raw, "max_epochs", [&](const std::string& v) {
    const long long k = to_int("max_epochs", v);
    if (k < 1) throw ConfigError("max_epochs", "must be >= 1");
    cfg.algo.max_epochs = static_cast<int>(k);
  });
  with_key(raw, "ds_tol", [&](const std::string& v) {
    cfg.algo.ds_tolerance = to_real("ds_tol", v);
    if (!(cfg.algo.ds_tolerance >= 0.0)) throw ConfigError("ds_tol", "must be >= 0");
  });
  with_key(raw, "retraction", [&](const std::string& v) {
    if (v == "qr") cfg.algo.retraction = Retraction::QR;
    else if (v == "polar") cfg.algo.retraction = Retraction::Polar;
    else throw ConfigError("retraction", "expected qr or polar, got '" + v + "'");
  });
  with_key(raw, "enforce_safety", [&](const std::string& v) {
    cfg.algo.enforce_safety = to_bool("enforce_safety", v);
  });
  with_key(raw, "threads", [&](const std::string& v) {
    const long long k = to_int("threads", v);
    if (k < 1) throw ConfigError("threads", "must be >= 1");
    cfg.algo.threads = static_cast<int>(k);
  });
  with_key(raw, "wall_time", [&](const std::string& v) {
    cfg.algo.record_wall_time = to_bool("wall_time", v);
  });
  with_key(raw, "output", [&](const std::string& v) { cfg.output_path = v; });

  if (cfg.problem == ProblemKind::Mnist && cfg.mnist_path.empty())
    throw ConfigError("mnist_path", "required for problem = mnist (or set " +
                                        std::string(kMnistPathEnv) + ")");
  if (cfg.problem == ProblemKind::Synthetic) {
    try {
      cfg.synthetic.validate();
    } catch (const ValidationError& e) {
      throw ConfigError("synthetic", e.what());
    }
  }
  return cfg;
}

/// Full resolved configuration as (key, value) pairs, for provenance.
inline std::vector<std::pair<std::string, std::string>> describe(const RunConfig& cfg) {
  auto real = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  const char* topo = "ring";
  switch (cfg.topology.kind) {
    case TopologyKind::Ring: topo = "ring"; break;
    case TopologyKind::ErdosRenyi: topo = "er"; break;
    case TopologyKind::Complete: topo = "complete"; break;
    case TopologyKind::ExplicitEdges: topo = "edges"; break;
  }
  const char* comp = "dithered";
  switch (cfg.algo.compression) {
    case Compression::Dithered: comp = "dithered"; break;
    case Compression::Landing: comp = "landing"; break;
    case Compression::Nearest: comp = "nearest"; break;
    case Compression::Exact: comp = "exact"; break;
  }
  std::vector<std::pair<std::string, std::string>> out = {
      {"preset", cfg.preset.empty() ? "none" : cfg.preset},
      {"problem", cfg.problem == ProblemKind::Synthetic ? "synthetic" : "mnist"},
      {"n", std::to_string(cfg.n())},
  };
  if (cfg.problem == ProblemKind::Synthetic) {
    out.insert(out.end(), {{"m", std::to_string(cfg.synthetic.m)},
                           {"d", std::to_string(cfg.synthetic.d)},
                           {"r", std::to_string(cfg.synthetic.r)},
                           {"eigengap", real(cfg.synthetic.eigengap)},
                           {"sigma0", real(cfg.synthetic.sigma0)}});
  } else {
    out.insert(out.end(), {{"mnist_path", cfg.mnist_path}, {"r", std::to_string(cfg.mnist_r)}});
  }
  out.emplace_back("topology", topo);
  if (cfg.topology.kind == TopologyKind::ErdosRenyi) out.emplace_back("topology.p", real(cfg.topology.p));
  if (cfg.topology.kind == TopologyKind::ExplicitEdges) out.emplace_back("topology.edges", cfg.edges_path);
  out.insert(out.end(),
             {{"algorithm", cfg.algo.algorithm == Algorithm::QRGT ? "qrgt" : "rgt"},
              {"compression", comp},
              {"bits", std::to_string(cfg.algo.bits.bits())},
              {"t", std::to_string(cfg.algo.t)},
              {"alpha_hat", real(cfg.alpha_hat)},
              {"max_epochs", std::to_string(cfg.algo.max_epochs)},
              {"ds_tol", real(cfg.algo.ds_tolerance)},
              {"seed", std::to_string(cfg.algo.seed)},
              {"retraction", cfg.algo.retraction == Retraction::QR ? "qr" : "polar"},
              {"enforce_safety", cfg.algo.enforce_safety ? "true" : "false"},
              {"wall_time", cfg.algo.record_wall_time ? "true" : "false"}});
  if (cfg.alpha) out.emplace_back("alpha", real(*cfg.alpha));
  return out;
}

// --- execution --------------------------------------------------------------

inline ProblemInstance build_instance(const RunConfig& cfg) {
  if (cfg.problem == ProblemKind::Synthetic) return generate_synthetic(cfg.synthetic);
  return load_mnist(cfg.mnist_path, cfg.topology.n, cfg.mnist_r, cfg.algo.seed, 784);
}

inline MixingMatrix build_mixing(const RunConfig& cfg) {
  if (cfg.topology.kind == TopologyKind::ExplicitEdges) {
    return build_metropolis(Topology::explicit_edges(cfg.topology.n, read_edge_list(cfg.edges_path)),
                            cfg.algo.t);
  }
  return build_metropolis(cfg.topology, cfg.algo.t);
}

/// α = n·α̂/Σm_i for synthetic data, α̂/(total rows) for MNIST.
inline double effective_alpha(const RunConfig& cfg, const ProblemInstance& inst) {
  if (cfg.alpha) return *cfg.alpha;
  const double rows = static_cast<double>(inst.total_rows());
  if (cfg.problem == ProblemKind::Synthetic) return inst.n() * cfg.alpha_hat / rows;
  return cfg.alpha_hat / rows;
}

inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_csv(std::ostream& out, const RunConfig& cfg, const RunTrace& trace) {
  for (const auto& [k, v] : describe(cfg)) out << "# " << k << " = " << v << '\n';
  out << "# alpha = " << format_real(trace.alpha) << '\n';
  out << "# termination = " << to_string(trace.reason) << '\n';
  out << kCsvHeader << '\n';
  for (const auto& row : trace.rows) {
    const auto& m = row.metrics;
    out << row.epoch << ',' << format_real(m.consensus_error) << ',' << format_real(m.grad_norm)
        << ',' << format_real(m.f_gap) << ',' << format_real(m.ds) << ','
        << format_real(m.dist_mean) << ',' << format_real(row.wall_ms) << ','
        << row.wire_bits_cum << '\n';
  }
}

struct ExecResult {
  int exit_code = 0;
  RunTrace trace;
};

inline void write_csv_file(const std::string& path, const RunConfig& cfg, const RunTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot open output '" + path + "' for writing");
  write_csv(out, cfg, trace);
  if (!out) throw IngestionError("write to '" + path + "' failed");
}

/// Runs one configuration and writes its CSV. Exit codes: 0 for MaxEpochs or
/// DsTolerance, 2 for Diverged, 1 for configuration or I/O errors (no output
/// file is created in that case).
inline ExecResult execute(const RunConfig& cfg, std::ostream& log) {
  ExecResult res;
  try {
    const ProblemInstance inst = build_instance(cfg);
    const MixingMatrix W = build_mixing(cfg);
    if (cfg.topology.kind == TopologyKind::ErdosRenyi)
      log << "er graph: connected after " << W.resamples() << " resample(s)\n";
    AlgoConfig algo = cfg.algo;
    algo.alpha = effective_alpha(cfg, inst);
    res.trace = run(inst, W, algo);
    for (const auto& w : res.trace.warnings) log << "warning: " << w << '\n';
    write_csv_file(cfg.output_path, cfg, res.trace);
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    res.exit_code = 1;
    return res;
  }
  const auto& tr = res.trace;
  const double final_ds = tr.rows.empty() ? std::nan("") : tr.rows.back().metrics.ds;
  const std::int64_t bits = tr.rows.empty() ? 0 : tr.rows.back().wire_bits_cum;
  log << "termination=" << to_string(tr.reason) << " epochs=" << tr.rows.size()
      << " final_ds=" << format_real(final_ds) << " payload_bits=" << bits;
  if (tr.reason == Termination::Diverged) log << " (" << tr.diverged_what << ')';
  log << '\n';
  res.exit_code = tr.reason == Termination::Diverged ? 2 : 0;
  return res;
}

inline const std::vector<std::string>& sweep_keys() {
  static const std::vector<std::string> keys = {"bits", "alpha_hat", "t", "topology.p", "n"};
  return keys;
}

/// `base.csv` + key=value → `base_key-value.csv`.
inline std::string sweep_output_path(const std::string& base, const std::string& key,
                                     const std::string& value) {
  std::string stem = base;
  std::string ext;
  if (auto dot = base.rfind('.'); dot != std::string::npos && base.find('/', dot) == std::string::npos) {
    stem = base.substr(0, dot);
    ext = base.substr(dot);
  }
  return stem + "_" + key + "-" + value + ext;
}

inline std::string sweep_index_path(const std::string& base) {
  std::string stem = base;
  if (auto dot = base.rfind('.'); dot != std::string::npos && base.find('/', dot) == std::string::npos)
    stem = base.substr(0, dot);
  return stem + "_index.csv";
}

/// Runs the configuration once per value of `key`, all on the same seed, and
/// writes an index of (value, final d_s, final consensus error). Returns the
/// largest exit code.
inline int sweep(const RawConfig& file, const RawConfig& overrides, const std::string& key,
                 const std::vector<std::string>& values, std::ostream& log) {
  const auto& allowed = sweep_keys();
  if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
    log << "error: " << ConfigError(key, "cannot sweep this key (bits, alpha_hat, t, topology.p, n)").what()
        << '\n';
    return 1;
  }
  if (values.empty()) {
    log << "error: sweep needs at least one value\n";
    return 1;
  }
  std::vector<RunConfig> cfgs;
  try {
    for (const auto& v : values) {
      RawConfig ov = overrides;
      ov[key] = v;
      cfgs.push_back(resolve_config(file, ov));
    }
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return 1;
  }
  const std::string base = cfgs.front().output_path;
  std::ostringstream index;
  index << "value,final_ds,final_consensus_error,termination,file\n";
  int worst = 0;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    RunConfig cfg = cfgs[i];
    cfg.output_path = sweep_output_path(base, key, values[i]);
    log << key << " = " << values[i] << ": ";
    ExecResult res = execute(cfg, log);
    worst = std::max(worst, res.exit_code);
    if (res.exit_code == 1) continue;
    const auto& rows = res.trace.rows;
    index << values[i] << ','
          << format_real(rows.empty() ? std::nan("") : rows.back().metrics.ds) << ','
          << format_real(rows.empty() ? std::nan("") : rows.back().metrics.consensus_error)
          << ',' << to_string(res.trace.reason) << ',' << cfg.output_path << '\n';
  }
  std::ofstream out(sweep_index_path(base), std::ios::binary);
  if (!out) {
    log << "error: cannot write sweep index '" << sweep_index_path(base) << "'\n";
    return 1;
  }
  out << index.str();
  return worst;
}

}  // namespace qrgt
