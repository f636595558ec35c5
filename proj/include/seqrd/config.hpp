#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "seqrd/errors.hpp"
#include "seqrd/gauss_opt.hpp"
#include "seqrd/mc_sim.hpp"
#include "seqrd/source_model.hpp"

namespace seqrd {

// Sectioned key-value text: "[section]" headers, "key = value" lines,
// '#' starts a comment, lists are comma-separated.
class Config {
 public:
  static Config parse(std::istream& is) {
    Config cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      if (trimmed.front() == '[') {
        if (trimmed.back() != ']') {
          throw config_error("config line " + std::to_string(lineno) + ": unterminated section");
        }
        section = trim(trimmed.substr(1, trimmed.size() - 2));
        continue;
      }
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos) {
        throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
      }
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty()) {
        throw config_error("config line " + std::to_string(lineno) + ": empty key");
      }
      cfg.values_[section][key] = value;
    }
    return cfg;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw config_error("cannot open config file: " + path);
    return parse(is);
  }

  bool has(const std::string& section, const std::string& key) const {
    const auto s = values_.find(section);
    return s != values_.end() && s->second.count(key) > 0;
  }

  std::string get_string(const std::string& section, const std::string& key) const {
    const auto s = values_.find(section);
    if (s == values_.end() || s->second.count(key) == 0) {
      throw config_error("missing config key [" + section + "] " + key);
    }
    return s->second.at(key);
  }

  std::string get_string_or(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
    return has(section, key) ? get_string(section, key) : fallback;
  }

  double get_double(const std::string& section, const std::string& key) const {
    return to_double(get_string(section, key), section, key);
  }

  double get_double_or(const std::string& section, const std::string& key,
                       double fallback) const {
    return has(section, key) ? get_double(section, key) : fallback;
  }

  long long get_int(const std::string& section, const std::string& key) const {
    const std::string v = get_string(section, key);
    try {
      size_t pos = 0;
      const long long out = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw config_error("config key [" + section + "] " + key + ": not an integer: " + v);
    }
  }

  long long get_int_or(const std::string& section, const std::string& key,
                       long long fallback) const {
    return has(section, key) ? get_int(section, key) : fallback;
  }

  std::vector<double> get_double_list(const std::string& section,
                                      const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : split_list(get_string(section, key))) {
      out.push_back(to_double(item, section, key));
    }
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& section,
                                           const std::string& key) const {
    return split_list(get_string(section, key));
  }

 private:
  static std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ',')) {
      const std::string t = trim(item);
      if (!t.empty()) out.push_back(t);
    }
    return out;
  }

  static double to_double(const std::string& v, const std::string& section,
                          const std::string& key) {
    try {
      size_t pos = 0;
      const double out = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw config_error("config key [" + section + "] " + key + ": not a number: " + v);
    }
  }

  std::map<std::string, std::map<std::string, std::string>> values_;
};

inline SourceSpec load_source_spec(const Config& cfg) {
  const std::string kind = cfg.get_string("source", "kind");
  SourceSpec spec;
  if (kind == "gauss_markov_1") {
    spec = make_gauss_markov_1(cfg.get_double_list("source", "variances"),
                               cfg.get_double_list("source", "correlations"));
  } else if (kind == "gauss_markov_k") {
    spec = make_gauss_markov_k(static_cast<int>(cfg.get_int("source", "frames")),
                               cfg.get_double_list("source", "coefficients"),
                               cfg.get_double_or("source", "innovation_variance", 1.0));
  } else if (kind == "binary_markov") {
    spec = make_binary_markov_spec(cfg.get_double_list("source", "crossovers"));
  } else {
    throw config_error("config key [source] kind: unknown kind: " + kind);
  }
  try {
    validate_spec(spec);
  } catch (const invalid_spec_error& e) {
    throw config_error(std::string("config section [source]: ") + e.what());
  }
  return spec;
}

inline DistortionTuple load_distortion(const Config& cfg) {
  return cfg.get_double_list("distortion", "values");
}

// Grammar: CC | JC | CNC<k> | NCC<k> | NCNC<k1>_<k2>.
inline SystemKind parse_system_kind(const std::string& name) {
  const auto parse_int = [&](const std::string& s) {
    try {
      size_t pos = 0;
      const int v = std::stoi(s, &pos);
      if (pos != s.size() || v < 0) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw config_error("bad system kind: " + name);
    }
  };
  if (name == "CC") return kind_cc();
  if (name == "JC") return kind_jc();
  if (name.rfind("NCNC", 0) == 0) {
    const std::string rest = name.substr(4);
    const auto us = rest.find('_');
    if (us == std::string::npos) throw config_error("bad system kind: " + name);
    return kind_ncnc(parse_int(rest.substr(0, us)), parse_int(rest.substr(us + 1)));
  }
  if (name.rfind("NCC", 0) == 0) return kind_ncc(parse_int(name.substr(3)));
  if (name.rfind("CNC", 0) == 0) return kind_cnc(parse_int(name.substr(3)));
  throw config_error("bad system kind: " + name);
}

inline std::vector<SystemKind> load_kinds(const Config& cfg) {
  std::vector<SystemKind> out;
  for (const auto& name : cfg.get_string_list("system", "kinds")) {
    out.push_back(parse_system_kind(name));
  }
  if (out.empty()) throw config_error("config key [system] kinds: empty list");
  return out;
}

inline SolverOptions load_solver_options(const Config& cfg) {
  SolverOptions opt;
  opt.penalty_init = cfg.get_double_or("solver", "penalty_init", opt.penalty_init);
  opt.penalty_growth = cfg.get_double_or("solver", "penalty_growth", opt.penalty_growth);
  opt.penalty_rounds =
      static_cast<int>(cfg.get_int_or("solver", "penalty_rounds", opt.penalty_rounds));
  opt.max_inner_iterations = static_cast<int>(
      cfg.get_int_or("solver", "max_inner_iterations", opt.max_inner_iterations));
  opt.tol_chain = cfg.get_double_or("solver", "tol_chain", opt.tol_chain);
  opt.tol_mse = cfg.get_double_or("solver", "tol_mse", opt.tol_mse);
  opt.seed = static_cast<std::uint64_t>(
      cfg.get_int_or("solver", "seed", static_cast<long long>(opt.seed)));
  opt.multistart = static_cast<int>(cfg.get_int_or("solver", "multistart", opt.multistart));
  return opt;
}

inline SimConfig load_sim_config(const Config& cfg) {
  SimConfig sim;
  sim.spec = load_source_spec(cfg);
  sim.d = load_distortion(cfg);
  sim.n = cfg.get_int_or("sim", "n", sim.n);
  sim.seed = static_cast<std::uint64_t>(
      cfg.get_int_or("sim", "seed", static_cast<long long>(sim.seed)));
  sim.replications =
      static_cast<int>(cfg.get_int_or("sim", "replications", sim.replications));
  const std::string backend =
      cfg.get_string_or("sim", "backend", "ideal_test_channel");
  if (backend == "ideal_test_channel") {
    sim.backend = SimBackend::ideal_test_channel;
  } else if (backend == "uniform_scalar_quantizer") {
    sim.backend = SimBackend::uniform_scalar_quantizer;
  } else {
    throw config_error("config key [sim] backend: unknown backend: " + backend);
  }
  return sim;
}

// Distortion grid for sweeps: "product" spans [grid_min, grid_max]^T with
// grid_points per axis; "ray" walks grid_points steps along the ray direction.
inline std::vector<DistortionTuple> load_grid(const Config& cfg, int frames) {
  if (!cfg.has("distortion", "grid_points")) {
    return {load_distortion(cfg)};
  }
  const int points = static_cast<int>(cfg.get_int("distortion", "grid_points"));
  if (points < 0) throw config_error("config key [distortion] grid_points: negative");
  if (points == 0) return {};
  const double lo = cfg.get_double("distortion", "grid_min");
  const double hi = cfg.get_double("distortion", "grid_max");
  const std::string mode = cfg.get_string_or("distortion", "grid_mode", "product");
  std::vector<double> axis(static_cast<size_t>(points));
  for (int i = 0; i < points; ++i) {
    axis[static_cast<size_t>(i)] =
        points == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / (points - 1);
  }
  std::vector<DistortionTuple> grid;
  if (mode == "ray") {
    std::vector<double> ray(static_cast<size_t>(frames), 1.0);
    if (cfg.has("distortion", "ray")) ray = cfg.get_double_list("distortion", "ray");
    if (ray.size() != static_cast<size_t>(frames)) {
      throw config_error("config key [distortion] ray: length mismatch");
    }
    for (double tval : axis) {
      DistortionTuple d(ray.size());
      for (size_t j = 0; j < ray.size(); ++j) d[j] = tval * ray[j];
      grid.push_back(d);
    }
  } else if (mode == "product") {
    DistortionTuple d(static_cast<size_t>(frames), lo);
    std::vector<int> idx(static_cast<size_t>(frames), 0);
    while (true) {
      for (size_t j = 0; j < idx.size(); ++j) d[j] = axis[static_cast<size_t>(idx[j])];
      grid.push_back(d);
      int carry = frames - 1;
      while (carry >= 0) {
        if (++idx[static_cast<size_t>(carry)] < points) break;
        idx[static_cast<size_t>(carry)] = 0;
        --carry;
      }
      if (carry < 0) break;
    }
  } else {
    throw config_error("config key [distortion] grid_mode: unknown mode: " + mode);
  }
  return grid;
}

}  // namespace seqrd
