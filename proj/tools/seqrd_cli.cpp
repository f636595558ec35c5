// Command-line front end: closed-form and numerical sum-rates, distortion
// sweeps, Monte Carlo runs, and self-verification checks.
//
// Exit codes: 0 ok, 1 verification failure, 2 config error, 3 infeasible or
// out-of-region request with no fallback.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "seqrd/seqrd.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;

struct CommonArgs {
  std::string config_path;
  std::string out_path;
  std::string format = "csv";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> kinds;
};

// Data goes to stdout or --out; logs stay on stderr.
class OutputTarget {
 public:
  explicit OutputTarget(const std::string& path) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw seqrd::config_error("cannot open output file: " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

struct RateOutcome {
  double rate_bits = 0.0;
  std::string method;  // closed_form | numerical | discrete
};

bool is_gaussian(const seqrd::SourceSpec& spec) {
  return spec.kind != seqrd::SourceKind::binary_markov;
}

RateOutcome rate_for_kind(const seqrd::SourceSpec& spec, const seqrd::DistortionTuple& d,
                          const seqrd::SystemKind& kind,
                          const seqrd::SolverOptions& options) {
  using namespace seqrd;
  if (!is_gaussian(spec)) {
    const int k_eff = equivalent_delay(kind, spec.frames);
    if (spec.frames != 3) throw invalid_spec_error("binary rates support three frames");
    DiscreteProblem prob;
    prob.source = build_binary_markov(spec.crossovers[0], spec.crossovers[1]);
    prob.d = d;
    if (kind.tag == SystemTag::JC || k_eff >= spec.frames - 1) {
      return {jc_rd_discrete(prob).rate_bits, "discrete"};
    }
    if (kind.tag == SystemTag::CNC && k_eff == 1) {
      return {cnc_sum_rate_discrete(prob).rate_bits, "discrete"};
    }
    throw no_closed_form_error("binary rates: only JC and CNC1 are solvable");
  }

  const CovMatrix sigma = build_covariance(spec);
  const int k_eff = equivalent_delay(kind, spec.frames);
  const bool first_order = spec.kind == SourceKind::gauss_markov_1;
  if (kind.tag == SystemTag::JC) {
    if (in_region_jc(sigma, d)) return {jc_rate_gm(sigma, d), "closed_form"};
  } else if (k_eff == 0 && first_order) {
    if (in_region_cc(spec, d)) return {cc_sum_rate_gm(spec, d), "closed_form"};
  } else {
    try {
      return {cnc_sum_rate_gm(spec, d, k_eff), "closed_form"};
    } catch (const no_closed_form_error&) {
    }
  }
  OptProblem prob;
  prob.sigma_x = sigma;
  prob.d = d;
  prob.constraints = markov_constraints(kind, spec.frames);
  prob.options = options;
  const RDResult res = min_sum_rate(prob);
  if (!res.converged) {
    std::cerr << "warning: solver did not meet tolerances for " << to_string(kind) << "\n";
  }
  return {res.rate_bits, "numerical"};
}

std::vector<seqrd::SystemKind> resolve_kinds(const seqrd::Config& cfg,
                                             const CommonArgs& args) {
  if (!args.kinds.empty()) {
    std::vector<seqrd::SystemKind> out;
    for (const auto& name : args.kinds) out.push_back(seqrd::parse_system_kind(name));
    return out;
  }
  if (cfg.has("system", "kinds")) return seqrd::load_kinds(cfg);
  return {seqrd::kind_cc(), seqrd::kind_jc()};
}

int cmd_rates(const CommonArgs& args) {
  using namespace seqrd;
  const Config cfg = Config::parse_file(args.config_path);
  const SourceSpec spec = load_source_spec(cfg);
  const DistortionTuple d = load_distortion(cfg);
  SolverOptions options = load_solver_options(cfg);
  if (args.seed) options.seed = *args.seed;
  const auto kinds = resolve_kinds(cfg, args);

  OutputTarget out(args.out_path);
  std::ostream& os = out.stream();
  const bool csv = args.format == "csv";
  bool in_cc = false, in_jc = false;
  if (is_gaussian(spec)) {
    in_jc = in_region_jc(build_covariance(spec), d);
    in_cc = spec.kind == SourceKind::gauss_markov_1 && in_region_cc(spec, d);
  }
  if (csv) {
    os << "# schema: rates v1\n";
    os << "kind,rate_bits,method,in_region_cc,in_region_jc\n";
  }
  char buf[256];
  for (const auto& kind : kinds) {
    const RateOutcome r = rate_for_kind(spec, d, kind, options);
    if (csv) {
      std::snprintf(buf, sizeof(buf), "%s,%.6f,%s,%d,%d\n", to_string(kind).c_str(),
                    r.rate_bits, r.method.c_str(), in_cc ? 1 : 0, in_jc ? 1 : 0);
      os << buf;
    } else {
      std::snprintf(buf, sizeof(buf), "%-8s %.6f bits  (%s)\n", to_string(kind).c_str(),
                    r.rate_bits, r.method.c_str());
      os << buf;
    }
  }
  return kExitOk;
}

int cmd_sweep(const CommonArgs& args) {
  using namespace seqrd;
  const Config cfg = Config::parse_file(args.config_path);
  const SourceSpec spec = load_source_spec(cfg);
  OutputTarget out(args.out_path);
  std::ostream& os = out.stream();

  if (!is_gaussian(spec)) {
    const auto grid = load_grid(cfg, spec.frames);
    const auto rows = equivalence_scan(spec.crossovers[0], spec.crossovers[1], grid);
    write_scan_csv(os, rows);
    return kExitOk;
  }

  SolverOptions options = load_solver_options(cfg);
  if (args.seed) options.seed = *args.seed;
  const auto kinds = resolve_kinds(cfg, args);
  const auto grid = load_grid(cfg, spec.frames);
  const CovMatrix sigma = build_covariance(spec);

  os << "# schema: sweep v1\n";
  for (int j = 1; j <= spec.frames; ++j) os << "D" << j << ",";
  for (const auto& kind : kinds) os << "rate_" << to_string(kind) << "_bits,";
  for (const auto& kind : kinds) os << "gap_" << to_string(kind) << "_bits,";
  os << "in_region_cc,in_region_jc\n";

  char buf[64];
  for (const auto& d : grid) {
    if (d.size() != static_cast<size_t>(spec.frames)) {
      throw config_error("sweep grid tuple length mismatch");
    }
    const bool in_jc = in_region_jc(sigma, d);
    const bool in_cc =
        spec.kind == SourceKind::gauss_markov_1 && in_region_cc(spec, d);
    const RateOutcome base = rate_for_kind(spec, d, kind_jc(), options);
    std::vector<double> rates;
    for (const auto& kind : kinds) {
      rates.push_back(kind.tag == SystemTag::JC
                          ? base.rate_bits
                          : rate_for_kind(spec, d, kind, options).rate_bits);
    }
    for (double dj : d) {
      std::snprintf(buf, sizeof(buf), "%.6g,", dj);
      os << buf;
    }
    for (double r : rates) {
      std::snprintf(buf, sizeof(buf), "%.6f,", r);
      os << buf;
    }
    for (double r : rates) {
      std::snprintf(buf, sizeof(buf), "%.3e,", r - base.rate_bits);
      os << buf;
    }
    os << (in_cc ? 1 : 0) << "," << (in_jc ? 1 : 0) << "\n";
  }
  return kExitOk;
}

int cmd_simulate(const CommonArgs& args) {
  using namespace seqrd;
  const Config cfg = Config::parse_file(args.config_path);
  SimConfig sim = load_sim_config(cfg);
  if (args.seed) sim.seed = *args.seed;
  const std::string mode = cfg.has("sim", "mode") ? cfg.get_string("sim", "mode") : "dpcm";

  SimReport rep;
  if (mode == "dpcm") {
    rep = simulate_dpcm(sim);
  } else if (mode == "jc_test_channel") {
    rep = simulate_jc_testchannel(build_covariance(sim.spec), sim.d, sim.n, sim.seed);
  } else {
    throw config_error("config key [sim] mode: unknown mode: " + mode);
  }
  OutputTarget out(args.out_path);
  if (args.format == "csv") {
    write_report_csv(out.stream(), rep);
  } else {
    write_report_json(out.stream(), rep);
  }
  return kExitOk;
}

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

using CheckFn = std::function<CheckResult(const seqrd::Config*)>;

seqrd::SourceSpec example_spec() {
  return seqrd::make_gauss_markov_1({1.0, 1.0, 1.0}, {0.9, 0.9});
}

CheckResult check_closed_form_crosscheck(const seqrd::Config*) {
  using namespace seqrd;
  const auto spec = example_spec();
  const DistortionTuple d{0.05, 0.05, 0.05};
  const double cc = cc_sum_rate_gm(spec, d);
  const double jc = jc_rate_gm(build_covariance(spec), d);
  const auto stages = dpcm_stage_rates(spec, d);
  const bool ok = std::abs(cc - 4.3658) <= 1e-4 && std::abs(jc - 4.0870) <= 1e-4 &&
                  std::abs(stages.rates[0] - 2.1610) <= 1e-4 &&
                  std::abs(stages.rates[1] - 1.1024) <= 1e-4 &&
                  std::abs(stages.rates[2] - 1.1024) <= 1e-4;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "cc=%.4f jc=%.4f stages=(%.4f,%.4f,%.4f)", cc, jc,
                stages.rates[0], stages.rates[1], stages.rates[2]);
  return {"closed_form_crosscheck", ok, buf};
}

CheckResult check_solver_vs_closed_forms(const seqrd::Config*) {
  using namespace seqrd;
  const auto spec = example_spec();
  const DistortionTuple d{0.05, 0.05, 0.05};
  const CovMatrix sigma = build_covariance(spec);
  OptProblem prob;
  prob.sigma_x = sigma;
  prob.d = d;
  prob.constraints = markov_constraints(kind_cc(), 3);
  const double cc_solver = min_sum_rate(prob).rate_bits;
  prob.constraints.clear();
  const double jc_solver = min_sum_rate(prob).rate_bits;
  const double cc_closed = cc_sum_rate_gm(spec, d);
  const double jc_closed = jc_rate_gm(sigma, d);
  const bool ok =
      std::abs(cc_solver - cc_closed) <= 1e-3 && std::abs(jc_solver - jc_closed) <= 1e-3;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "|cc_err|=%.2e |jc_err|=%.2e",
                std::abs(cc_solver - cc_closed), std::abs(jc_solver - jc_closed));
  return {"solver_vs_closed_forms", ok, buf};
}

CheckResult check_cnc1_matches_jc(const seqrd::Config* cfg) {
  using namespace seqrd;
  SourceSpec spec = example_spec();
  DistortionTuple d{0.05, 0.05, 0.05};
  if (cfg != nullptr && cfg->has("source", "kind")) {
    spec = load_source_spec(*cfg);
    d = load_distortion(*cfg);
  }
  const CovMatrix sigma = build_covariance(spec);
  OptProblem prob;
  prob.sigma_x = sigma;
  prob.d = d;
  prob.constraints = markov_constraints(kind_cnc(1), spec.frames);
  const double cnc1 = min_sum_rate(prob).rate_bits;
  prob.constraints.clear();
  const double jc = min_sum_rate(prob).rate_bits;
  const double gap = cnc1 - jc;
  const bool ok = std::abs(gap) <= 1e-3;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "cnc1=%.4f jc=%.4f gap=%.2e in_jc=%d", cnc1, jc, gap,
                in_region_jc(sigma, d) ? 1 : 0);
  return {"cnc1_matches_jc", ok, buf};
}

CheckResult check_kdirect_identity(const seqrd::Config*) {
  using namespace seqrd;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    auto gen = seeded_rng_stream(2024, static_cast<std::uint64_t>(trial));
    const int t = 2 + trial % 2;
    const JointPmf p = random_pmf(std::vector<int>(static_cast<size_t>(2 * t), 2), gen);
    for (int k = 0; k + 1 <= t - 1; ++k) {
      worst = std::max(worst, kdirect_identity_residual(p, k));
    }
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "worst residual %.2e", worst);
  return {"kdirect_identity", worst <= 1e-10, buf};
}

CheckResult check_transforms(const seqrd::Config*) {
  using namespace seqrd;
  const RateTuple a = transform_rates(kind_cnc(1), kind_ncc(1), {1.0, 2.0, 3.0});
  const RateTuple b = transform_rates(kind_ncc(1), kind_cnc(1), {1.0, 2.0, 3.0});
  const RateTuple c = transform_rates(kind_cnc(2), kind_ncnc(1, 1), {1.0, 1.0, 1.0, 1.0});
  const bool ok = a == RateTuple{3.0, 3.0, 0.0} && b == RateTuple{0.0, 1.0, 5.0} &&
                  c == RateTuple{2.0, 1.0, 1.0, 0.0};
  return {"transforms", ok, ok ? "all fixtures exact" : "fixture mismatch"};
}

CheckResult check_counter_example(const seqrd::Config*) {
  using namespace seqrd;
  const double gap = counter_example_gap(0.9, 0.05, 0.05);
  const bool ok = std::abs(gap - 0.1394) <= 5e-3 && gap > 0.0;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "gap=%.6f bits", gap);
  return {"counter_example", ok, buf};
}

CheckResult check_binary_zero_distortion(const seqrd::Config*) {
  using namespace seqrd;
  DiscreteProblem prob;
  prob.source = build_binary_markov(0.1, 0.1);
  prob.d = {0.0, 0.0, 0.0};
  const double h = entropy(prob.source);
  const double jc = jc_rd_discrete(prob).rate_bits;
  const double cnc = cnc_sum_rate_discrete(prob).rate_bits;
  const bool ok = std::abs(jc - h) <= 1e-9 && std::abs(cnc - h) <= 1e-9;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "H=%.8f jc=%.8f cnc=%.8f", h, jc, cnc);
  return {"binary_zero_distortion", ok, buf};
}

int cmd_verify(const CommonArgs& args, const std::string& check_filter) {
  std::optional<seqrd::Config> cfg;
  if (!args.config_path.empty()) cfg = seqrd::Config::parse_file(args.config_path);

  const std::vector<std::pair<std::string, CheckFn>> checks = {
      {"closed_form_crosscheck", check_closed_form_crosscheck},
      {"solver_vs_closed_forms", check_solver_vs_closed_forms},
      {"cnc1_matches_jc", check_cnc1_matches_jc},
      {"kdirect_identity", check_kdirect_identity},
      {"transforms", check_transforms},
      {"counter_example", check_counter_example},
      {"binary_zero_distortion", check_binary_zero_distortion},
  };

  OutputTarget out(args.out_path);
  std::ostream& os = out.stream();
  bool all_pass = true;
  bool any_run = false;
  for (const auto& [name, fn] : checks) {
    if (!check_filter.empty() && check_filter != name) continue;
    any_run = true;
    const CheckResult r = fn(cfg ? &*cfg : nullptr);
    all_pass = all_pass && r.pass;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-24s %s  %s\n", r.name.c_str(),
                  r.pass ? "PASS" : "FAIL", r.detail.c_str());
    os << buf;
  }
  if (!any_run) {
    std::cerr << "unknown check: " << check_filter << "\n";
    return kExitConfig;
  }
  return all_pass ? kExitOk : kExitVerifyFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Delayed sequential source coding rates, sweeps, and simulations"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string check_filter;

  const auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* copt = sub->add_option("--config", args.config_path, "config file path");
    if (config_required) copt->required();
    sub->add_option("--out", args.out_path, "output file (default stdout)");
    sub->add_option("--format", args.format, "csv or text")
        ->check(CLI::IsMember({"csv", "text"}));
    sub->add_option("--seed", args.seed, "override the configured seed");
    sub->add_option("--kinds", args.kinds, "system kinds, e.g. CC CNC1 JC")
        ->delimiter(',');
  };

  auto* rates = app.add_subcommand("rates", "sum-rates for the configured systems");
  add_common(rates, true);
  auto* sweep = app.add_subcommand("sweep", "rates over a distortion grid");
  add_common(sweep, true);
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo runs");
  add_common(simulate, true);
  auto* verify = app.add_subcommand("verify", "self-checks with pass/fail table");
  add_common(verify, false);
  verify->add_option("--check", check_filter, "run a single named check");

  CLI11_PARSE(app, argc, argv);

  try {
    if (rates->parsed()) return cmd_rates(args);
    if (sweep->parsed()) return cmd_sweep(args);
    if (simulate->parsed()) return cmd_simulate(args);
    if (verify->parsed()) return cmd_verify(args, check_filter);
  } catch (const seqrd::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const seqrd::out_of_region_error& e) {
    std::cerr << "out of region: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const seqrd::infeasible_error& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const seqrd::no_closed_form_error& e) {
    std::cerr << "no applicable method: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const seqrd::invalid_spec_error& e) {
    std::cerr << "invalid specification: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
