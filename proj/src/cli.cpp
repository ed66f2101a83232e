#include "phylosim/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "phylosim/dynamics.hpp"
#include "phylosim/errors.hpp"
#include "phylosim/experiments.hpp"
#include "phylosim/generators.hpp"
#include "phylosim/phylogeny.hpp"
#include "phylosim/polynomials.hpp"
#include "phylosim/rate_model.hpp"

namespace phylosim {

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t hash = 14695981039346656037ull;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 1099511628211ull;
  }
  return hash;
}

namespace {

constexpr int kSchemaVersion = 1;

struct Options {
  std::string subcommand;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::optional<std::string> engine;
  bool lineage = false;
  bool quiet = false;
};

[[noreturn]] void usage_error(const std::string& what) {
  fail(ErrorCode::config_error,
       what +
           "\nusage: phylosim <simulate|sample|generator-check|martingale-check|moments|stats|"
           "contain|dominate> --config PATH [--seed U64] [--out DIR] "
           "[--engine reference|thinning] [--lineage] [--quiet]");
}

Options parse_args(const std::vector<std::string>& args) {
  Options opt;
  if (args.empty()) usage_error("missing subcommand");
  opt.subcommand = args[0];
  const std::vector<std::string> known = {"simulate",  "sample", "generator-check",
                                          "martingale-check", "moments", "stats",
                                          "contain",   "dominate"};
  bool found = false;
  for (const auto& k : known) found = found || k == opt.subcommand;
  if (!found) usage_error("unknown subcommand '" + opt.subcommand + "'");
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& a = args[i];
    const auto next = [&]() -> const std::string& {
      if (i + 1 >= args.size()) usage_error("flag " + a + " needs a value");
      return args[++i];
    };
    if (a == "--config") {
      opt.config_path = next();
    } else if (a == "--seed") {
      opt.seed = std::stoull(next());
    } else if (a == "--out") {
      opt.out_dir = next();
    } else if (a == "--engine") {
      const std::string& e = next();
      if (e != "reference" && e != "thinning") usage_error("--engine must be reference or thinning");
      opt.engine = e;
    } else if (a == "--lineage") {
      opt.lineage = true;
    } else if (a == "--quiet") {
      opt.quiet = true;
    } else {
      usage_error("unknown flag '" + a + "'");
    }
  }
  if (opt.config_path.empty()) usage_error("--config is required");
  return opt;
}

nlohmann::json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_error, "cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(ErrorCode::config_error, std::string("config parse error: ") + e.what());
  }
  const int schema = j.value("schema", kSchemaVersion);
  if (schema != kSchemaVersion)
    fail(ErrorCode::config_error, "unsupported config schema " + std::to_string(schema));
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
  out << content;
  if (!out) fail(ErrorCode::io_error, "write failed for " + path.string());
}

struct Context {
  Options opt;
  nlohmann::json config;
  RateModel model;
  std::uint64_t seed = 1;
  std::string hash;
  std::filesystem::path out_dir;
  std::ostream* log = nullptr;

  int N() const { return config.value("N", 16); }
  double T() const { return config.value("T", 1.0); }
  std::size_t replicates() const { return config.value("replicates", std::size_t{100}); }

  nlohmann::json header() const {
    return {{"schema", kSchemaVersion},
            {"subcommand", opt.subcommand},
            {"config_hash", hash},
            {"seed", seed}};
  }
  void save_json(const std::string& name, nlohmann::json body) const {
    body["meta"] = header();
    write_text(out_dir / name, body.dump(2) + "\n");
  }
  void say(const std::string& line) const {
    if (!opt.quiet && log != nullptr) (*log) << line << '\n';
  }
};

RateModel model_from_config(const nlohmann::json& j) {
  RateModel model;
  if (j.contains("model"))
    model = model_from_json(j.at("model"));
  else if (j.contains("preset"))
    model = preset(j.at("preset").get<std::string>());
  else
    fail(ErrorCode::config_error, "config needs either 'preset' or 'model'");
  const ValidationReport report = validate(model);
  if (!report.ok) fail(ErrorCode::assumption_violated, report.to_string());
  return model;
}

Trait trait_from_config(const nlohmann::json& j, const TraitSpace& space) {
  if (space.kind == TraitSpace::Kind::finite) {
    const int label = j.is_object() ? j.value("label", 0) : j.get<int>();
    Trait t = Trait::finite(label);
    t.check_in(space);
    return t;
  }
  return Trait::real(j.is_object() ? j.value("value", 0.0) : j.get<double>());
}

FinitePhylogeny state_from_config(const Context& ctx) {
  const double unit = 1.0 / static_cast<double>(ctx.N());
  const nlohmann::json spec = ctx.config.value("state", nlohmann::json{{"type", "single"}});
  const std::string type = spec.value("type", "single");
  if (type == "single") {
    const double mass = spec.value("mass", 1.0);
    const long long count = std::llround(mass * static_cast<double>(ctx.N()));
    require(count >= 1, ErrorCode::config_error, "initial mass below one particle");
    const Trait t = spec.contains("trait")
                        ? trait_from_config(spec.at("trait"), ctx.model.traits)
                        : (ctx.model.traits.kind == TraitSpace::Kind::finite ? Trait::finite(0)
                                                                             : Trait::real(0.0));
    return FinitePhylogeny::single_clan(unit, unit, count, t);
  }
  if (type == "geometry") {
    const std::string name = spec.value("name", "pair_even");
    for (const auto& g : standard_geometries())
      if (g.name == name) return embed_at_scale(g, ctx.N(), ctx.model.traits);
    fail(ErrorCode::config_error, "unknown geometry '" + name + "'");
  }
  if (type == "random") {
    RandomStream rng(spec.value("state_seed", std::uint64_t{7}), 0);
    return random_state(ctx.model.traits, ctx.N(), spec.value("clans", std::size_t{4}),
                        spec.value("extra", 8ll), rng);
  }
  if (type == "file") {
    const std::string path = spec.value("path", "");
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io_error, "cannot open state file " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      fail(ErrorCode::config_error, std::string("state parse error: ") + e.what());
    }
    FinitePhylogeny chi = FinitePhylogeny::from_json(j);
    chi.validate(&ctx.model.traits);
    return chi;
  }
  fail(ErrorCode::config_error, "unknown state type '" + type + "'");
}

std::vector<double> grid_from_config(const Context& ctx) {
  const double T = ctx.T();
  if (ctx.config.contains("grid") && ctx.config.at("grid").is_array()) {
    const auto grid = ctx.config.at("grid").get<std::vector<double>>();
    require(!grid.empty(), ErrorCode::config_error, "observation grid is empty");
    for (std::size_t i = 0; i < grid.size(); ++i)
      require(grid[i] > 0.0 && grid[i] <= T && (i == 0 || grid[i] > grid[i - 1]),
              ErrorCode::config_error, "observation grid must be ascending within (0, T]");
    return grid;
  }
  const int points = ctx.config.contains("grid") ? ctx.config.at("grid").value("points", 5) : 5;
  require(points >= 1, ErrorCode::config_error, "grid needs at least one point");
  std::vector<double> grid(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i)
    grid[static_cast<std::size_t>(i)] = T * static_cast<double>(i + 1) / static_cast<double>(points);
  return grid;
}

std::vector<TestFunction> functions_from_config(const Context& ctx, std::size_t max_degree) {
  std::vector<TestFunction> fns;
  if (ctx.config.contains("functions") && ctx.config.at("functions").is_array()) {
    for (const auto& j : ctx.config.at("functions")) fns.push_back(TestFunction::from_json(j));
  } else {
    fns = standard_battery(ctx.model.traits);
  }
  std::vector<TestFunction> kept;
  for (auto& F : fns) {
    F.check_shape();
    F.check_traits(ctx.model.traits);
    if (F.degree <= max_degree) kept.push_back(std::move(F));
  }
  require(!kept.empty(), ErrorCode::config_error, "no test functions left after the degree cut");
  return kept;
}

SimConfig sim_config_from(const Context& ctx) {
  SimConfig cfg;
  cfg.scale_N = ctx.N();
  std::string engine = ctx.config.value("engine", "reference");
  if (ctx.opt.engine) engine = *ctx.opt.engine;
  if (engine != "reference" && engine != "thinning")
    fail(ErrorCode::config_error, "engine must be reference or thinning");
  cfg.engine = engine == "reference" ? Engine::reference : Engine::thinning;
  cfg.lineage = ctx.opt.lineage || ctx.config.value("lineage", false);
  return cfg;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Context& ctx) {
  SeriesSpec spec;
  spec.grid = grid_from_config(ctx);
  spec.reps = ctx.replicates();
  spec.seed = ctx.seed;
  spec.sim_config = sim_config_from(ctx);
  spec.strain_threshold = ctx.config.value("strain_threshold", 0.05);
  const FinitePhylogeny chi0 = state_from_config(ctx);

  const StatSeries series = trajectory_statistics(chi0, ctx.model, spec);
  write_text(ctx.out_dir / "series.csv", series.to_csv());
  ctx.save_json("summary.json", {{"series", series.to_json()},
                                 {"replicates", spec.reps},
                                 {"engine", spec.sim_config.engine == Engine::reference
                                                ? "reference"
                                                : "thinning"}});

  // one full event log for inspection
  RandomStream rng(ctx.seed, 0);
  Simulation sim(chi0, ctx.model, spec.sim_config, rng);
  const Trajectory traj = simulate(sim, ctx.T(), {}, nullptr, /*record_events=*/true);
  write_text(ctx.out_dir / "events_rep0.csv", event_log_csv(traj.log));
  ctx.say("simulate: " + std::to_string(spec.reps) + " replicates, " +
          std::to_string(traj.events) + " events in replicate 0");
  return 0;
}

int cmd_sample(const Context& ctx) {
  const FinitePhylogeny chi0 = state_from_config(ctx);
  SimConfig cfg = sim_config_from(ctx);
  RandomStream rng(ctx.seed, 0);
  Simulation sim(chi0, ctx.model, cfg, rng);
  while (sim.step_until(ctx.T())) {
  }
  const FinitePhylogeny& chi = sim.chi();
  if (chi.empty()) {
    ctx.save_json("sample.json", {{"extinct", true}, {"time", sim.time()}});
    ctx.say("sample: population extinct before the horizon");
    return 0;
  }
  const std::size_t taxa = ctx.config.value("taxa", std::size_t{8});
  RandomStream sample_rng = rng.split(0x53);
  const SampledMatrix matrix = sample_distance_matrix(chi, taxa, sample_rng);
  write_text(ctx.out_dir / "sample.phy", phylip_square(matrix));
  ctx.save_json("sample.json", {{"extinct", false},
                                {"mass", chi.total_mass()},
                                {"clans", chi.clan_count()},
                                {"taxa", taxa},
                                {"state", chi.to_json()}});
  ctx.say("sample: wrote " + std::to_string(taxa) + " taxa");
  return 0;
}

int cmd_generator_check(const Context& ctx) {
  std::vector<int> scales = ctx.config.value("scales", std::vector<int>{8, 16, 32, 64, 128});
  const auto fns = functions_from_config(ctx, ctx.config.value("max_degree", std::size_t{3}));
  std::vector<ClanGeometry> geometries;
  if (ctx.config.contains("geometries")) {
    for (const auto& name : ctx.config.at("geometries")) {
      bool found = false;
      for (const auto& g : standard_geometries())
        if (g.name == name.get<std::string>()) {
          geometries.push_back(g);
          found = true;
        }
      require(found, ErrorCode::config_error, "unknown geometry in config");
    }
  } else {
    geometries = standard_geometries();
  }

  const GapReport report = convergence_gap(ctx.model, geometries, fns, scales);
  write_text(ctx.out_dir / "gaps.csv", report.to_csv());
  const double slope_max = ctx.config.value("slope_max", -0.5);
  bool ok = report.max_quadrature_error < 1e-8;
  double worst_slope = -std::numeric_limits<double>::infinity();
  for (const auto& s : report.slopes) {
    if (s.gap_last < 1e-13) continue;  // gap at the quadrature floor, no slope to fit
    worst_slope = std::max(worst_slope, s.slope);
    if (s.slope > slope_max || s.gap_last >= s.gap_first) ok = false;
  }
  nlohmann::json body = report.to_json();
  body["pass"] = ok;
  ctx.save_json("gaps.json", body);
  const std::string slope_note =
      std::isfinite(worst_slope) ? ", worst slope " + std::to_string(worst_slope) : "";
  std::ostringstream quad;
  quad << std::scientific << std::setprecision(2) << report.max_quadrature_error;
  ctx.say(std::string("generator-check: ") + (ok ? "pass" : "FAIL") + slope_note +
          ", max quadrature error " + quad.str());
  return ok ? 0 : 3;
}

int cmd_martingale_check(const Context& ctx) {
  const std::string mode_name = ctx.config.value("mode", "discrete");
  if (mode_name != "discrete" && mode_name != "limit")
    fail(ErrorCode::config_error, "mode must be discrete or limit");
  const ResidualMode mode = mode_name == "discrete" ? ResidualMode::discrete : ResidualMode::limit;
  const auto fns = functions_from_config(ctx, ctx.config.value("max_degree", std::size_t{2}));
  const FinitePhylogeny chi0 = state_from_config(ctx);
  const ResidualReport report = martingale_residual(chi0, ctx.model, fns, mode, grid_from_config(ctx),
                                                    ctx.replicates(), ctx.seed, sim_config_from(ctx));
  write_text(ctx.out_dir / "residuals.csv", report.to_csv());
  const double ratio_max = ctx.config.value("ratio_max", 3.5);
  const bool gate = mode == ResidualMode::discrete;
  const bool ok = !gate || report.max_ratio <= ratio_max;
  nlohmann::json body = report.to_json();
  body["pass"] = ok;
  ctx.save_json("residuals.json", body);
  ctx.say("martingale-check (" + mode_name + "): max |R|/SE = " + std::to_string(report.max_ratio) +
          (gate ? (ok ? ", pass" : ", FAIL") : ", report only"));
  return ok ? 0 : 3;
}

int cmd_moments(const Context& ctx) {
  const std::vector<int> qs = ctx.config.value("qs", std::vector<int>{1, 2, 3});
  const double m0 = ctx.config.value("m0", 1.0);
  const std::vector<double> escapes = ctx.config.value("escape_m0", std::vector<double>{});
  const MomentReport report =
      moment_bound_check(ctx.model, m0, ctx.N(), ctx.T(), qs, ctx.replicates(), ctx.seed,
                         ctx.config.value("escape_delta", 1.0), escapes);
  ctx.save_json("moments.json", report.to_json());
  ctx.say(std::string("moments: ") + (report.all_ok ? "pass" : "FAIL"));
  return report.all_ok ? 0 : 3;
}

int cmd_stats(const Context& ctx) {
  SeriesSpec spec;
  spec.grid = grid_from_config(ctx);
  spec.reps = ctx.replicates();
  spec.seed = ctx.seed;
  spec.sim_config = sim_config_from(ctx);
  spec.strain_threshold = ctx.config.value("strain_threshold", 0.05);
  if (ctx.config.contains("eps_grid"))
    spec.eps_grid = ctx.config.at("eps_grid").get<std::vector<double>>();
  const FinitePhylogeny chi0 = state_from_config(ctx);
  const PatternReport report = phylo_patterns(chi0, ctx.model, spec);
  write_text(ctx.out_dir / "series.csv", report.series.to_csv());
  ctx.save_json("patterns.json", report.to_json());
  ctx.say("stats: label " + report.label);
  return 0;
}

int cmd_contain(const Context& ctx) {
  const std::vector<int> n_list = ctx.config.value("N_list", std::vector<int>{16, 64});
  const int k_max = ctx.config.value("k_max", 4);
  const double eps0 = ctx.config.value("eps0", 0.1);
  const double stability = ctx.config.value("stability_factor", 2.0);

  std::vector<ContainmentReport> reports;
  for (std::size_t i = 0; i < n_list.size(); ++i) {
    Context scaled = ctx;
    scaled.config["N"] = n_list[i];
    const FinitePhylogeny chi0 = state_from_config(scaled);
    reports.push_back(compact_containment_probe(chi0, ctx.model, n_list[i], ctx.T(),
                                                grid_from_config(ctx), k_max, eps0,
                                                ctx.replicates(), ctx.seed + i));
  }

  // stability: each fitted constant within the factor across the N list
  bool stable = true;
  for (int k = 0; k <= k_max; ++k) {
    const auto ratio_ok = [&](auto pick) {
      double lo = INFINITY, hi = 0.0;
      for (const auto& r : reports) {
        const double v = pick(r.constants[static_cast<std::size_t>(k)]);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      return hi <= stability * std::max(lo, 1e-12);
    };
    if (!ratio_ok([](const ContainmentConstants& c) { return c.mass_cap; })) stable = false;
    if (!ratio_ok([](const ContainmentConstants& c) { return c.core_diameter; })) stable = false;
    if (!ratio_ok([](const ContainmentConstants& c) { return c.core_covering; })) stable = false;
  }

  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : reports) rows.push_back(r.to_json());
  ctx.save_json("containment.json", {{"reports", rows}, {"stable", stable}});
  ctx.say(std::string("contain: ") + (stable ? "stable" : "UNSTABLE"));
  return stable ? 0 : 3;
}

int cmd_dominate(const Context& ctx) {
  require(ctx.config.contains("model2"), ErrorCode::config_error,
          "dominate needs a 'model2' (the dominating rates)");
  RateModel model2 = model_from_json(ctx.config.at("model2"));
  const ValidationReport report2 = validate(model2);
  if (!report2.ok) fail(ErrorCode::assumption_violated, report2.to_string());

  const FinitePhylogeny chi0 = state_from_config(ctx);
  const DominationEnsemble ens =
      domination_ensemble(chi0, ctx.model, model2, ctx.T(), ctx.replicates(), ctx.seed);
  ctx.save_json("domination.json", ens.to_json());
  if (ens.precondition_failures > 0) {
    std::string detail;
    for (const auto& m : ens.first_failure_messages) detail += m + "; ";
    fail(ErrorCode::assumption_violated, "domination preconditions failed: " + detail);
  }
  ctx.say("dominate: " + std::to_string(ens.subset_failures) + " subset failures over " +
          std::to_string(ens.runs) + " runs");
  return ens.subset_failures == 0 ? 0 : 3;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    Context ctx;
    ctx.opt = parse_args(args);
    ctx.config = load_config(ctx.opt.config_path);
    ctx.model = model_from_config(ctx.config);
    ctx.seed = ctx.opt.seed ? *ctx.opt.seed : ctx.config.value("seed", std::uint64_t{1});
    {
      std::ostringstream h;
      h << std::hex << fnv1a64(ctx.config.dump() + "#" + std::to_string(ctx.seed));
      ctx.hash = h.str();
    }
    ctx.out_dir = ctx.opt.out_dir;
    std::filesystem::create_directories(ctx.out_dir);
    ctx.log = &out;
    require(ctx.N() >= 2, ErrorCode::config_error, "N must be at least 2");

    if (ctx.opt.subcommand == "simulate") return cmd_simulate(ctx);
    if (ctx.opt.subcommand == "sample") return cmd_sample(ctx);
    if (ctx.opt.subcommand == "generator-check") return cmd_generator_check(ctx);
    if (ctx.opt.subcommand == "martingale-check") return cmd_martingale_check(ctx);
    if (ctx.opt.subcommand == "moments") return cmd_moments(ctx);
    if (ctx.opt.subcommand == "stats") return cmd_stats(ctx);
    if (ctx.opt.subcommand == "contain") return cmd_contain(ctx);
    return cmd_dominate(ctx);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    switch (e.code()) {
      case ErrorCode::io_error:
      case ErrorCode::config_error:
        return 1;
      default:
        return 2;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace phylosim
