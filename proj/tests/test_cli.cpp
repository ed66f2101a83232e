#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "phylosim/cli.hpp"

using namespace phylosim;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("phylosim_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(const std::vector<std::string>& args, std::string* out_text = nullptr,
        std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

}  // namespace

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("ab") != fnv1a64("ba"));
}

TEST_CASE("argument and config errors exit with code 1") {
  std::string err;
  CHECK(run({}, nullptr, &err) == 1);
  CHECK(run({"frobnicate"}, nullptr, &err) == 1);
  CHECK(run({"simulate"}, nullptr, &err) == 1);  // --config missing
  CHECK(run({"simulate", "--config", "/nonexistent/x.json"}, nullptr, &err) == 1);
  CHECK(run({"simulate", "--config"}, nullptr, &err) == 1);  // dangling flag
  CHECK_FALSE(err.empty());

  TempDir tmp("badjson");
  write_file(tmp.path / "c.json", "{ not json");
  CHECK(run({"simulate", "--config", (tmp.path / "c.json").string()}) == 1);
}

TEST_CASE("model assumption violations exit with code 2") {
  TempDir tmp("badmodel");
  // a declared bound below the actual kernel: validation fails
  nlohmann::json model = {
      {"traits", {{"kind", "real"}}},
      {"beta", {{"kind", "constant"}, {"value", 1.0}}},
      {"gamma_birth", {{"kind", "zero"}}},
      {"gamma_death", {{"kind", "constant"}, {"value", 0.8}}},
      {"p", 0.0},
      {"mutation", {{"kind", "gaussian_step"}, {"sigma", 1.0}}},
      {"bounds",
       {{"beta_bar", 1.0}, {"beta_lower", 1.0}, {"gamma_b_bar", 0.0}, {"gamma_d_bar", 0.1}}},
  };
  nlohmann::json cfg2 = {{"model", model}, {"T", 0.1}, {"N", 8}};
  write_file(tmp.path / "weak_bound.json", cfg2.dump());
  CHECK(run({"simulate", "--config", (tmp.path / "weak_bound.json").string(), "--out",
             (tmp.path / "o2").string()}) == 2);
}

TEST_CASE("simulate writes the advertised outputs") {
  TempDir tmp("simulate");
  nlohmann::json cfg = {
      {"preset", "neutral"}, {"N", 8}, {"T", 0.2}, {"replicates", 20}, {"seed", 4},
      {"state", {{"type", "single"}, {"mass", 1.0}, {"trait", 0.0}}},
  };
  write_file(tmp.path / "c.json", cfg.dump());
  const fs::path out = tmp.path / "out";
  std::string text;
  const int code =
      run({"simulate", "--config", (tmp.path / "c.json").string(), "--out", out.string()}, &text);
  CHECK(code == 0);
  CHECK(fs::exists(out / "series.csv"));
  CHECK(fs::exists(out / "summary.json"));
  CHECK(fs::exists(out / "events_rep0.csv"));

  const nlohmann::json summary = nlohmann::json::parse(read_file(out / "summary.json"));
  CHECK(summary.at("meta").at("subcommand") == "simulate");
  CHECK(summary.at("meta").contains("config_hash"));
  CHECK(summary.at("meta").at("seed") == 4);

  const std::string series = read_file(out / "series.csv");
  CHECK(series.rfind("time,statistic,mean,se\n", 0) == 0);
  const std::string events = read_file(out / "events_rep0.csv");
  CHECK(events.rfind("time,kind,clan,mass\n", 0) == 0);
}

TEST_CASE("simulate output is byte-stable across worker counts") {
  TempDir tmp("threads");
  nlohmann::json cfg = {
      {"preset", "neutral"}, {"N", 8}, {"T", 0.15}, {"replicates", 16}, {"seed", 12},
  };
  write_file(tmp.path / "c.json", cfg.dump());

  setenv("PHYLOSIM_THREADS", "1", 1);
  REQUIRE(run({"simulate", "--config", (tmp.path / "c.json").string(), "--out",
               (tmp.path / "o1").string(), "--quiet"}) == 0);
  setenv("PHYLOSIM_THREADS", "2", 1);
  REQUIRE(run({"simulate", "--config", (tmp.path / "c.json").string(), "--out",
               (tmp.path / "o2").string(), "--quiet"}) == 0);
  unsetenv("PHYLOSIM_THREADS");
  CHECK(read_file(tmp.path / "o1" / "series.csv") == read_file(tmp.path / "o2" / "series.csv"));
}

TEST_CASE("seed precedence is flag over config over default") {
  TempDir tmp("seed");
  nlohmann::json cfg = {{"preset", "neutral"}, {"N", 8}, {"T", 0.05}, {"replicates", 4}, {"seed", 9}};
  write_file(tmp.path / "c.json", cfg.dump());
  REQUIRE(run({"simulate", "--config", (tmp.path / "c.json").string(), "--out",
               (tmp.path / "a").string(), "--quiet"}) == 0);
  REQUIRE(run({"simulate", "--config", (tmp.path / "c.json").string(), "--out",
               (tmp.path / "b").string(), "--seed", "77", "--quiet"}) == 0);
  const auto a = nlohmann::json::parse(read_file(tmp.path / "a" / "summary.json"));
  const auto b = nlohmann::json::parse(read_file(tmp.path / "b" / "summary.json"));
  CHECK(a.at("meta").at("seed") == 9);
  CHECK(b.at("meta").at("seed") == 77);
  CHECK(a.at("meta").at("config_hash") != b.at("meta").at("config_hash"));
}

TEST_CASE("moments subcommand gates on the bound") {
  TempDir tmp("moments");
  nlohmann::json cfg = {
      {"preset", "neutral"}, {"N", 8}, {"T", 0.2}, {"replicates", 200}, {"seed", 3},
      {"qs", {1}}, {"m0", 1.0},
  };
  write_file(tmp.path / "c.json", cfg.dump());
  const fs::path out = tmp.path / "out";
  CHECK(run({"moments", "--config", (tmp.path / "c.json").string(), "--out", out.string(),
             "--quiet"}) == 0);
  const auto body = nlohmann::json::parse(read_file(out / "moments.json"));
  CHECK(body.at("all_ok") == true);
}

TEST_CASE("martingale check writes residual tables") {
  TempDir tmp("mart");
  nlohmann::json cfg = {
      {"preset", "neutral"}, {"N", 8}, {"T", 0.2}, {"replicates", 60}, {"seed", 6},
      {"grid", {0.1, 0.2}}, {"max_degree", 1},
  };
  write_file(tmp.path / "c.json", cfg.dump());
  const fs::path out = tmp.path / "out";
  const int code = run({"martingale-check", "--config", (tmp.path / "c.json").string(), "--out",
                        out.string(), "--quiet"});
  CHECK((code == 0 || code == 3));
  CHECK(fs::exists(out / "residuals.csv"));
  CHECK(fs::exists(out / "residuals.json"));
}

TEST_CASE("sample writes a distance matrix for a surviving run") {
  TempDir tmp("sample");
  nlohmann::json cfg = {
      {"preset", "neutral"}, {"N", 16}, {"T", 0.1}, {"seed", 8}, {"taxa", 5},
  };
  write_file(tmp.path / "c.json", cfg.dump());
  const fs::path out = tmp.path / "out";
  REQUIRE(run({"sample", "--config", (tmp.path / "c.json").string(), "--out", out.string(),
               "--quiet"}) == 0);
  const auto body = nlohmann::json::parse(read_file(out / "sample.json"));
  if (!body.at("extinct").get<bool>()) {
    CHECK(fs::exists(out / "sample.phy"));
    CHECK(read_file(out / "sample.phy").rfind("5\n", 0) == 0);
  }
}

TEST_CASE("generator-check passes and skips exactly converged pairs") {
  TempDir tmp("gencheck");
  // const_one has zero gap at every scale; the gate must not read that as a flat slope
  nlohmann::json cfg = {
      {"preset", "neutral"},
      {"geometries", {"pair_even"}},
      {"scales", {8, 16, 32, 64, 128}},
      {"functions",
       {{{"degree", 0},
         {"name", "const_one"},
         {"g", {{"kind", "power_exp"}, {"a", 0}, {"lambda", 0.0}}}},
        {{"degree", 0},
         {"name", "mass_decay"},
         {"g", {{"kind", "power_exp"}, {"a", 1}, {"lambda", 1.0}}}}}},
  };
  write_file(tmp.path / "c.json", cfg.dump());
  const fs::path out = tmp.path / "out";
  std::string text;
  const int code = run({"generator-check", "--config", (tmp.path / "c.json").string(), "--out",
                        out.string()},
                       &text);
  CHECK(code == 0);
  CHECK(fs::exists(out / "gaps.csv"));
  const auto body = nlohmann::json::parse(read_file(out / "gaps.json"));
  CHECK(body.at("pass").get<bool>());
  CHECK(text.find("worst slope") != std::string::npos);
}
