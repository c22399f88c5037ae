#include <catch_amalgamated.hpp>

#include "app.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace tdwo;
using namespace tdwo::app;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tdwo_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Result cli(const std::string& args, const fs::path& dir) {
  const std::string cmd = std::string(TDWO_CLI_PATH) + " " + args + " >" + (dir / "stdout").string() + " 2>" +
                          (dir / "stderr").string();
  const int st = std::system(cmd.c_str());
  return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, slurp(dir / "stdout"), slurp(dir / "stderr")};
}

fs::path write_config(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / (name + ".ini");
  std::ofstream(p) << text;
  return p;
}

ScenarioConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in, "cfg", "cfg.ini");
}

} // namespace

TEST_CASE("list prints the manifest") {
  const auto dir = scratch("list");
  const Result r = cli("list", dir);
  REQUIRE(r.code == 0);
  for (const auto& e : builtin_manifest()) REQUIRE(r.out.find(e.name) != std::string::npos);

  const Result j = cli("list --json", dir);
  REQUIRE(j.code == 0);
  const auto doc = nlohmann::json::parse(j.out);
  REQUIRE(doc.size() == builtin_manifest().size());
  for (const auto& e : doc) {
    REQUIRE(e.contains("name"));
    REQUIRE(e.contains("reproduces"));
    REQUIRE(e["expected_seconds"].get<double>() > 0.0);
  }
}

TEST_CASE("bad command lines exit nonzero") {
  const auto dir = scratch("usage");
  REQUIRE(cli("", dir).code != 0);
  REQUIRE(cli("list --bogus", dir).code == kExitConfig);
  REQUIRE(cli("run", dir).code == kExitConfig);
  REQUIRE(cli("run two-level-T0 --format xml", dir).code == kExitConfig);
  REQUIRE(cli("run two-level-T0 --steps 0", dir).code == kExitConfig);
  const Result unknown = cli("run no-such-scenario", dir);
  REQUIRE(unknown.code == kExitConfig);
  REQUIRE(unknown.err.find("no-such-scenario") != std::string::npos);
  REQUIRE(cli("run two-level-T0 two-level-T0 --out " + (dir / "o").string(), dir).code == kExitConfig);
}

TEST_CASE("config errors name the line and field") {
  SECTION("unknown key") {
    try {
      parse("[model]\nkind = two-level\n\n[path]\nT = 50\nspeed = 3\n");
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      REQUIRE(e.line() == 6);
      REQUIRE(e.field() == "path.speed");
    }
  }
  SECTION("bad value") {
    try {
      parse("[model]\nkind = two-level\ngamma = half\n");
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      REQUIRE(e.line() == 3);
      REQUIRE(e.field() == "model.gamma");
    }
  }
  SECTION("validation failures map back to their line") {
    try {
      parse("# comment\n[model]\nkind = two-level\n[plan]\nsteps = -5\n");
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      REQUIRE(e.line() == 5);
      REQUIRE(e.field() == "plan.steps");
    }
  }
  SECTION("empty representation list") {
    REQUIRE_THROWS_AS(parse("[model]\nkind = two-level\n[outputs]\nrepresentations =\n"), ConfigError);
  }
  SECTION("missing kind, duplicates, unknown sections") {
    REQUIRE_THROWS_AS(parse("[path]\nT = 50\n"), ConfigError);
    REQUIRE_THROWS_AS(parse("[model]\nkind = two-level\nkind = dvr\n"), ConfigError);
    REQUIRE_THROWS_AS(parse("[model]\nkind = two-level\n[extras]\n"), ConfigError);
    REQUIRE_THROWS_AS(parse("[model]\nkind = two-level\n[path]\nsheet_schedule = 0.5:+2\n"), ConfigError);
  }
  SECTION("a valid file round trips its values") {
    const auto c = parse("[model]\nkind = two-level\ngamma = 0.4\n[path]\nT = 100\n"
                         "sheet_schedule = 0.5:-1, 1.0:+1\n[plan]\nsteps = 200\nscheme = seo\n"
                         "[outputs]\nrepresentations = reference, adiabatic\nformat = json\n");
    REQUIRE(c.gamma == 0.4);
    REQUIRE(c.duration == 100.0);
    REQUIRE(c.steps == 200);
    REQUIRE(c.reference_scheme == Scheme::SEO);
    REQUIRE(c.representations == std::set<std::string>{"reference", "adiabatic"});
    REQUIRE(c.format == OutputFormat::Json);
    REQUIRE(c.sheet_schedule.size() == 2);
  }
}

TEST_CASE("config errors from the command line exit with the config status") {
  const auto dir = scratch("config");
  const auto p = write_config(dir, "broken", "[model]\nkind = two-level\n[plan]\nsteps = many\n");
  const Result r = cli("run " + p.string() + " --out " + (dir / "o").string(), dir);
  REQUIRE(r.code == kExitConfig);
  REQUIRE(r.err.find(p.string() + ":4") != std::string::npos);
  REQUIRE(r.err.find("plan.steps") != std::string::npos);
  REQUIRE_FALSE(fs::exists(dir / "o" / "broken"));
}

TEST_CASE("two-level run writes a summary and identical reruns") {
  const auto dir = scratch("run");
  const Result a = cli("run two-level-T0 --out " + (dir / "a").string(), dir);
  REQUIRE(a.code == 0);
  const Result b = cli("run two-level-T0 --out " + (dir / "b").string(), dir);
  REQUIRE(b.code == 0);

  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir / "a" / "two-level-T0")) files.push_back(e.path().filename());
  std::sort(files.begin(), files.end());
  REQUIRE(std::find(files.begin(), files.end(), "summary.json") != files.end());
  REQUIRE(std::find(files.begin(), files.end(), "populations.csv") != files.end());
  REQUIRE(std::find(files.begin(), files.end(), "distances.csv") != files.end());
  for (const auto& f : files) {
    REQUIRE(f.find(".tmp") == std::string::npos);
    REQUIRE(slurp(dir / "a" / "two-level-T0" / f) == slurp(dir / "b" / "two-level-T0" / f));
  }

  const auto summary = nlohmann::json::parse(slurp(dir / "a" / "two-level-T0" / "summary.json"));
  REQUIRE(summary["scenario"] == "two-level-T0");
  REQUIRE(summary["source"] == "builtin");
  const auto& m = summary["metrics"];
  REQUIRE(m["dissipation_rate"].get<double>() < 0.0);
  REQUIRE(m["mean_distance_first_half"]["almost_adiabatic"].get<double>() <
          m["mean_distance_first_half"]["adiabatic"].get<double>());

  const std::string header = slurp(dir / "a" / "two-level-T0" / "populations.csv").substr(0, 40);
  REQUIRE(header.rfind("t,reference_pop0", 0) == 0);
}

TEST_CASE("config-file scenario with JSON output and restricted representations") {
  const auto dir = scratch("json");
  const auto p = write_config(dir, "small",
                              "[model]\nkind = two-level\n[path]\nT = 20\n[plan]\nsteps = 200\n"
                              "[outputs]\nrepresentations = reference, almost_adiabatic\nformat = json\n");
  const Result r = cli("run " + p.string() + " --out " + (dir / "o").string(), dir);
  REQUIRE(r.code == 0);
  const fs::path out = dir / "o" / "small";
  REQUIRE(fs::exists(out / "summary.json"));
  REQUIRE(fs::exists(out / "almost_adiabatic.json"));
  REQUIRE_FALSE(fs::exists(out / "adiabatic.json"));
  const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
  REQUIRE(summary["source"] == p.string());
  REQUIRE(summary["config"]["plan"]["steps"] == 200);
  const auto pops = nlohmann::json::parse(slurp(out / "populations.json"));
  REQUIRE(pops["t"].size() == 201);
}

TEST_CASE("numerical failures exit with the numerical status") {
  const auto dir = scratch("numerical");
  // first-order differencing with a coarse grid on a long loop diverges
  const auto p = write_config(dir, "coarse",
                              "[model]\nkind = two-level\n[path]\nT = 5000\n[plan]\nsteps = 10\n"
                              "scheme = fod\nreference_steps = 10\n");
  const Result r = cli("run " + p.string() + " --out " + (dir / "o").string(), dir);
  REQUIRE(r.code == kExitNumerical);
  REQUIRE(r.err.find("coarse: numerical failure at step") != std::string::npos);
}
