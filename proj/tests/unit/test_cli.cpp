#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "ccopf/cli.hpp"
#include "fixtures.hpp"

using namespace ccopf;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "ccopf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ccopf_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string casefile(const char* name) { return testing::case_path(name).string(); }

}  // namespace

TEST_CASE("solve writes solution and prices") {
  const fs::path dir = scratch("solve");
  const Run r = invoke({"solve", "--case", casefile("five_bus.json"), "--model", "det", "--out", dir.string()});
  CHECK(r.code == cli::kExitOk);
  for (const char* f : {"solution.json", "prices.json", "prices.csv", "prices_tidy.csv"}) {
    CAPTURE(f);
    CHECK(fs::exists(dir / f));
  }
  const std::string sol = slurp(dir / "solution.json");
  CHECK(sol.find("\"schema\": \"ccopf.solution/1\"") != std::string::npos);
  CHECK(nlohmann::json::parse(sol).at("objective").get<double>() == doctest::Approx(5750.0).epsilon(1e-9));
  CHECK(slurp(dir / "prices.csv").rfind("# schema: ccopf.price_report/1\n", 0) == 0);
}

TEST_CASE("usage errors exit with 1") {
  CHECK(invoke({"solve", "--case", casefile("five_bus.json"), "--model", "eqv-cc", "--eps", "0.6"}).code ==
        cli::kExitError);
  CHECK(invoke({"solve", "--case", casefile("five_bus.json"), "--model", "bogus"}).code == cli::kExitError);
  CHECK(invoke({"solve", "--model", "det"}).code == cli::kExitError);
  CHECK(invoke({"validate", "--solution", "/nonexistent/solution.json", "--seed", "1"}).code == cli::kExitError);
  CHECK(invoke({}).code == cli::kExitError);
  CHECK(invoke({"--help"}).code == cli::kExitOk);
}

TEST_CASE("infeasible reserve exits with 2") {
  const fs::path dir = scratch("infeasible");
  const Run r = invoke({"solve", "--case", casefile("two_bus.json"), "--model", "gen-cc", "--eps", "0.01", "--rel-std",
                     "20", "--out", dir.string()});
  CHECK(r.code == cli::kExitInfeasible);
}

TEST_CASE("zero penalty matches the equivalent model") {
  const fs::path a = scratch("va0"), b = scratch("eqv");
  const auto c = casefile("case14_wind.json");
  REQUIRE(invoke({"solve", "--case", c, "--model", "va-cc", "--psi", "0", "--eps", "0.1", "--out", a.string()}).code == 0);
  REQUIRE(invoke({"solve", "--case", c, "--model", "eqv-cc", "--eps", "0.1", "--out", b.string()}).code == 0);
  auto objective = [](const fs::path& p) {
    const std::string s = slurp(p / "solution.json");
    const auto pos = s.find("\"objective\": ");
    return std::stod(s.substr(pos + 13));
  };
  CHECK(std::abs(objective(a) - objective(b)) <= 1e-6);
}

TEST_CASE("validate: determinism, zero uncertainty and exceedance") {
  const fs::path dir = scratch("validate");
  const auto c = casefile("binding_case.json");
  REQUIRE(invoke({"solve", "--case", c, "--model", "eqv-cc", "--eps", "0.1", "--out", dir.string()}).code == 0);
  const std::string sol = (dir / "solution.json").string();

  const fs::path v1 = dir / "v1", v2 = dir / "v2";
  CHECK(invoke({"validate", "--solution", sol, "--seed", "11", "--samples", "4000", "--out", v1.string()}).code == 0);
  CHECK(invoke({"validate", "--solution", sol, "--seed", "11", "--samples", "4000", "--out", v2.string()}).code == 0);
  CHECK(slurp(v1 / "validation.json") == slurp(v2 / "validation.json"));

  // planned for 12.5% errors, tested against 25%
  const Run stressed = invoke({"validate", "--solution", sol, "--seed", "11", "--samples", "4000", "--rel-std", "0.25",
                            "--out", (dir / "v3").string()});
  CHECK(stressed.code == cli::kExitExceeded);

  const fs::path z = dir / "zero";
  REQUIRE(invoke({"solve", "--case", c, "--model", "eqv-cc", "--rel-std", "0", "--out", z.string()}).code == 0);
  const Run zr = invoke({"validate", "--solution", (z / "solution.json").string(), "--seed", "1", "--samples", "1000",
                      "--out", z.string()});
  CHECK(zr.code == cli::kExitOk);
  const auto rep = nlohmann::json::parse(slurp(z / "validation.json"));
  REQUIRE(!rep.at("rates").empty());
  for (const auto& rate : rep.at("rates")) CHECK(rate.at("rate").get<double>() == 0.0);
}

TEST_CASE("sweep table layout") {
  const fs::path dir = scratch("sweep");
  const Run r = invoke({"sweep", "--case", casefile("case14_wind.json"), "--out", dir.string()});
  REQUIRE(r.code == 0);
  const std::string csv = slurp(dir / "sweep.csv");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "# schema: ccopf.sweep/1");
  std::getline(in, line);
  CHECK(line.rfind("model,eps,psi,status,objective,expected_cost", 0) == 0);
  int va = 0, base = 0;
  std::vector<std::string> eqv_rows;
  while (std::getline(in, line)) {
    if (line.rfind("va-cc,", 0) == 0) ++va;
    else ++base;
    if (line.rfind("eqv-cc,", 0) == 0) eqv_rows.push_back(line);
  }
  CHECK(va == 10);
  CHECK(base == 6);  // Det, GEN-CC and EQV-CC for each eps
  REQUIRE(eqv_rows.size() == 2);
  // EQV-CC is its own reference: 100% on every variance column
  CHECK(eqv_rows[0].find(",100,100,100,100,") != std::string::npos);

  const fs::path again = scratch("sweep2");
  REQUIRE(invoke({"sweep", "--case", casefile("case14_wind.json"), "--out", again.string()}).code == 0);
  CHECK(slurp(again / "sweep.csv") == csv);
  CHECK(slurp(again / "sweep_tidy.csv") == slurp(dir / "sweep_tidy.csv"));
}

TEST_CASE("sweep rows from the library") {
  cli::RunConfig cfg;
  cfg.case_path = testing::case_path("five_bus.json");
  cfg.eps = {0.1};
  cfg.psi = {0.0, 10.0};
  const cli::Prepared prep = cli::prepare(cfg);
  const auto rows = cli::run_sweep(cfg, prep);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].model == ModelKind::Det);
  CHECK(rows[3].model == ModelKind::VaCC);
  CHECK(rows[3].psi == 0.0);
  CHECK(rows[3].objective == doctest::Approx(rows[2].objective).epsilon(1e-9));
  CHECK(rows[3].sigma2_pct[1] == doctest::Approx(100.0).epsilon(1e-6));
}
