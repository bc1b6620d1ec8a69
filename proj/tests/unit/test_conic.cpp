#include <doctest.h>

#include <sstream>

#include "ccopf/conic.hpp"
#include "ccopf/error.hpp"
#include "problems.hpp"

using namespace ccopf;
using testing::mat;
using testing::vec;

TEST_CASE("reference problems") {
  SolverOptions opts;
  opts.tolerance = 1e-9;
  for (const auto& p : testing::reference_problems()) {
    CAPTURE(p.name);
    const SolveResult r = solve(p.program, opts);
    REQUIRE(r.status == p.status);
    if (p.status != SolveStatus::Optimal) {
      CHECK(testing::certificate_ok(p.program, r, 1e-7));
      continue;
    }
    CHECK(std::abs(r.objective - p.objective) <= 1e-7);
    if (p.x.size()) CHECK((r.x - p.x).lpNorm<Eigen::Infinity>() <= 1e-7);
    const KktResiduals k = kkt_residuals(p.program, r);
    CHECK(k.r_primal <= 1e-7);
    CHECK(k.r_dual <= 1e-7);
    CHECK(k.gap <= 1e-7);
    CHECK(std::abs(k.complementarity) <= 1e-7 * std::max(1.0, std::abs(p.objective)));
    CHECK(k.dual_cone_violation <= 1e-7);
  }
}

TEST_CASE("duals follow the documented sign convention") {
  // min x s.t. x >= 2 written as -x <= -2: the multiplier is 1
  const auto p = testing::make_program({{}, {}, mat({{-1}}), vec({1}), {}, vec({-2}), {Cone::nonnegative(1)}});
  const SolveResult r = solve(p);
  REQUIRE(r.status == SolveStatus::Optimal);
  CHECK(r.z[0] == doctest::Approx(1.0).epsilon(1e-7));

  // min x1 + x2 s.t. x1 + x2 = 3, x >= 0: stationarity 1 + y = z_i
  const auto q = testing::make_program(
      {{}, mat({{1, 1}}), mat({{-1, 0}, {0, -1}}), vec({1, 1}), vec({3}), vec({0, 0}), {Cone::nonnegative(2)}});
  const SolveResult rq = solve(q);
  REQUIRE(rq.status == SolveStatus::Optimal);
  CHECK(rq.y[0] == doctest::Approx(-1.0).epsilon(1e-7));
}

TEST_CASE("soc dual aligns with the tight cone") {
  // min -(x1 + x2), ||x|| <= 1: z = z0 (1, -x/|x|) with z0 = sqrt(2)
  const auto p = testing::reference_problems()[13].program;
  const SolveResult r = solve(p, {1e-10});
  REQUIRE(r.status == SolveStatus::Optimal);
  CHECK(r.z[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-7));
  CHECK(r.z[1] == doctest::Approx(-1.0).epsilon(1e-7));
  CHECK(r.z[2] == doctest::Approx(-1.0).epsilon(1e-7));
}

TEST_CASE("solves are bitwise deterministic") {
  for (const auto& p : testing::reference_problems()) {
    const SolveResult a = solve(p.program), b = solve(p.program);
    CHECK(a.x == b.x);
    CHECK(a.z == b.z);
    CHECK(a.iterations == b.iterations);
  }
}

TEST_CASE("invalid programs are rejected") {
  auto p = testing::make_program({{}, {}, mat({{1, 0}}), vec({1, 1}), {}, vec({1}), {Cone::nonnegative(1)}});
  SUBCASE("cone dimensions do not cover the rows") {
    p.cones = {Cone::nonnegative(2)};
    CHECK_THROWS_WITH_AS(validate_program(p), doctest::Contains("InvalidProgram"), Error);
  }
  SUBCASE("indefinite Q") {
    p.Q = testing::sparse(mat({{1, 0}, {0, -1}}));
    CHECK_THROWS_AS(validate_program(p), Error);
  }
  SUBCASE("asymmetric Q") {
    p.Q = testing::sparse(mat({{1, 1}, {0, 1}}));
    CHECK_THROWS_AS(validate_program(p), Error);
  }
  SUBCASE("non-finite data") {
    p.c[0] = std::nan("");
    CHECK_THROWS_AS(solve(p), Error);
  }
}

TEST_CASE("iteration limit and log") {
  const auto p = testing::reference_problems()[1].program;
  SolverOptions o;
  o.max_iter = 1;
  CHECK(solve(p, o).status == SolveStatus::IterLimit);

  std::ostringstream log;
  o.max_iter = 100;
  o.log = &log;
  const SolveResult r = solve(p, o);
  int lines = 0;
  for (char ch : log.str()) lines += ch == '\n';
  CHECK(lines >= r.iterations);
  CHECK(log.str().find("{") == 0);
}

TEST_CASE("program export lists every section") {
  const std::string txt = export_program(testing::reference_problems()[12].program);
  for (const char* s : {"Q", "c", "A", "b", "G", "h", "cones"}) {
    CAPTURE(s);
    CHECK(txt.find(s) != std::string::npos);
  }
}
