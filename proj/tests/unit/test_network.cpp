#include <doctest.h>

#include <complex>

#include "ccopf/case_io.hpp"
#include "ccopf/error.hpp"
#include "fixtures.hpp"

using namespace ccopf;

namespace {

const char* kThreeBus = R"(function mpc = three
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1.02 0 0 1 1.1 0.9;
  2 1 60 20 0 0 1 1 0 0 1 1.1 0.9;
  3 2 40 10 0 5 1 1.01 0 0 1 1.1 0.9;
];
mpc.gen = [
  1 50 0 100 -100 1.02 100 1 200 0;
  3 30 0 50 -50 1.01 100 1 80 10;
  3 10 0 20 -20 1.01 100 1 40 0;
];
mpc.branch = [
  1 2 0.01 0.1 0.02 120 0 0 0 0 1 -360 360;
  2 3 0.02 0.2 0.0 90 0 0 0 0 1 -360 360;
  1 3 0.01 0.15 0.01 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [
  2 0 0 3 0.02 20 5;
  2 0 0 3 0.04 22 0;
  2 0 0 3 0.08 18 0;
];
)";

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  REQUIRE(pos != std::string::npos);
  return s.replace(pos, from.size(), to);
}

}  // namespace

TEST_CASE("matpower parse: per-unit conversion keeps costs invariant") {
  const NetworkData phys = parse_matpower_data(kThreeBus);
  REQUIRE(phys.buses.size() == 3);
  REQUIRE(phys.generators.size() == 3);
  const Network net = parse_matpower(kThreeBus);
  CHECK(net.num_buses() == 3);
  CHECK(net.num_generators() == 2);  // two units at bus 3 merged
  CHECK(net.buses()[1].p_d == doctest::Approx(0.6));
  CHECK(net.buses()[2].shunt_b == doctest::Approx(0.05));
  CHECK(net.buses()[net.ref_bus()].id == 1);

  // cost of 50 MW at bus 1 in $ is the same in either unit system
  const Generator& g1 = net.generators()[0];
  CHECK(g1.cost(0.5) == doctest::Approx(phys.generators[0].cost(50.0)));
  // zero rating means a 10 GVA placeholder
  CHECK(net.lines()[2].s_max == doctest::Approx(100.0));
}

TEST_CASE("generator aggregation is the infimal convolution of the quadratics") {
  const Network net = parse_matpower(kThreeBus);
  const NetworkData phys = parse_matpower_data(kThreeBus);
  const Generator& merged = net.generators()[1];
  // at a common marginal cost lambda each unit produces (lambda - c1) / (2 c2)
  const double lam = 30.0;  // $/MWh
  const double p_a = (lam - phys.generators[1].c1) / (2 * phys.generators[1].c2);
  const double p_b = (lam - phys.generators[2].c1) / (2 * phys.generators[2].c2);
  const double p_pu = (p_a + p_b) / 100.0;
  CHECK(merged.marginal_cost(p_pu) / 100.0 == doctest::Approx(lam));
  CHECK(merged.p_max == doctest::Approx(1.2));
  CHECK(merged.p_min == doctest::Approx(0.1));
  CHECK(merged.q_max == doctest::Approx(0.7));
}

TEST_CASE("matpower parse errors") {
  SUBCASE("no reference bus") {
    const std::string txt = replace(kThreeBus, "1 3 0 0", "1 1 0 0");
    CHECK_THROWS_WITH_AS(parse_matpower(txt), doctest::Contains("NoRefBus"), Error);
  }
  SUBCASE("two reference buses") {
    const std::string txt = replace(kThreeBus, "2 1 60 20", "2 3 60 20");
    CHECK_THROWS_WITH_AS(parse_matpower(txt), doctest::Contains("MultipleRefBuses"), Error);
  }
  SUBCASE("malformed row reports its line") {
    const std::string txt = replace(kThreeBus, "2 1 60 20", "2 1 6x0 20");
    try {
      parse_matpower(txt);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.code() == Errc::MalformedRow);
      CHECK(e.line() == 5);
    }
  }
  SUBCASE("piecewise cost") {
    const std::string txt = replace(kThreeBus, "2 0 0 3 0.02 20 5;", "1 0 0 3 0.02 20 5;");
    CHECK_THROWS_WITH_AS(parse_matpower(txt), doctest::Contains("UnsupportedCostModel"), Error);
  }
  SUBCASE("missing table") {
    const std::string txt = replace(kThreeBus, "mpc.gencost", "mpc.other");
    CHECK_THROWS_WITH_AS(parse_matpower(txt), doctest::Contains("MissingTable"), Error);
  }
}

TEST_CASE("json case round trip") {
  const CaseFile a = load_case(testing::case_path("case14_wind.json"));
  REQUIRE(a.sigma);
  const CaseFile b = parse_network_json(emit_network_json(a.network, a.sigma));
  const auto& da = a.network.data();
  const auto& db = b.network.data();
  REQUIRE(db.buses.size() == da.buses.size());
  REQUIRE(db.generators.size() == da.generators.size());
  for (size_t i = 0; i < da.buses.size(); ++i) {
    CHECK(db.buses[i].p_d == doctest::Approx(da.buses[i].p_d).epsilon(1e-14));
    CHECK(db.buses[i].v_max == da.buses[i].v_max);
    CHECK(db.buses[i].kind == da.buses[i].kind);
  }
  for (size_t g = 0; g < da.generators.size(); ++g) {
    CHECK(db.generators[g].c2 == doctest::Approx(da.generators[g].c2).epsilon(1e-14));
    CHECK(db.generators[g].c1 == doctest::Approx(da.generators[g].c1).epsilon(1e-14));
    CHECK(db.generators[g].p_max == doctest::Approx(da.generators[g].p_max).epsilon(1e-14));
  }
  CHECK(db.lines == da.lines);
  CHECK(db.wind.size() == da.wind.size());
  REQUIRE(b.sigma);
  CHECK((*b.sigma - *a.sigma).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(a.network.num_wind() == 4);
}

TEST_CASE("json schema violations") {
  CHECK_THROWS_WITH_AS(parse_network_json("[1, 2]"), doctest::Contains("SchemaViolation"), Error);
  CHECK_THROWS_WITH_AS(parse_network_json("{\"buses\": "), doctest::Contains("SchemaViolation"), Error);
  CHECK_THROWS_AS(load_case(testing::case_path("does_not_exist.json")), Error);
}

TEST_CASE("admittance matrix of a single pi line") {
  const Network net = load_case(testing::case_path("two_bus.json")).network;
  const ComplexSparse y = build_admittance(net);
  const std::complex<double> ys = 1.0 / std::complex<double>(0.01, 0.1);
  CHECK(std::abs(y.coeff(0, 0) - (ys + std::complex<double>(0, 0.01))) < 1e-12);
  CHECK(std::abs(y.coeff(0, 1) + ys) < 1e-12);
  CHECK(std::abs(y.coeff(1, 1) - y.coeff(0, 0)) < 1e-12);
}

TEST_CASE("network derived vectors") {
  const Network net = load_case(testing::case_path("two_bus.json")).network;
  CHECK(net.p_demand()[1] == doctest::Approx(0.8));
  CHECK(net.p_wind_at_buses()[1] == doctest::Approx(0.3));
  CHECK(net.gamma()[0] == doctest::Approx(std::sqrt(1 - 0.95 * 0.95) / 0.95));
  CHECK(net.q_wind_at_buses()[1] == doctest::Approx(0.3 * net.gamma()[0]));
  CHECK(net.generator_at(1) == 1);
  CHECK(net.wind_at(0) == -1);
}
