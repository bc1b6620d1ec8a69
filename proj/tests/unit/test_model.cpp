#include <doctest.h>

#include "ccopf/error.hpp"
#include "ccopf/model.hpp"
#include "ccopf/pricing.hpp"
#include "fixtures.hpp"

using namespace ccopf;
using Eigen::VectorXd;

namespace {

struct Solved {
  ModelInstance inst;
  SolveResult res;
};

Solved run(const testing::Setup& s, ModelKind kind, double eps, double psi = 0.0) {
  Solved out{build_model(kind, s.net, s.op, s.sf, s.unc, RiskParams::uniform(eps),
                         VariancePenalties::uniform(s.net, psi)),
             {}};
  out.res = solve(out.inst.program, testing::tight());
  REQUIRE(out.res.status == SolveStatus::Optimal);
  return out;
}

}  // namespace

TEST_CASE("deterministic dispatch on an uncongested lossless network matches merit order") {
  const auto s = testing::load_setup("five_bus.json");
  const auto d = run(s, ModelKind::Det, 0.1);
  // two units sharing the net demand at equal marginal cost
  const auto& g = s.net.generators();
  const double demand = s.net.p_demand().sum() - s.net.p_wind_at_buses().sum();
  const double b_sum = g[0].b() + g[1].b(), a_sum = g[0].a() + g[1].a();
  const double lam = (demand + a_sum) / b_sum;  // $/pu
  const double p0 = g[0].b() * lam - g[0].a(), p1 = g[1].b() * lam - g[1].a();
  CHECK(d.res.objective == doctest::Approx(g[0].cost(p0) + g[1].cost(p1)).epsilon(1e-8));
  CHECK(d.res.objective == doctest::Approx(5750.0).epsilon(1e-8));
  const PriceReport r = price_report(d.inst, d.res);
  for (Index i = 0; i < s.net.num_buses(); ++i) CHECK(r.lmp_p[i] == doctest::Approx(lam / 100.0).epsilon(1e-7));
  CHECK(lam / 100.0 == doctest::Approx(26.0));
}

TEST_CASE("registry names") {
  const auto s = testing::load_setup("binding_case.json");
  const ModelInstance m = build_eqv_cc(s.net, s.op, s.sf, s.unc, RiskParams::uniform(0.1));
  const Registry& reg = m.registry;
  for (const char* v : {"p_G[1]", "q_G[2]", "v[3]", "theta[4]", "f_p[1-4]", "alpha[2]", "t_v[3]", "rho_fq[1-2]",
                        "a_fp[3-4]"}) {
    CAPTURE(v);
    CHECK(reg.has_var(v));
  }
  for (const char* r : {"lambda_p[3]", "beta_q[1-4]", "theta_ref", "chi", "delta_p+[2]", "mu-[4]", "eta[1-4]",
                        "zeta_v[3]", "nu_q[1]", "xi_fp0[2-3]"}) {
    CAPTURE(r);
    CHECK(reg.has_row(r));
  }
  CHECK(reg.row("eta[1-4]").dim == 3);
  CHECK_THROWS_WITH_AS(reg.row("nope"), doctest::Contains("MissingConstraint"), Error);
  CHECK(parse_model_kind("va-cc") == ModelKind::VaCC);
  CHECK(to_string(ModelKind::GenCC) == "gen-cc");
  CHECK_THROWS_AS(parse_model_kind("cc"), Error);

  const ModelInstance det = build_det(s.net, s.op, s.sf);
  CHECK_FALSE(det.registry.has_var("alpha[1]"));
  CHECK_FALSE(det.registry.has_row("chi"));
}

TEST_CASE("model nesting and zero penalty") {
  for (const char* name : {"two_bus.json", "five_bus.json", "case14_wind.json"}) {
    CAPTURE(name);
    const auto s = testing::load_setup(name);
    const double det = run(s, ModelKind::Det, 0.1).res.objective;
    const double gen = run(s, ModelKind::GenCC, 0.1).res.objective;
    const double eqv = run(s, ModelKind::EqvCC, 0.1).res.objective;
    const double eqv01 = run(s, ModelKind::EqvCC, 0.01).res.objective;
    const double va0 = run(s, ModelKind::VaCC, 0.1, 0.0).res.objective;
    CHECK(det <= gen + 1e-6);
    CHECK(gen <= eqv + 1e-6);
    CHECK(eqv <= eqv01 + 1e-6);
    CHECK(va0 == doctest::Approx(eqv).epsilon(1e-9));
  }
}

TEST_CASE("tighter risk levels can make the engineered case infeasible") {
  // its limits are tuned to bind at eps = 0.1, leaving no room at 0.01
  const auto s = testing::load_setup("binding_case.json");
  const ModelInstance m = build_eqv_cc(s.net, s.op, s.sf, s.unc, RiskParams::uniform(0.01));
  CHECK(solve(m.program, testing::tight()).status == SolveStatus::PrimalInfeasible);
  const ModelInstance loose = build_eqv_cc(s.net, s.op, s.sf, s.unc, RiskParams::uniform(0.1));
  CHECK(solve(loose.program, testing::tight()).status == SolveStatus::Optimal);
}

TEST_CASE("participation factors and objective parts") {
  const auto s = testing::load_setup("case14_wind.json");
  for (ModelKind k : {ModelKind::GenCC, ModelKind::EqvCC, ModelKind::VaCC}) {
    const auto m = run(s, k, 0.1, 10.0);
    const Schedule sch = read_schedule(m.inst, m.res.x);
    CHECK(sch.alpha.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(sch.alpha.minCoeff() >= -1e-9);
    CHECK(sch.alpha.maxCoeff() <= 1.0 + 1e-9);
    const ObjectiveParts parts = objective_parts(m.inst, m.res.x);
    CHECK(m.res.objective == doctest::Approx(parts.expected_cost + parts.penalty).epsilon(1e-7));
    CHECK(parts.generation_cost <= parts.expected_cost);
  }
}

TEST_CASE("tight standard deviation variables equal realized norms") {
  const auto s = testing::load_setup("binding_case.json");
  const auto m = run(s, ModelKind::EqvCC, 0.1);
  const Schedule sch = read_schedule(m.inst, m.res.x);
  const Sigmas sg = realized_sigmas(m.inst, sch.alpha);
  // v at bus 3 binds its upper limit, so its SOC row is tight
  const double t = m.res.x[m.inst.registry.var("t_v[3]")];
  CHECK(t == doctest::Approx(sg.v[2]).epsilon(1e-6));
  const double v3 = sch.v[2];
  CHECK(v3 + m.inst.risk.z_v * t == doctest::Approx(s.net.buses()[2].v_max).epsilon(1e-7));
}

TEST_CASE("reserve capacity check") {
  const CaseFile cf = load_case(testing::case_path("two_bus.json"));
  const Network& net = cf.network;
  const OperatingPoint op = linearization_point(net);
  const SensitivityFactors sf = response_matrices(net, op);
  const Uncertainty huge = Uncertainty::relative(net, 20.0);
  CHECK_THROWS_WITH_AS(build_gen_cc(net, op, sf, huge, RiskParams::uniform(0.01)),
                       doctest::Contains("InfeasibleReserve"), Error);
}

TEST_CASE("linearization rounds settle on small cases") {
  for (const char* name : {"two_bus.json", "five_bus.json", "case14_wind.json", "binding_case.json"}) {
    CAPTURE(name);
    const Network net = load_case(testing::case_path(name)).network;
    LinearizationInfo info;
    const OperatingPoint op = linearization_point(net, {}, &info);
    CHECK(info.converged);
    CHECK(op.residual_norm < 1e-8);
  }
}

TEST_CASE("variance penalty shrinks the unweighted metric") {
  const auto s = testing::load_setup("case14_wind.json");
  double prev_metric = 1e300, prev_obj = -1e300;
  for (double psi : {0.0, 1.0, 100.0}) {
    const auto m = run(s, ModelKind::VaCC, 0.1, psi);
    const ObjectiveParts parts = objective_parts(m.inst, m.res.x);
    CHECK(parts.v_metric <= prev_metric + 1e-9);
    CHECK(m.res.objective >= prev_obj - 1e-7);
    prev_metric = parts.v_metric;
    prev_obj = m.res.objective;
  }
}
