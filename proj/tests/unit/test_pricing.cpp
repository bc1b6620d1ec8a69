#include <doctest.h>

#include "ccopf/error.hpp"
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

TEST_CASE("deterministic prices have no reserve component") {
  const auto s = testing::load_setup("two_bus.json");
  const auto d = run(s, ModelKind::Det, 0.1);
  const DualSolution du = extract_duals(d.inst, d.res);
  CHECK_FALSE(du.has("chi"));
  CHECK_FALSE(du.has("sigma"));
  const LambdaResiduals lr = decompose_lambda(du, s.net, read_schedule(d.inst, d.res.x));
  CHECK(lr.max_p < 1e-7);
  CHECK(lr.max_q < 1e-7);
  const PriceReport r = price_report(d.inst, d.res);
  CHECK_FALSE(r.has_chi);
  CHECK(price_report_to_json(r).find("\"chi\": null") != std::string::npos);
}

TEST_CASE("reserve price with slack generator limits") {
  // no limit binds: chi = S^2 / sum b
  const auto s = testing::load_setup("five_bus.json");
  const auto m = run(s, ModelKind::GenCC, 0.1);
  const DualSolution du = extract_duals(m.inst, m.res);
  REQUIRE(du.delta_p_plus.maxCoeff() < 1e-7);
  REQUIRE(du.delta_p_minus.maxCoeff() < 1e-7);
  double b_sum = 0.0;
  for (const auto& g : s.net.generators()) b_sum += g.b();
  const double S = s.unc.s_total();
  CHECK(du.chi == doctest::Approx(S * S / b_sum).epsilon(1e-6));
  CHECK(chi_gen_cc(du, s.net, s.unc, m.inst.risk) == doctest::Approx(du.chi).epsilon(1e-6));
  // alpha proportional to b
  const Schedule sch = read_schedule(m.inst, m.res.x);
  CHECK(sch.alpha[0] == doctest::Approx(s.net.generators()[0].b() / b_sum).epsilon(1e-6));
}

TEST_CASE("price decompositions on the binding case") {
  const auto s = testing::load_setup("binding_case.json");
  for (ModelKind k : {ModelKind::GenCC, ModelKind::EqvCC, ModelKind::VaCC}) {
    for (double psi : {0.0, 1.0, 100.0}) {
      if (k != ModelKind::VaCC && psi > 0) continue;
      CAPTURE(to_string(k));
      CAPTURE(psi);
      const auto m = run(s, k, 0.1, psi);
      const PriceReport r = price_report(m.inst, m.res);
      CHECK(r.decomposition_residuals.at("lambda_p") < 1e-5);
      CHECK(r.decomposition_residuals.at("lambda_q") < 1e-5);
      CHECK(r.decomposition_residuals.at("chi") < 1e-5);
      if (k != ModelKind::GenCC) {
        CHECK(r.decomposition_residuals.at("zeta") < 1e-5);
        CHECK(r.has_sigma);
      }
      CHECK(r.has_chi);
      CHECK(r.chi > 0);
    }
  }
}

TEST_CASE("binding rows carry positive rents") {
  const auto s = testing::load_setup("binding_case.json");
  const auto m = run(s, ModelKind::EqvCC, 0.1);
  const DualSolution du = extract_duals(m.inst, m.res);
  CHECK(du.delta_p_plus[1] > 1e-4);
  CHECK(du.delta_q_plus[1] > 1e-4);
  CHECK(du.mu_plus[2] > 1e-4);
  CHECK(du.eta[4] > 1e-4);
  const ChiReconstruction c = chi_eqv_cc(m.inst, du, m.res.x);
  CHECK(c.chi == doctest::Approx(du.chi).epsilon(1e-5));
  // the voltage family contributes to the adjusted price at the generator buses
  CHECK(c.y.v.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("price report serialization") {
  const auto s = testing::load_setup("binding_case.json");
  const auto m = run(s, ModelKind::VaCC, 0.1, 1.0);
  const PriceReport r = price_report(m.inst, m.res);
  const PriceReport back = price_report_from_json(price_report_to_json(r));
  CHECK(same_report(r, back));
  const std::string csv = price_report_csv(r);
  CHECK(csv.rfind("bus,lmp_p,lmp_q,chi_tilde,y_q,y_v,y_fp,y_fq\n", 0) == 0);
  int rows = 0;
  for (char ch : csv) rows += ch == '\n';
  CHECK(rows == 1 + s.net.num_buses());
  CHECK_THROWS_WITH_AS(price_report_from_json("{\"schema\": \"other\"}"), doctest::Contains("SchemaViolation"), Error);
  // chi_tilde equals chi at buses without a generator
  CHECK(r.chi_tilde[2] == doctest::Approx(r.chi));
}

TEST_CASE("pricing a non-optimal result fails") {
  const auto s = testing::load_setup("two_bus.json");
  const ModelInstance inst = build_det(s.net, s.op, s.sf);
  SolverOptions o;
  o.max_iter = 1;
  const SolveResult res = solve(inst.program, o);
  REQUIRE(res.status != SolveStatus::Optimal);
  CHECK_THROWS_WITH_AS(price_report(inst, res), doctest::Contains("NotOptimal"), Error);
}

TEST_CASE("lmp units") {
  const auto s = testing::load_setup("two_bus.json");
  const auto d = run(s, ModelKind::Det, 0.1);
  const DualSolution du = extract_duals(d.inst, d.res);
  const PriceReport r = price_report(d.inst, d.res);
  CHECK(r.lmp_p[0] == doctest::Approx(du.lambda_p[0] / s.net.base_mva()));
  // the reference unit is unconstrained, so its price is its marginal cost
  const Schedule sch = read_schedule(d.inst, d.res.x);
  CHECK(r.lmp_p[0] == doctest::Approx(s.net.generators()[0].marginal_cost(sch.p_gen[0]) / 100.0).epsilon(1e-7));
}
