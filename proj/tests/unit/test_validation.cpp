#include <doctest.h>

#include <Eigen/Dense>

#include "ccopf/validation.hpp"
#include "fixtures.hpp"

using namespace ccopf;
using Eigen::MatrixXd;
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

double binomial_3sigma(double eps, Index n) { return 3.0 * std::sqrt(eps * (1 - eps) / static_cast<double>(n)); }

}  // namespace

TEST_CASE("draws depend on the seed only") {
  const auto s = testing::load_setup("case14_wind.json");
  const MatrixXd a = sample_omega(s.unc, 9000, 5, 1);
  const MatrixXd b = sample_omega(s.unc, 9000, 5, 4);
  CHECK(a == b);
  CHECK_FALSE(a == sample_omega(s.unc, 9000, 6, 1));
  // a prefix of a longer run is the shorter run
  CHECK(sample_omega(s.unc, 100, 5, 1) == a.topRows(100));

  const MatrixXd big = sample_omega(s.unc, 200000, 3, 0);
  const MatrixXd centered = big.rowwise() - big.colwise().mean();
  const MatrixXd cov = centered.transpose() * centered / static_cast<double>(big.rows() - 1);
  CHECK((cov - s.unc.sigma()).cwiseAbs().maxCoeff() < 0.02 * s.unc.sigma().maxCoeff());
}

TEST_CASE("affine response at a single draw") {
  const auto s = testing::load_setup("five_bus.json");
  const auto m = run(s, ModelKind::EqvCC, 0.1);
  const Schedule sch = read_schedule(m.inst, m.res.x);
  VectorXd omega = VectorXd::Zero(s.net.num_wind());
  omega[0] = 0.05;
  const RealizedState st = apply_response(m.inst, sch, omega);
  CHECK((st.p_gen - (sch.p_gen - sch.alpha * 0.05)).norm() < 1e-14);
  const VectorXd dv = m.inst.resp_v.wind * omega - (m.inst.resp_v.gen * sch.alpha) * omega.sum();
  CHECK((st.v - sch.v - dv).norm() < 1e-14);
}

TEST_CASE("zero uncertainty gives zero violation rates") {
  const CaseFile cf = load_case(testing::case_path("binding_case.json"));
  testing::Setup s = testing::load_setup("binding_case.json");
  s.unc = Uncertainty::relative(s.net, 0.0);
  const auto m = run(s, ModelKind::EqvCC, 0.1);
  ValidationOptions vo;
  vo.samples = 2000;
  const ValidationReport r = validate(m.inst, m.res.x, vo);
  for (const auto& c : r.rates) {
    CAPTURE(c.name);
    CHECK(c.rate == 0.0);
  }
  CHECK_FALSE(r.any_exceeded);
}

TEST_CASE("binding chance constraints are met at the nominal rate") {
  const auto s = testing::load_setup("binding_case.json");
  const auto m = run(s, ModelKind::EqvCC, 0.1);
  ValidationOptions vo;
  vo.samples = 10000;
  vo.seed = 7;
  const ValidationReport r = validate(m.inst, m.res.x, vo);
  const double band = binomial_3sigma(0.1, vo.samples);
  for (const char* name : {"p_max[2]", "q_max[2]", "v_max[3]"}) {
    CAPTURE(name);
    CHECK(std::abs(r.rate(name).rate - 0.1) <= band);
    CHECK(r.rate(name).enforced);
  }
  CHECK(r.rate("s_max[1-4]").rate <= 0.1 + band);
  CHECK_FALSE(r.any_exceeded);

  // expected cost from the draws agrees with the closed form
  const ObjectiveParts parts = objective_parts(m.inst, m.res.x);
  CHECK(std::abs(r.expected_cost - parts.expected_cost) <= 3 * r.expected_cost_se);
}

TEST_CASE("sample standard deviation matches a tight SOC bound") {
  const auto s = testing::load_setup("binding_case.json");
  const auto m = run(s, ModelKind::EqvCC, 0.1);
  ValidationOptions vo;
  vo.samples = 100000;
  vo.seed = 3;
  const ValidationReport r = validate(m.inst, m.res.x, vo);
  const double t = m.res.x[m.inst.registry.var("t_v[3]")];
  CHECK(r.sigma_v[2] == doctest::Approx(t).epsilon(0.03));
  const double tq = m.res.x[m.inst.registry.var("t_q[2]")];
  CHECK(r.sigma_q[1] <= tq * 1.03);
}

TEST_CASE("looser promises are not enforced") {
  const auto s = testing::load_setup("binding_case.json");
  const auto m = run(s, ModelKind::GenCC, 0.1);
  ValidationOptions vo;
  vo.samples = 3000;
  const ValidationReport r = validate(m.inst, m.res.x, vo);
  CHECK(r.rate("p_max[2]").enforced);
  CHECK_FALSE(r.rate("v_max[3]").enforced);
  CHECK_FALSE(r.rate("q_max[2]").exceeded);
}

TEST_CASE("reports are identical across thread counts") {
  const auto s = testing::load_setup("case14_wind.json");
  const auto m = run(s, ModelKind::EqvCC, 0.1);
  ValidationOptions vo;
  vo.samples = 12000;
  vo.seed = 9;
  vo.trace_rows = 50;
  vo.threads = 1;
  const ValidationReport a = validate(m.inst, m.res.x, vo);
  vo.threads = 3;
  const ValidationReport b = validate(m.inst, m.res.x, vo);
  CHECK(validation_report_to_json(a) == validation_report_to_json(b));
  CHECK(validation_trace_csv(a) == validation_trace_csv(b));
  CHECK(a.trace.size() == 50);

  vo.trace_rows = 50000;
  CHECK(validate(m.inst, m.res.x, vo).trace.size() == 10000);
}

TEST_CASE("full AC validation runs a power flow per draw") {
  const auto s = testing::load_setup("five_bus.json");
  const auto m = run(s, ModelKind::EqvCC, 0.1);
  ValidationOptions vo;
  vo.samples = 200;
  vo.mode = ValidationMode::FullAC;
  const ValidationReport r = validate(m.inst, m.res.x, vo);
  CHECK(r.pf_failures == 0);
  CHECK(r.mode == ValidationMode::FullAC);
  // the nonlinear response stays close to the linear one on a lossless network
  vo.mode = ValidationMode::Linearized;
  const ValidationReport lin = validate(m.inst, m.res.x, vo);
  CHECK(std::abs(r.expected_cost - lin.expected_cost) < 0.01 * lin.expected_cost);
  CHECK(parse_validation_mode("full-ac") == ValidationMode::FullAC);
  CHECK(to_string(ValidationMode::Linearized) == "linearized");
}
