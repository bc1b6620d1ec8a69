// Acceptance run: one PASS/FAIL/SKIP line per criterion, non-zero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ccopf/error.hpp"
#include "ccopf/pricing.hpp"
#include "ccopf/validation.hpp"
#include "fixtures.hpp"
#include "problems.hpp"

using namespace ccopf;
using Eigen::VectorXd;
namespace fs = std::filesystem;

namespace {

enum class Verdict { Pass, Fail, Skip };

struct Outcome {
  Verdict verdict = Verdict::Pass;
  std::string detail;
};

struct Solved {
  ModelInstance inst;
  SolveResult res;
};

Solved run(const testing::Setup& s, ModelKind kind, double eps, double psi) {
  Solved out{build_model(kind, s.net, s.op, s.sf, s.unc, RiskParams::uniform(eps),
                         VariancePenalties::uniform(s.net, psi)),
             {}};
  out.res = solve(out.inst.program, testing::tight());
  return out;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

const std::vector<const char*> kNetworks = {"two_bus.json", "five_bus.json", "case14_wind.json"};

Outcome duality_identities() {
  int runs = 0;
  double worst_lambda = 0.0, worst_chi = 0.0;
  std::string failure;
  for (const char* name : kNetworks) {
    const auto s = testing::load_setup(name);
    for (ModelKind kind : {ModelKind::GenCC, ModelKind::EqvCC, ModelKind::VaCC}) {
      for (double eps : {0.1, 0.01}) {
        for (double psi : {0.0, 1.0, 100.0}) {
          if (kind != ModelKind::VaCC && psi != 0.0) continue;
          const Solved m = run(s, kind, eps, psi);
          ++runs;
          if (m.res.status != SolveStatus::Optimal) {
            failure = std::string(name) + " " + std::string(to_string(kind)) + " not optimal";
            continue;
          }
          const DualSolution du = extract_duals(m.inst, m.res);
          const LambdaResiduals lr = decompose_lambda(du, s.net, read_schedule(m.inst, m.res.x));
          worst_lambda = std::max({worst_lambda, lr.max_p, lr.max_q});
          double chi = 0.0;
          switch (kind) {
            case ModelKind::GenCC: chi = chi_gen_cc(du, s.net, s.unc, m.inst.risk); break;
            case ModelKind::EqvCC: chi = chi_eqv_cc(m.inst, du, m.res.x).chi; break;
            default: chi = chi_va_cc(m.inst, du, m.res.x).chi; break;
          }
          worst_chi = std::max(worst_chi, rel(chi, du.chi));
        }
      }
    }
  }
  Outcome o;
  o.detail = std::to_string(runs) + " solves, max lambda residual " + fmt("%.1e", worst_lambda) +
             ", max chi residual " + fmt("%.1e", worst_chi);
  if (!failure.empty() || worst_lambda > 1e-5 || worst_chi > 1e-5) o.verdict = Verdict::Fail;
  if (!failure.empty()) o.detail += "; " + failure;
  return o;
}

OperatingPoint perturbed(const Network& net, const OperatingPoint& op, Index bus, bool reactive, double h) {
  Dispatch d;
  d.p_gen = op.p_gen;
  d.q_gen = op.q_gen;
  d.v_set = op.state.v;
  d.extra_p = VectorXd::Zero(net.num_buses());
  d.extra_q = VectorXd::Zero(net.num_buses());
  (reactive ? d.extra_q : d.extra_p)[bus] = h;
  NewtonOptions no;
  no.tolerance = 1e-13;
  no.warm_start = &op.state;
  return newton_pf(net, d, no);
}

Outcome sensitivities() {
  double worst_rel = 0.0, worst_zero = 0.0;
  long entries = 0;
  bool structure = true;
  for (const char* name : {"five_bus.json", "case14_wind.json"}) {
    const auto s = testing::load_setup(name);
    const Network& net = s.net;
    const double h = 1e-5;
    for (Index j = 0; j < net.num_buses(); ++j) {
      for (bool reactive : {false, true}) {
        const OperatingPoint up = perturbed(net, s.op, j, reactive, h);
        const OperatingPoint dn = perturbed(net, s.op, j, reactive, -h);
        auto check = [&](const ResponseMatrix& m, const VectorXd& a, const VectorXd& b) {
          for (Index k = 0; k < a.size(); ++k) {
            const double fd = (a[k] - b[k]) / (2 * h);
            const double an = reactive ? m.x(k, j) : m.r(k, j);
            const double scale = std::max(std::abs(fd), std::abs(an));
            ++entries;
            // entries below 1e-6 are structural zeros up to solver noise
            if (scale > 1e-6) {
              worst_rel = std::max(worst_rel, std::abs(an - fd) / scale);
            } else {
              worst_zero = std::max(worst_zero, std::abs(an - fd));
            }
          }
        };
        check(s.sf.v, up.state.v, dn.state.v);
        check(s.sf.theta, up.state.theta, dn.state.theta);
        check(s.sf.q, up.q_gen, dn.q_gen);
        check(s.sf.fp, up.state.fp_from, dn.state.fp_from);
        check(s.sf.fq, up.state.fq_from, dn.state.fq_from);
      }
    }
    for (Index i = 0; i < net.num_buses(); ++i) {
      if (net.buses()[i].kind != BusKind::PQ) {
        structure = structure && s.sf.v.r.row(i).isZero(0.0) && s.sf.v.x.row(i).isZero(0.0);
      }
    }
    for (Index g = 0; g < net.num_generators(); ++g) {
      if (net.buses()[net.generator_bus(g)].kind == BusKind::PQ) {
        structure = structure && s.sf.q.r.row(g).isZero(0.0) && s.sf.q.x.row(g).isZero(0.0);
      }
    }
    structure = structure && s.sf.theta.r.row(net.ref_bus()).isZero(0.0);
  }
  Outcome o;
  o.detail = std::to_string(entries) + " entries, max relative error " + fmt("%.1e", worst_rel) +
             ", max near-zero deviation " + fmt("%.1e", worst_zero) + (structure ? ", zero rows exact" : ", zero rows NOT exact");
  if (worst_rel > 1e-4 || worst_zero > 1e-10 || !structure) o.verdict = Verdict::Fail;
  return o;
}

Outcome solver_certification() {
  SolverOptions opts;
  opts.tolerance = 1e-9;
  int passed = 0, total = 0;
  bool deterministic = true;
  std::string failures;
  for (const auto& p : testing::reference_problems()) {
    ++total;
    const SolveResult r = solve(p.program, opts);
    const SolveResult again = solve(p.program, opts);
    deterministic = deterministic && r.x == again.x && r.y == again.y && r.z == again.z;
    bool ok = r.status == p.status;
    if (ok && p.status == SolveStatus::Optimal) {
      const KktResiduals k = kkt_residuals(p.program, r);
      ok = k.r_primal <= 1e-7 && k.r_dual <= 1e-7 && k.gap <= 1e-7 && k.dual_cone_violation <= 1e-7 &&
           std::abs(r.objective - p.objective) <= 1e-7 && (p.x.size() == 0 || (r.x - p.x).lpNorm<Eigen::Infinity>() <= 1e-7);
    } else if (ok) {
      ok = testing::certificate_ok(p.program, r, 1e-7);
    }
    if (ok) ++passed;
    else failures += " " + p.name;
  }
  Outcome o;
  o.detail = std::to_string(passed) + "/" + std::to_string(total) + " problems within 1e-7" +
             (deterministic ? ", repeated runs bitwise identical" : ", repeated runs differ") + failures;
  if (passed != total || !deterministic || total < 20) o.verdict = Verdict::Fail;
  return o;
}

Outcome nesting() {
  Outcome o;
  for (const char* name : kNetworks) {
    const auto s = testing::load_setup(name);
    const Solved det = run(s, ModelKind::Det, 0.1, 0.0);
    const Solved gen = run(s, ModelKind::GenCC, 0.1, 0.0);
    const Solved eqv = run(s, ModelKind::EqvCC, 0.1, 0.0);
    const Solved eqv01 = run(s, ModelKind::EqvCC, 0.01, 0.0);
    for (const Solved* m : {&det, &gen, &eqv, &eqv01}) {
      if (m->res.status != SolveStatus::Optimal) o.verdict = Verdict::Fail;
    }
    const double a = det.res.objective, b = gen.res.objective, c = eqv.res.objective, d = eqv01.res.objective;
    const double slack = 1e-7 * std::max(1.0, std::abs(d));
    if (!(a <= b + slack && b <= c + slack && c <= d + slack)) o.verdict = Verdict::Fail;
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s%s %.2f <= %.2f <= %.2f <= %.2f", o.detail.empty() ? "" : "; ", name, a, b, c, d);
    o.detail += buf;
  }
  return o;
}

Outcome monte_carlo() {
  const auto s = testing::load_setup("binding_case.json");
  const double eps = 0.1;
  const Solved m = run(s, ModelKind::EqvCC, eps, 0.0);
  if (m.res.status != SolveStatus::Optimal) return {Verdict::Fail, "engineered case did not solve"};
  const DualSolution du = extract_duals(m.inst, m.res);
  ValidationOptions vo;
  vo.samples = 10000;
  vo.seed = 7;
  const ValidationReport r = validate(m.inst, m.res.x, vo);
  const double band = 3.0 * std::sqrt(eps * (1 - eps) / static_cast<double>(vo.samples));

  Outcome o;
  // every class must actually bind
  const bool binds = du.delta_p_plus[1] > 1e-6 && du.delta_q_plus[1] > 1e-6 && du.mu_plus[2] > 1e-6 && du.eta[4] > 1e-6;
  if (!binds) o.verdict = Verdict::Fail;
  for (const char* name : {"p_max[2]", "q_max[2]", "v_max[3]"}) {
    const double rate = r.rate(name).rate;
    if (std::abs(rate - eps) > band) o.verdict = Verdict::Fail;
    o.detail += std::string(name) + " " + fmt("%.4f", rate) + ", ";
  }
  const double flow = r.rate("s_max[1-4]").rate;
  if (flow > eps + band) o.verdict = Verdict::Fail;
  o.detail += "s_max[1-4] " + fmt("%.4f", flow) + " (band " + fmt("%.4f", band) + ", " +
              std::to_string(vo.samples) + " draws" + (binds ? ", all classes binding)" : ", NOT all binding)");
  return o;
}

Outcome variance_awareness() {
  const auto s = testing::load_setup("case14_wind.json");
  Outcome o;
  double prev_metric = 1e300, prev_obj = -1e300, prev_mc = 1e300;
  for (double psi : {0.0, 1.0, 100.0}) {
    const Solved m = run(s, ModelKind::VaCC, 0.1, psi);
    if (m.res.status != SolveStatus::Optimal) return {Verdict::Fail, "VA-CC did not solve"};
    const ObjectiveParts parts = objective_parts(m.inst, m.res.x);
    ValidationOptions vo;
    vo.samples = 10000;
    vo.seed = 21;
    const ValidationReport r = validate(m.inst, m.res.x, vo);
    const double mc = r.sigma_v.squaredNorm();
    if (parts.v_metric > prev_metric + 1e-12 || m.res.objective < prev_obj - 1e-7 || mc > prev_mc + 1e-15) {
      o.verdict = Verdict::Fail;
    }
    char buf[200];
    std::snprintf(buf, sizeof buf, "%spsi=%g: metric %.6e obj %.4f mc-var(v) %.6e", o.detail.empty() ? "" : "; ", psi,
                  parts.v_metric, m.res.objective, mc);
    o.detail += buf;
    prev_metric = parts.v_metric;
    prev_obj = m.res.objective;
    prev_mc = mc;
  }
  return o;
}

fs::path env_path(const char* var, const fs::path& fallback) {
  const char* v = std::getenv(var);
  return v != nullptr && *v != '\0' ? fs::path(v) : fallback;
}

Outcome table_reproduction() {
  const fs::path case_file = env_path("CCOPF_CASE118", testing::case_path("case118_mod.json"));
  const fs::path point_file = env_path("CCOPF_CASE118_POINT", testing::case_path("case118_point.json"));
  if (!fs::exists(case_file) || !fs::exists(point_file)) {
    return {Verdict::Skip, "modified 118-bus data and linearization point not supplied (" + case_file.string() + ")"};
  }
  const CaseFile cf = load_case(case_file);
  testing::Setup s{cf.network, operating_point_from_json(cf.network, read_text_file(point_file)), {},
                   cf.sigma ? Uncertainty::create(*cf.sigma) : Uncertainty::relative(cf.network, 0.125)};
  s.sf = response_matrices(s.net, s.op);
  const Solved eqv = run(s, ModelKind::EqvCC, 0.1, 0.0);
  const Solved va01 = run(s, ModelKind::VaCC, 0.1, 0.1);
  const Solved va1000 = run(s, ModelKind::VaCC, 0.1, 1000.0);
  for (const Solved* m : {&eqv, &va01, &va1000}) {
    if (m->res.status != SolveStatus::Optimal) return {Verdict::Fail, "118-bus solve not optimal"};
  }
  const double obj = eqv.res.objective;
  const double chi = extract_duals(eqv.inst, eqv.res).chi;
  const double chi1000 = extract_duals(va1000.inst, va1000.res).chi;
  const double e01 = objective_parts(va01.inst, va01.res.x).expected_cost;
  const double e1000 = objective_parts(va1000.inst, va1000.res.x).expected_cost;
  const double drift = std::abs(e1000 - e01) / e01;
  Outcome o;
  auto within = [](double a, double ref) { return std::abs(a - ref) <= 0.005 * std::abs(ref); };
  if (!within(obj, 92237.67) || !within(chi, 28.10) || !within(chi1000, 125.54) || drift > 0.0003) {
    o.verdict = Verdict::Fail;
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "objective %.2f (92237.67), chi %.2f (28.10), chi(psi=1000) %.2f (125.54), drift %.4f%%",
                obj, chi, chi1000, 100 * drift);
  o.detail = buf;
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* title;
    std::function<Outcome()> check;
    double budget_s;
  };
  const std::vector<Criterion> criteria = {
      {1, "duality identities", duality_identities, 120},
      {2, "sensitivity correctness", sensitivities, 60},
      {3, "solver certification", solver_certification, 1e9},
      {4, "model nesting", nesting, 1e9},
      {5, "Monte Carlo chance constraints", monte_carlo, 60},
      {6, "variance awareness", variance_awareness, 1e9},
      {7, "118-bus table reproduction", table_reproduction, 300 * 3},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {Verdict::Fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (o.verdict != Verdict::Skip && secs > c.budget_s) {
      o.verdict = Verdict::Fail;
      o.detail += "; over the time budget";
    }
    const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Fail ? "FAIL" : "SKIP";
    std::printf("[%s] %d %s: %s (%.2fs)\n", tag, c.id, c.title, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (o.verdict == Verdict::Fail) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
