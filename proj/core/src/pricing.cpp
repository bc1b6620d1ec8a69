#include "ccopf/pricing.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "ccopf/error.hpp"

namespace ccopf {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

namespace {

constexpr double kZetaTol = 1e-7;
constexpr double kSigmaTol = 1e-12;

std::string tag(const std::string& base, const std::string& label) { return base + "[" + label + "]"; }

double rel(double err, double ref) { return std::abs(err) / std::max(1.0, std::abs(ref)); }

}  // namespace

DualSolution extract_duals(const ModelInstance& inst, const SolveResult& result) {
  if (result.status != SolveStatus::Optimal) {
    throw Error(Errc::NotOptimal, "solve status is " + std::string(to_string(result.status)));
  }
  const Network& net = *inst.network;
  const Registry& reg = inst.registry;
  const Index n = net.num_buses(), ng = net.num_generators(), nl = net.num_lines();

  auto eq = [&](const std::string& name) {
    const RowRef& r = reg.row(name);
    if (r.set != RowRef::Set::Eq) throw Error(Errc::MissingConstraint, name + " is not an equality row");
    return -result.y[r.index];
  };
  auto cone = [&](const std::string& name) {
    const RowRef& r = reg.row(name);
    if (r.set != RowRef::Set::Cone) throw Error(Errc::MissingConstraint, name + " is not a cone row");
    return result.z[r.index];
  };
  auto per = [](Index count, auto fn) {
    VectorXd out(count);
    for (Index k = 0; k < count; ++k) out[k] = fn(k);
    return out;
  };
  auto gl = [&](Index g) { return gen_label(net, g); };
  auto bl = [&](Index i) { return bus_label(net, i); };
  auto ll = [&](Index l) { return line_label(net, l); };

  DualSolution d;
  d.kind = inst.kind;
  d.lambda_p = per(n, [&](Index i) { return eq(tag("lambda_p", bl(i))); });
  d.lambda_q = per(n, [&](Index i) { return eq(tag("lambda_q", bl(i))); });
  d.beta_p = per(nl, [&](Index l) { return eq(tag("beta_p", ll(l))); });
  d.beta_q = per(nl, [&](Index l) { return eq(tag("beta_q", ll(l))); });
  d.delta_p_plus = per(ng, [&](Index g) { return cone(tag("delta_p+", gl(g))); });
  d.delta_p_minus = per(ng, [&](Index g) { return cone(tag("delta_p-", gl(g))); });
  d.delta_q_plus = per(ng, [&](Index g) { return cone(tag("delta_q+", gl(g))); });
  d.delta_q_minus = per(ng, [&](Index g) { return cone(tag("delta_q-", gl(g))); });
  d.mu_plus = per(n, [&](Index i) { return cone(tag("mu+", bl(i))); });
  d.mu_minus = per(n, [&](Index i) { return cone(tag("mu-", bl(i))); });
  d.eta = per(nl, [&](Index l) {
    return cone(tag("eta", ll(l))) / (2.0 * net.lines()[static_cast<size_t>(l)].s_max);
  });

  if (inst.has_alpha()) {
    d.chi = eq("chi");
    d.kappa_plus = per(ng, [&](Index g) { return cone(tag("alpha_max", gl(g))); });
    d.kappa_minus = per(ng, [&](Index g) { return cone(tag("alpha_min", gl(g))); });
  } else {
    d.absent.insert("chi");
    d.absent.insert("alpha");
    d.kappa_plus = d.kappa_minus = VectorXd::Zero(ng);
  }

  if (inst.has_sigma_rows()) {
    d.zeta_q = per(ng, [&](Index g) { return cone(tag("zeta_q", gl(g))); });
    d.nu_q = per(ng, [&](Index g) { return eq(tag("nu_q", gl(g))); });
    d.zeta_v = per(n, [&](Index i) { return cone(tag("zeta_v", bl(i))); });
    d.nu_v = per(n, [&](Index i) { return eq(tag("nu_v", bl(i))); });
    d.zeta_fp = per(nl, [&](Index l) { return cone(tag("zeta_fp", ll(l))); });
    d.nu_fp = per(nl, [&](Index l) { return eq(tag("nu_fp", ll(l))); });
    d.zeta_fq = per(nl, [&](Index l) { return cone(tag("zeta_fq", ll(l))); });
    d.nu_fq = per(nl, [&](Index l) { return eq(tag("nu_fq", ll(l))); });
    d.xi_fp_plus = per(nl, [&](Index l) { return cone(tag("xi_fp+", ll(l))); });
    d.xi_fp_minus = per(nl, [&](Index l) { return cone(tag("xi_fp-", ll(l))); });
    d.xi_fp0 = per(nl, [&](Index l) { return cone(tag("xi_fp0", ll(l))); });
    d.xi_fq_plus = per(nl, [&](Index l) { return cone(tag("xi_fq+", ll(l))); });
    d.xi_fq_minus = per(nl, [&](Index l) { return cone(tag("xi_fq-", ll(l))); });
    d.xi_fq0 = per(nl, [&](Index l) { return cone(tag("xi_fq0", ll(l))); });
  } else {
    d.absent.insert("sigma");
    d.zeta_q = d.nu_q = VectorXd::Zero(ng);
    d.zeta_v = d.nu_v = VectorXd::Zero(n);
    d.zeta_fp = d.nu_fp = d.zeta_fq = d.nu_fq = VectorXd::Zero(nl);
    d.xi_fp_plus = d.xi_fp_minus = d.xi_fp0 = VectorXd::Zero(nl);
    d.xi_fq_plus = d.xi_fq_minus = d.xi_fq0 = VectorXd::Zero(nl);
  }
  return d;
}

LambdaResiduals decompose_lambda(const DualSolution& duals, const Network& net, const Schedule& primal) {
  LambdaResiduals r{VectorXd::Zero(net.num_buses()), VectorXd::Zero(net.num_buses())};
  for (Index g = 0; g < net.num_generators(); ++g) {
    const Generator& gen = net.generators()[static_cast<size_t>(g)];
    const Index i = net.generator_bus(g);
    const double lp = (primal.p_gen[g] + gen.a()) / gen.b() + duals.delta_p_plus[g] - duals.delta_p_minus[g];
    const double lq = duals.delta_q_plus[g] - duals.delta_q_minus[g];
    r.p[i] = duals.lambda_p[i] - lp;
    r.q[i] = duals.lambda_q[i] - lq;
    r.max_p = std::max(r.max_p, rel(r.p[i], duals.lambda_p[i]));
    r.max_q = std::max(r.max_q, rel(r.q[i], duals.lambda_q[i]));
  }
  return r;
}

double chi_from_rents(const DualSolution& duals, const VectorXd& w, double s_total, double z_p,
                      const VectorXd& y_total) {
  const VectorXd delta = duals.delta_p_plus + duals.delta_p_minus;
  const VectorXd kappa = duals.kappa_plus - duals.kappa_minus;
  const double num = s_total * s_total + z_p * s_total * w.dot(delta) + w.dot(kappa) - w.dot(y_total);
  return num / w.sum();
}

double chi_gen_cc(const DualSolution& duals, const Network& net, const Uncertainty& unc, const RiskParams& risk) {
  VectorXd b(net.num_generators());
  for (Index g = 0; g < b.size(); ++g) b[g] = net.generators()[static_cast<size_t>(g)].b();
  return chi_from_rents(duals, b, unc.s_total(), risk.z_p, VectorXd::Zero(b.size()));
}

namespace {

ChiReconstruction reconstruct(const ModelInstance& inst, const DualSolution& duals, const VectorXd& x, bool va) {
  if (!inst.has_sigma_rows()) throw Error(Errc::MissingConstraint, "model has no standard-deviation rows");
  const Network& net = *inst.network;
  const Registry& reg = inst.registry;
  const Index ng = net.num_generators();
  const Schedule sched = read_schedule(inst, x);
  const double S = inst.uncertainty.s_total();
  const VectorXd& sigma_e = inst.uncertainty.sigma_e();
  const RiskParams& risk = inst.risk;
  const VariancePenalties& psi = inst.psi;

  ChiReconstruction out;
  auto family = [&](const char* key, const WindResponse& resp, const VectorXd& zeta_rents, const VectorXd& weight,
                    auto label, VectorXd& zeta_out, VectorXd& y_out) {
    const Index rows = resp.wind.rows();
    zeta_out = zeta_rents;
    y_out = VectorXd::Zero(ng);
    for (Index k = 0; k < rows; ++k) {
      const double t = x[reg.var(tag(std::string("t_") + key, label(k)))];
      if (va) zeta_out[k] += 2.0 * weight[k] * t;
      if (zeta_out[k] < -1e-6) {
        throw Error(Errc::NegativeZeta, std::string("zeta_") + key + "[" + label(k) + "] = " +
                                            std::to_string(zeta_out[k]));
      }
      if (zeta_out[k] <= kZetaTol || resp.gen.row(k).cwiseAbs().maxCoeff() == 0.0) continue;
      if (t <= kSigmaTol) {
        out.flags.push_back(std::string("DegenerateSigma: zeta_") + key + "[" + label(k) + "]");
        continue;
      }
      const double rho = resp.gen.row(k).dot(sched.alpha);
      const double nu = zeta_out[k] * (resp.wind.row(k).dot(sigma_e) - rho * S * S) / t;
      y_out += nu * resp.gen.row(k).transpose();
    }
  };
  auto gl = [&](Index g) { return gen_label(net, g); };
  auto bl = [&](Index i) { return bus_label(net, i); };
  auto ll = [&](Index l) { return line_label(net, l); };

  const VectorXd zq = risk.z_q * (duals.delta_q_plus + duals.delta_q_minus);
  const VectorXd zv = risk.z_v * (duals.mu_plus + duals.mu_minus);
  const VectorXd zfp = risk.z_f25 * (duals.xi_fp_plus + duals.xi_fp_minus) + risk.z_f5 * duals.xi_fp0;
  const VectorXd zfq = risk.z_f25 * (duals.xi_fq_plus + duals.xi_fq_minus) + risk.z_f5 * duals.xi_fq0;
  family("q", inst.resp_q, zq, psi.psi_q, gl, out.zeta_q, out.y.q);
  family("v", inst.resp_v, zv, psi.psi_v, bl, out.zeta_v, out.y.v);
  family("fp", inst.resp_fp, zfp, psi.psi_fp, ll, out.zeta_fp, out.y.fp);
  family("fq", inst.resp_fq, zfq, psi.psi_fq, ll, out.zeta_fq, out.y.fq);

  VectorXd w(ng);
  for (Index g = 0; g < ng; ++g) {
    const double b = net.generators()[static_cast<size_t>(g)].b();
    w[g] = va ? b / (1.0 + 2.0 * psi.psi_p[g] * b) : b;
  }
  out.chi = chi_from_rents(duals, w, S, risk.z_p, out.y.total());
  return out;
}

}  // namespace

ChiReconstruction chi_eqv_cc(const ModelInstance& inst, const DualSolution& duals, const VectorXd& x) {
  return reconstruct(inst, duals, x, false);
}

ChiReconstruction chi_va_cc(const ModelInstance& inst, const DualSolution& duals, const VectorXd& x) {
  return reconstruct(inst, duals, x, true);
}

PriceReport price_report(const ModelInstance& inst, const SolveResult& result) {
  const DualSolution d = extract_duals(inst, result);
  const Network& net = *inst.network;
  const Index n = net.num_buses();
  const double base = net.base_mva();
  const Schedule sched = read_schedule(inst, result.x);

  PriceReport r;
  r.model = std::string(to_string(inst.kind));
  r.base_mva = base;
  for (const Bus& b : net.buses()) r.bus_ids.push_back(b.id);
  r.lmp_p = d.lambda_p / base;
  r.lmp_q = d.lambda_q / base;
  r.eta = d.eta;
  r.y_q = r.y_v = r.y_fp = r.y_fq = VectorXd::Zero(n);
  r.chi_tilde = VectorXd::Zero(n);

  const LambdaResiduals lam = decompose_lambda(d, net, sched);
  r.decomposition_residuals["lambda_p"] = lam.max_p;
  r.decomposition_residuals["lambda_q"] = lam.max_q;

  if (inst.has_alpha()) {
    r.has_chi = true;
    r.chi = d.chi;
    YTerms y;
    if (inst.kind == ModelKind::GenCC) {
      r.chi_formula = chi_gen_cc(d, net, inst.uncertainty, inst.risk);
      const Index ng = net.num_generators();
      y = {VectorXd::Zero(ng), VectorXd::Zero(ng), VectorXd::Zero(ng), VectorXd::Zero(ng)};
    } else {
      ChiReconstruction c = inst.kind == ModelKind::VaCC ? chi_va_cc(inst, d, result.x) : chi_eqv_cc(inst, d, result.x);
      r.chi_formula = c.chi;
      y = c.y;
      r.flags = c.flags;
      double zr = 0.0;
      auto cmp = [&](const VectorXd& rebuilt, const VectorXd& raw) {
        for (Index k = 0; k < raw.size(); ++k) zr = std::max(zr, rel(rebuilt[k] - raw[k], raw[k]));
      };
      cmp(c.zeta_q, d.zeta_q);
      cmp(c.zeta_v, d.zeta_v);
      cmp(c.zeta_fp, d.zeta_fp);
      cmp(c.zeta_fq, d.zeta_fq);
      r.decomposition_residuals["zeta"] = zr;
    }
    r.decomposition_residuals["chi"] = rel(r.chi_formula - r.chi, r.chi);
    r.chi_tilde.setConstant(r.chi);
    for (Index g = 0; g < net.num_generators(); ++g) {
      const Index i = net.generator_bus(g);
      r.y_q[i] = y.q[g];
      r.y_v[i] = y.v[g];
      r.y_fp[i] = y.fp[g];
      r.y_fq[i] = y.fq[g];
      r.chi_tilde[i] = r.chi + y.q[g] + y.v[g] + y.fp[g] + y.fq[g];
    }
  }

  if (inst.has_sigma_rows()) {
    r.has_sigma = true;
    const Sigmas s = realized_sigmas(inst, sched.alpha);
    r.sigma_q = s.q;
    r.sigma_v = s.v;
    r.sigma_fp = s.fp;
    r.sigma_fq = s.fq;
  }
  return r;
}

namespace {

json vec(const VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

VectorXd unvec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

bool same(const VectorXd& a, const VectorXd& b) { return a.size() == b.size() && a == b; }

}  // namespace

bool same_report(const PriceReport& a, const PriceReport& b) {
  return a.model == b.model && a.base_mva == b.base_mva && a.bus_ids == b.bus_ids && same(a.lmp_p, b.lmp_p) &&
         same(a.lmp_q, b.lmp_q) && a.has_chi == b.has_chi && a.chi == b.chi && a.chi_formula == b.chi_formula &&
         same(a.chi_tilde, b.chi_tilde) && same(a.y_q, b.y_q) && same(a.y_v, b.y_v) && same(a.y_fp, b.y_fp) &&
         same(a.y_fq, b.y_fq) && a.has_sigma == b.has_sigma && same(a.sigma_q, b.sigma_q) &&
         same(a.sigma_v, b.sigma_v) && same(a.sigma_fp, b.sigma_fp) && same(a.sigma_fq, b.sigma_fq) &&
         same(a.eta, b.eta) && a.decomposition_residuals == b.decomposition_residuals && a.flags == b.flags;
}

std::string price_report_to_json(const PriceReport& r) {
  json j;
  j["schema"] = kPriceReportSchema;
  j["model"] = r.model;
  j["base_mva"] = r.base_mva;
  j["bus_ids"] = r.bus_ids;
  j["lmp_p"] = vec(r.lmp_p);
  j["lmp_q"] = vec(r.lmp_q);
  j["eta"] = vec(r.eta);
  if (r.has_chi) {
    j["chi"] = r.chi;
    j["chi_per_unit"] = r.chi / r.base_mva;
    j["chi_formula"] = r.chi_formula;
    j["chi_tilde"] = vec(r.chi_tilde);
    j["y_q"] = vec(r.y_q);
    j["y_v"] = vec(r.y_v);
    j["y_fp"] = vec(r.y_fp);
    j["y_fq"] = vec(r.y_fq);
  } else {
    j["chi"] = nullptr;
  }
  if (r.has_sigma) {
    j["sigma_q"] = vec(r.sigma_q);
    j["sigma_v"] = vec(r.sigma_v);
    j["sigma_fp"] = vec(r.sigma_fp);
    j["sigma_fq"] = vec(r.sigma_fq);
  }
  j["decomposition_residuals"] = r.decomposition_residuals;
  j["flags"] = r.flags;
  return j.dump(1);
}

PriceReport price_report_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::SchemaViolation, std::string("malformed price report: ") + e.what());
  }
  if (j.value("schema", "") != kPriceReportSchema) throw Error(Errc::SchemaViolation, "not a price report");
  try {
    PriceReport r;
    r.model = j.at("model").get<std::string>();
    r.base_mva = j.at("base_mva").get<double>();
    r.bus_ids = j.at("bus_ids").get<std::vector<int>>();
    r.lmp_p = unvec(j.at("lmp_p"));
    r.lmp_q = unvec(j.at("lmp_q"));
    r.eta = unvec(j.at("eta"));
    const Index n = static_cast<Index>(r.bus_ids.size());
    r.y_q = r.y_v = r.y_fp = r.y_fq = r.chi_tilde = VectorXd::Zero(n);
    if (!j.at("chi").is_null()) {
      r.has_chi = true;
      r.chi = j.at("chi").get<double>();
      r.chi_formula = j.at("chi_formula").get<double>();
      r.chi_tilde = unvec(j.at("chi_tilde"));
      r.y_q = unvec(j.at("y_q"));
      r.y_v = unvec(j.at("y_v"));
      r.y_fp = unvec(j.at("y_fp"));
      r.y_fq = unvec(j.at("y_fq"));
    }
    if (j.contains("sigma_q")) {
      r.has_sigma = true;
      r.sigma_q = unvec(j.at("sigma_q"));
      r.sigma_v = unvec(j.at("sigma_v"));
      r.sigma_fp = unvec(j.at("sigma_fp"));
      r.sigma_fq = unvec(j.at("sigma_fq"));
    }
    r.decomposition_residuals = j.at("decomposition_residuals").get<std::map<std::string, double>>();
    r.flags = j.at("flags").get<std::vector<std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaViolation, std::string("price report: ") + e.what());
  }
}

std::string price_report_csv(const PriceReport& r) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "bus,lmp_p,lmp_q,chi_tilde,y_q,y_v,y_fp,y_fq\n";
  for (size_t k = 0; k < r.bus_ids.size(); ++k) {
    const Index i = static_cast<Index>(k);
    out << r.bus_ids[k] << ',' << r.lmp_p[i] << ',' << r.lmp_q[i] << ',';
    if (r.has_chi) {
      out << r.chi_tilde[i] << ',' << r.y_q[i] << ',' << r.y_v[i] << ',' << r.y_fp[i] << ',' << r.y_fq[i];
    } else {
      out << ",,,,";
    }
    out << '\n';
  }
  return out.str();
}

std::string dual_solution_to_json(const ModelInstance& inst, const DualSolution& d) {
  const Network& net = *inst.network;
  json j;
  auto named = [&](const VectorXd& v, auto label) {
    json o = json::object();
    for (Index k = 0; k < v.size(); ++k) o[label(k)] = v[k];
    return o;
  };
  auto gl = [&](Index g) { return gen_label(net, g); };
  auto bl = [&](Index i) { return bus_label(net, i); };
  auto ll = [&](Index l) { return line_label(net, l); };
  j["lambda_p"] = named(d.lambda_p, bl);
  j["lambda_q"] = named(d.lambda_q, bl);
  j["beta_p"] = named(d.beta_p, ll);
  j["beta_q"] = named(d.beta_q, ll);
  j["delta_p+"] = named(d.delta_p_plus, gl);
  j["delta_p-"] = named(d.delta_p_minus, gl);
  j["delta_q+"] = named(d.delta_q_plus, gl);
  j["delta_q-"] = named(d.delta_q_minus, gl);
  j["mu+"] = named(d.mu_plus, bl);
  j["mu-"] = named(d.mu_minus, bl);
  j["eta"] = named(d.eta, ll);
  if (d.has("chi")) {
    j["chi"] = d.chi;
    j["alpha_max"] = named(d.kappa_plus, gl);
    j["alpha_min"] = named(d.kappa_minus, gl);
  }
  if (d.has("sigma")) {
    j["zeta_q"] = named(d.zeta_q, gl);
    j["nu_q"] = named(d.nu_q, gl);
    j["zeta_v"] = named(d.zeta_v, bl);
    j["nu_v"] = named(d.nu_v, bl);
    j["zeta_fp"] = named(d.zeta_fp, ll);
    j["nu_fp"] = named(d.nu_fp, ll);
    j["zeta_fq"] = named(d.zeta_fq, ll);
    j["nu_fq"] = named(d.nu_fq, ll);
    j["xi_fp+"] = named(d.xi_fp_plus, ll);
    j["xi_fp-"] = named(d.xi_fp_minus, ll);
    j["xi_fp0"] = named(d.xi_fp0, ll);
    j["xi_fq+"] = named(d.xi_fq_plus, ll);
    j["xi_fq-"] = named(d.xi_fq_minus, ll);
    j["xi_fq0"] = named(d.xi_fq0, ll);
  }
  j["absent"] = d.absent;
  return j.dump(1);
}

}  // namespace ccopf
