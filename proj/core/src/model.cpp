#include "ccopf/model.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "ccopf/error.hpp"

namespace ccopf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Det: return "det";
    case ModelKind::GenCC: return "gen-cc";
    case ModelKind::EqvCC: return "eqv-cc";
    case ModelKind::VaCC: return "va-cc";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "det") return ModelKind::Det;
  if (text == "gen-cc") return ModelKind::GenCC;
  if (text == "eqv-cc") return ModelKind::EqvCC;
  if (text == "va-cc") return ModelKind::VaCC;
  throw Error(Errc::OutOfRange, "unknown model kind '" + std::string(text) + "'");
}

Index Registry::add_var(const std::string& name) {
  const Index idx = static_cast<Index>(var_names_.size());
  if (!vars_.emplace(name, idx).second) throw Error(Errc::InvalidProgram, "duplicate variable " + name);
  var_names_.push_back(name);
  return idx;
}

void Registry::add_row(const std::string& name, RowRef ref) {
  if (!rows_.emplace(name, ref).second) throw Error(Errc::InvalidProgram, "duplicate constraint " + name);
}

Index Registry::var(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw Error(Errc::MissingConstraint, "no variable " + name);
  return it->second;
}

const RowRef& Registry::row(const std::string& name) const {
  auto it = rows_.find(name);
  if (it == rows_.end()) throw Error(Errc::MissingConstraint, "no constraint " + name);
  return it->second;
}

std::string gen_label(const Network& net, Index g) {
  return std::to_string(net.generators()[static_cast<size_t>(g)].bus);
}

std::string bus_label(const Network& net, Index i) {
  return std::to_string(net.buses()[static_cast<size_t>(i)].id);
}

std::string line_label(const Network& net, Index l) {
  const Line& line = net.lines()[static_cast<size_t>(l)];
  return std::to_string(line.from) + "-" + std::to_string(line.to);
}

namespace {

using Terms = std::vector<std::pair<Index, double>>;

std::string tag(const std::string& base, const std::string& label) { return base + "[" + label + "]"; }

// Accumulates variables and rows; cone rows are emitted as one nonnegative
// block followed by the second-order blocks in insertion order.
class ProgramBuilder {
 public:
  explicit ProgramBuilder(Registry& reg) : reg_(reg) {}

  Index var(const std::string& name) {
    c_.push_back(0.0);
    return reg_.add_var(name);
  }
  void quad(Index i, double coef) { q_.emplace_back(i, i, coef); }
  void linear(Index i, double coef) { c_[static_cast<size_t>(i)] += coef; }
  void constant(double v) { offset_ += v; }

  void eq(const std::string& name, const Terms& t, double rhs) {
    const Index row = static_cast<Index>(b_.size());
    for (const auto& [j, v] : t) a_.emplace_back(row, j, v);
    b_.push_back(rhs);
    reg_.add_row(name, {RowRef::Set::Eq, row, 1});
  }
  void le(const std::string& name, const Terms& t, double rhs) {
    le_.push_back({name, t, rhs});
  }
  // h - G x in SOC: one entry of (terms, h) per cone coordinate.
  void soc(const std::string& name, std::vector<std::pair<Terms, double>> rows) {
    soc_.push_back({name, std::move(rows)});
  }

  ConicProgram finish() {
    ConicProgram p;
    const Index n = static_cast<Index>(c_.size());
    p.c = Eigen::Map<VectorXd>(c_.data(), n);
    p.offset = offset_;
    p.Q.resize(n, n);
    p.Q.setFromTriplets(q_.begin(), q_.end());
    p.A.resize(static_cast<Index>(b_.size()), n);
    p.A.setFromTriplets(a_.begin(), a_.end());
    p.b = Eigen::Map<VectorXd>(b_.data(), static_cast<Index>(b_.size()));

    std::vector<Eigen::Triplet<double>> g;
    std::vector<double> h;
    for (const auto& r : le_) {
      const Index row = static_cast<Index>(h.size());
      for (const auto& [j, v] : r.terms) g.emplace_back(row, j, v);
      h.push_back(r.rhs);
      reg_.add_row(r.name, {RowRef::Set::Cone, row, 1});
    }
    if (!le_.empty()) p.cones.push_back(Cone::nonnegative(static_cast<Index>(le_.size())));
    for (const auto& blk : soc_) {
      const Index start = static_cast<Index>(h.size());
      for (const auto& [terms, hv] : blk.rows) {
        const Index row = static_cast<Index>(h.size());
        for (const auto& [j, v] : terms) g.emplace_back(row, j, v);
        h.push_back(hv);
      }
      const Index dim = static_cast<Index>(blk.rows.size());
      p.cones.push_back(Cone::second_order(dim));
      reg_.add_row(blk.name, {RowRef::Set::Cone, start, dim});
    }
    p.G.resize(static_cast<Index>(h.size()), n);
    p.G.setFromTriplets(g.begin(), g.end());
    p.h = Eigen::Map<VectorXd>(h.data(), static_cast<Index>(h.size()));
    return p;
  }

 private:
  struct Le {
    std::string name;
    Terms terms;
    double rhs;
  };
  struct Soc {
    std::string name;
    std::vector<std::pair<Terms, double>> rows;
  };
  Registry& reg_;
  std::vector<double> c_, b_;
  std::vector<Eigen::Triplet<double>> q_, a_;
  double offset_ = 0.0;
  std::vector<Le> le_;
  std::vector<Soc> soc_;
};

// Linearized row: quantity(x) = base + jv (v - v0) + jt (theta - theta0).
// Adds -jv, -jt terms and returns the constant moved to the right-hand side.
double linear_part(Terms& t, const Eigen::Ref<const Eigen::RowVectorXd>& jv,
                   const Eigen::Ref<const Eigen::RowVectorXd>& jt, const std::vector<Index>& v_idx,
                   const std::vector<Index>& t_idx, const VectorXd& v0, const VectorXd& t0) {
  double shift = 0.0;
  for (Index k = 0; k < jv.size(); ++k) {
    if (jv[k] != 0.0) {
      t.emplace_back(v_idx[static_cast<size_t>(k)], -jv[k]);
      shift += jv[k] * v0[k];
    }
    if (jt[k] != 0.0) {
      t.emplace_back(t_idx[static_cast<size_t>(k)], -jt[k]);
      shift += jt[k] * t0[k];
    }
  }
  return -shift;
}

struct Family {
  std::string t_name, rho_name, zeta_name, nu_name;
  const WindResponse* resp;
};

ModelInstance build(ModelKind kind, const Network& net, const OperatingPoint& point,
                    const SensitivityFactors& sf, const Uncertainty& unc, const RiskParams& risk,
                    const VariancePenalties& psi) {
  const Index n = net.num_buses(), ng = net.num_generators(), nl = net.num_lines(), nw = net.num_wind();
  const bool cc = kind != ModelKind::Det;
  const bool sigma_rows = kind == ModelKind::EqvCC || kind == ModelKind::VaCC;
  const bool va = kind == ModelKind::VaCC;

  if (point.state.v.size() != n || sf.v.r.rows() != n || sf.q.r.rows() != ng || sf.fp.r.rows() != nl) {
    throw Error(Errc::DimensionMismatch, "operating point or sensitivities do not match the network");
  }
  if (cc && unc.size() != nw) {
    throw Error(Errc::DimensionMismatch, "covariance has " + std::to_string(unc.size()) + " rows for " +
                                             std::to_string(nw) + " wind units");
  }
  if (va) {
    if (psi.psi_p.size() != ng || psi.psi_q.size() != ng || psi.psi_v.size() != n ||
        psi.psi_fp.size() != nl || psi.psi_fq.size() != nl) {
      throw Error(Errc::DimensionMismatch, "variance penalties do not match the network");
    }
  }
  double headroom = 0.0;
  for (const Generator& g : net.generators()) {
    if (g.p_min > g.p_max) throw Error(Errc::InfeasibleBounds, "generator at bus " + std::to_string(g.bus));
    headroom += g.p_max - g.p_min;
  }
  const double S = cc ? unc.s_total() : 0.0;
  if (cc) {
    if (ng == 0) throw Error(Errc::InfeasibleReserve, "no generator can provide balancing");
    if (2.0 * risk.z_p * S > headroom * (1.0 + 1e-12)) {
      throw Error(Errc::InfeasibleReserve, "reserve requirement 2 z_p S exceeds total generator range");
    }
  }

  ModelInstance inst;
  inst.kind = kind;
  inst.network = std::make_shared<const Network>(net);
  inst.point = point;
  if (cc) {
    inst.uncertainty = unc;
    inst.risk = risk;
  } else {
    inst.uncertainty = Uncertainty::none(nw);
  }
  inst.psi = va ? psi : VariancePenalties::zero(net);
  inst.resp_q = wind_response(sf.q, net);
  inst.resp_v = wind_response(sf.v, net);
  inst.resp_fp = wind_response(sf.fp, net);
  inst.resp_fq = wind_response(sf.fq, net);

  ProgramBuilder pb(inst.registry);
  std::vector<Index> pg(ng), qg(ng), vv(n), th(n), fp(nl), fq(nl), al;
  for (Index g = 0; g < ng; ++g) pg[g] = pb.var(tag("p_G", gen_label(net, g)));
  for (Index g = 0; g < ng; ++g) qg[g] = pb.var(tag("q_G", gen_label(net, g)));
  for (Index i = 0; i < n; ++i) vv[i] = pb.var(tag("v", bus_label(net, i)));
  for (Index i = 0; i < n; ++i) th[i] = pb.var(tag("theta", bus_label(net, i)));
  for (Index l = 0; l < nl; ++l) fp[l] = pb.var(tag("f_p", line_label(net, l)));
  for (Index l = 0; l < nl; ++l) fq[l] = pb.var(tag("f_q", line_label(net, l)));
  if (cc) {
    al.resize(ng);
    for (Index g = 0; g < ng; ++g) al[g] = pb.var(tag("alpha", gen_label(net, g)));
  }

  // expected cost
  for (Index g = 0; g < ng; ++g) {
    const Generator& gen = net.generators()[static_cast<size_t>(g)];
    pb.quad(pg[g], 2.0 * gen.c2);
    pb.linear(pg[g], gen.c1);
    pb.constant(gen.c0);
    if (cc) {
      double a2 = S * S / gen.b();
      if (va) a2 += 2.0 * psi.psi_p[g] * S * S;
      if (a2 != 0.0) pb.quad(al[g], a2);
    }
  }

  // nodal balance and flow definitions, deviation form around the point
  const SystemState& st = point.state;
  const PfJacobian& J = sf.jacobian;
  const VectorXd pw = net.p_wind_at_buses(), qw = net.q_wind_at_buses();
  for (Index i = 0; i < n; ++i) {
    const Bus& bus = net.buses()[static_cast<size_t>(i)];
    const Index g = net.generator_at(i);
    Terms tp, tq;
    if (g >= 0) {
      tp.emplace_back(pg[g], 1.0);
      tq.emplace_back(qg[g], 1.0);
    }
    const double rp = linear_part(tp, J.p_v.row(i), J.p_theta.row(i), vv, th, st.v, st.theta);
    const double rq = linear_part(tq, J.q_v.row(i), J.q_theta.row(i), vv, th, st.v, st.theta);
    pb.eq(tag("lambda_p", bus_label(net, i)), tp, st.p_inj[i] + bus.p_d - pw[i] + rp);
    pb.eq(tag("lambda_q", bus_label(net, i)), tq, st.q_inj[i] + bus.q_d - qw[i] + rq);
  }
  for (Index l = 0; l < nl; ++l) {
    Terms tp{{fp[l], 1.0}}, tq{{fq[l], 1.0}};
    const double rp = linear_part(tp, J.fp_from.dv.row(l), J.fp_from.dtheta.row(l), vv, th, st.v, st.theta);
    const double rq = linear_part(tq, J.fq_from.dv.row(l), J.fq_from.dtheta.row(l), vv, th, st.v, st.theta);
    pb.eq(tag("beta_p", line_label(net, l)), tp, st.fp_from[l] + rp);
    pb.eq(tag("beta_q", line_label(net, l)), tq, st.fq_from[l] + rq);
  }
  pb.eq("theta_ref", {{th[net.ref_bus()], 1.0}}, st.theta[net.ref_bus()]);

  if (cc) {
    Terms sum;
    for (Index g = 0; g < ng; ++g) sum.emplace_back(al[g], 1.0);
    pb.eq("chi", sum, 1.0);
    for (Index g = 0; g < ng; ++g) {
      pb.le(tag("alpha_max", gen_label(net, g)), {{al[g], 1.0}}, 1.0);
      pb.le(tag("alpha_min", gen_label(net, g)), {{al[g], -1.0}}, 0.0);
    }
  }

  // sigma auxiliaries
  std::vector<Index> t_q, t_v, t_fp, t_fq, a_fp, a_fq;
  if (sigma_rows) {
    const MatrixXd& B = unc.root();
    const VectorXd bte = B.transpose() * VectorXd::Ones(nw);
    auto family = [&](const std::string& key, const WindResponse& resp, Index rows, auto label,
                      const VectorXd& weights, std::vector<Index>& t_out) {
      t_out.resize(rows);
      for (Index k = 0; k < rows; ++k) {
        const std::string lab = label(k);
        const Index t = pb.var(tag("t_" + key, lab));
        const Index rho = pb.var(tag("rho_" + key, lab));
        t_out[k] = t;
        if (va && weights[k] != 0.0) pb.quad(t, 2.0 * weights[k]);
        Terms nu{{rho, -1.0}};
        for (Index g = 0; g < ng; ++g) {
          if (resp.gen(k, g) != 0.0) nu.emplace_back(al[g], resp.gen(k, g));
        }
        pb.eq(tag("nu_" + key, lab), nu, 0.0);
        // (t ; B'(a - rho e)) in SOC
        const VectorXd ba = B.transpose() * resp.wind.row(k).transpose();
        std::vector<std::pair<Terms, double>> rows_soc;
        rows_soc.push_back({Terms{{t, -1.0}}, 0.0});
        for (Index j = 0; j < nw; ++j) rows_soc.push_back({Terms{{rho, bte[j]}}, ba[j]});
        pb.soc(tag("zeta_" + key, lab), std::move(rows_soc));
      }
    };
    auto gl = [&](Index g) { return gen_label(net, g); };
    auto bl = [&](Index i) { return bus_label(net, i); };
    auto ll = [&](Index l) { return line_label(net, l); };
    family("q", inst.resp_q, ng, gl, inst.psi.psi_q, t_q);
    family("v", inst.resp_v, n, bl, inst.psi.psi_v, t_v);
    family("fp", inst.resp_fp, nl, ll, inst.psi.psi_fp, t_fp);
    family("fq", inst.resp_fq, nl, ll, inst.psi.psi_fq, t_fq);
    a_fp.resize(nl);
    a_fq.resize(nl);
    for (Index l = 0; l < nl; ++l) {
      a_fp[l] = pb.var(tag("a_fp", ll(l)));
      a_fq[l] = pb.var(tag("a_fq", ll(l)));
    }
  }

  // generator limits
  for (Index g = 0; g < ng; ++g) {
    const Generator& gen = net.generators()[static_cast<size_t>(g)];
    const std::string lab = gen_label(net, g);
    Terms up{{pg[g], 1.0}}, dn{{pg[g], -1.0}};
    if (cc && S != 0.0) {
      up.emplace_back(al[g], risk.z_p * S);
      dn.emplace_back(al[g], risk.z_p * S);
    }
    pb.le(tag("delta_p+", lab), up, gen.p_max);
    pb.le(tag("delta_p-", lab), dn, -gen.p_min);
    Terms qu{{qg[g], 1.0}}, qd{{qg[g], -1.0}};
    if (sigma_rows) {
      qu.emplace_back(t_q[g], risk.z_q);
      qd.emplace_back(t_q[g], risk.z_q);
    }
    pb.le(tag("delta_q+", lab), qu, gen.q_max);
    pb.le(tag("delta_q-", lab), qd, -gen.q_min);
  }
  for (Index i = 0; i < n; ++i) {
    const Bus& bus = net.buses()[static_cast<size_t>(i)];
    const std::string lab = bus_label(net, i);
    Terms up{{vv[i], 1.0}}, dn{{vv[i], -1.0}};
    if (sigma_rows) {
      up.emplace_back(t_v[i], risk.z_v);
      dn.emplace_back(t_v[i], risk.z_v);
    }
    pb.le(tag("mu+", lab), up, bus.v_max);
    pb.le(tag("mu-", lab), dn, -bus.v_min);
  }
  for (Index l = 0; l < nl; ++l) {
    const std::string lab = line_label(net, l);
    const double smax = net.lines()[static_cast<size_t>(l)].s_max;
    if (!sigma_rows) {
      pb.soc(tag("eta", lab), {{Terms{}, smax}, {Terms{{fp[l], -1.0}}, 0.0}, {Terms{{fq[l], -1.0}}, 0.0}});
      continue;
    }
    pb.soc(tag("eta", lab), {{Terms{}, smax}, {Terms{{a_fp[l], -1.0}}, 0.0}, {Terms{{a_fq[l], -1.0}}, 0.0}});
    const std::pair<const char*, std::pair<Index, std::pair<Index, Index>>> fams[] = {
        {"fp", {fp[l], {a_fp[l], t_fp[l]}}}, {"fq", {fq[l], {a_fq[l], t_fq[l]}}}};
    for (const auto& [key, ids] : fams) {
      const Index f = ids.first, a = ids.second.first, t = ids.second.second;
      const std::string k = key;
      pb.le(tag("xi_" + k + "+", lab), {{f, -1.0}, {a, -1.0}, {t, risk.z_f25}}, 0.0);
      pb.le(tag("xi_" + k + "-", lab), {{f, 1.0}, {a, -1.0}, {t, risk.z_f25}}, 0.0);
      pb.le(tag("xi_" + k + "0", lab), {{t, risk.z_f5}, {a, -1.0}}, 0.0);
    }
  }

  inst.program = pb.finish();
  return inst;
}

}  // namespace

ModelInstance build_det(const Network& net, const OperatingPoint& point, const SensitivityFactors& sf) {
  return build(ModelKind::Det, net, point, sf, Uncertainty::none(net.num_wind()), RiskParams{},
               VariancePenalties::zero(net));
}

ModelInstance build_gen_cc(const Network& net, const OperatingPoint& point, const SensitivityFactors& sf,
                           const Uncertainty& unc, const RiskParams& risk) {
  return build(ModelKind::GenCC, net, point, sf, unc, risk, VariancePenalties::zero(net));
}

ModelInstance build_eqv_cc(const Network& net, const OperatingPoint& point, const SensitivityFactors& sf,
                           const Uncertainty& unc, const RiskParams& risk) {
  return build(ModelKind::EqvCC, net, point, sf, unc, risk, VariancePenalties::zero(net));
}

ModelInstance build_va_cc(const Network& net, const OperatingPoint& point, const SensitivityFactors& sf,
                          const Uncertainty& unc, const RiskParams& risk, const VariancePenalties& psi) {
  return build(ModelKind::VaCC, net, point, sf, unc, risk, psi);
}

ModelInstance build_model(ModelKind kind, const Network& net, const OperatingPoint& point,
                          const SensitivityFactors& sf, const Uncertainty& unc, const RiskParams& risk,
                          const VariancePenalties& psi) {
  return build(kind, net, point, sf, unc, risk, psi);
}

OperatingPoint linearization_point(const Network& net, const LinearizationOptions& options,
                                   LinearizationInfo* info) {
  Dispatch d = case_dispatch(net);
  d.p_gen = economic_dispatch(net);
  OperatingPoint op = newton_pf(net, d, options.newton);
  LinearizationInfo local;
  if (!options.iterate) local.converged = true;
  for (int round = 0; options.iterate && round < options.max_rounds; ++round) {
    const SensitivityFactors sf = response_matrices(net, op);
    const ModelInstance inst = build_det(net, op, sf);
    const SolveResult r = solve(inst.program, options.solver);
    if (r.status != SolveStatus::Optimal) break;
    const Schedule s = read_schedule(inst, r.x);
    local.rounds = round + 1;
    local.last_change = 0.0;
    for (Index g = 0; g < net.num_generators(); ++g) {
      if (net.generator_bus(g) == net.ref_bus()) continue;  // the slack absorbs losses
      local.last_change = std::max(local.last_change, std::abs(s.p_gen[g] - op.p_gen[g]));
    }
    if (local.last_change < options.tolerance) {
      local.converged = true;
      break;
    }
    // Only active dispatch is carried over. Voltages are nearly free in the
    // linear model and alternate between bounds from round to round.
    d.p_gen = s.p_gen;
    NewtonOptions no = options.newton;
    no.warm_start = &op.state;
    op = newton_pf(net, d, no);
  }
  if (info) *info = local;
  return op;
}

Schedule read_schedule(const ModelInstance& inst, const VectorXd& x) {
  const Network& net = *inst.network;
  const Registry& reg = inst.registry;
  const Index n = net.num_buses(), ng = net.num_generators(), nl = net.num_lines();
  Schedule s{VectorXd(ng), VectorXd(ng), VectorXd::Zero(ng), VectorXd(n), VectorXd(n), VectorXd(nl), VectorXd(nl)};
  for (Index g = 0; g < ng; ++g) {
    const std::string lab = gen_label(net, g);
    s.p_gen[g] = x[reg.var(tag("p_G", lab))];
    s.q_gen[g] = x[reg.var(tag("q_G", lab))];
    if (inst.has_alpha()) s.alpha[g] = x[reg.var(tag("alpha", lab))];
  }
  for (Index i = 0; i < n; ++i) {
    s.v[i] = x[reg.var(tag("v", bus_label(net, i)))];
    s.theta[i] = x[reg.var(tag("theta", bus_label(net, i)))];
  }
  for (Index l = 0; l < nl; ++l) {
    s.fp[l] = x[reg.var(tag("f_p", line_label(net, l)))];
    s.fq[l] = x[reg.var(tag("f_q", line_label(net, l)))];
  }
  return s;
}

Sigmas realized_sigmas(const ModelInstance& inst, const VectorXd& alpha) {
  const MatrixXd& B = inst.uncertainty.root();
  auto norms = [&](const WindResponse& resp) {
    VectorXd out = VectorXd::Zero(resp.wind.rows());
    if (B.size() == 0) return out;
    const VectorXd rho = resp.gen * alpha;
    const MatrixXd m = resp.wind - rho * Eigen::RowVectorXd::Ones(resp.wind.cols());
    return VectorXd((m * B).rowwise().norm());
  };
  return {norms(inst.resp_q), norms(inst.resp_v), norms(inst.resp_fp), norms(inst.resp_fq)};
}

ObjectiveParts objective_parts(const ModelInstance& inst, const VectorXd& x) {
  const Network& net = *inst.network;
  const Schedule s = read_schedule(inst, x);
  const double S = inst.uncertainty.s_total();
  ObjectiveParts out;
  for (Index g = 0; g < net.num_generators(); ++g) {
    const Generator& gen = net.generators()[static_cast<size_t>(g)];
    out.generation_cost += gen.cost(s.p_gen[g]);
    out.expected_cost += expected_cost(gen, s.p_gen[g], s.alpha[g], S);
  }
  if (!inst.has_alpha()) return out;
  const Registry& reg = inst.registry;
  auto add = [&](const std::string& key, const VectorXd& w, Index rows, auto label) {
    for (Index k = 0; k < rows; ++k) {
      const double t = x[reg.var(tag("t_" + key, label(k)))];
      out.penalty += w[k] * t * t;
    }
  };
  if (inst.has_sigma_rows()) {
    add("q", inst.psi.psi_q, net.num_generators(), [&](Index g) { return gen_label(net, g); });
    add("v", inst.psi.psi_v, net.num_buses(), [&](Index i) { return bus_label(net, i); });
    add("fp", inst.psi.psi_fp, net.num_lines(), [&](Index l) { return line_label(net, l); });
    add("fq", inst.psi.psi_fq, net.num_lines(), [&](Index l) { return line_label(net, l); });
  }
  const Sigmas sig = realized_sigmas(inst, s.alpha);
  out.v_metric = sig.q.squaredNorm() + sig.v.squaredNorm() + sig.fp.squaredNorm() + sig.fq.squaredNorm();
  for (Index g = 0; g < net.num_generators(); ++g) {
    const double a2s2 = s.alpha[g] * s.alpha[g] * S * S;
    out.penalty += inst.psi.psi_p[g] * a2s2;
    out.v_metric += a2s2;
  }
  return out;
}

}  // namespace ccopf
