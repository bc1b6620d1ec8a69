#include "ccopf/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "ccopf/error.hpp"

namespace ccopf {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void check_dims(const Network& net, const VectorXd& v, const VectorXd& theta) {
  if (v.size() != net.num_buses() || theta.size() != net.num_buses()) {
    throw Error(Errc::DimensionMismatch,
                "state has " + std::to_string(v.size()) + "/" + std::to_string(theta.size()) +
                    " entries for " + std::to_string(net.num_buses()) + " buses");
  }
}

// Series admittance y = g + jb of a line.
std::complex<double> series_admittance(const Line& l) {
  return 1.0 / std::complex<double>(l.r, l.x);
}

struct EndFlow {
  double p, q;
  // partials with respect to (v_i, v_j, theta_i); d/dtheta_j = -d/dtheta_i
  double p_vi, p_vj, p_ti;
  double q_vi, q_vj, q_ti;
};

// Flow leaving bus i towards j over a pi-model line.
EndFlow end_flow(const Line& l, double vi, double vj, double ti, double tj) {
  const auto y = series_admittance(l);
  const double g = y.real(), b = y.imag(), bc = l.b_charge / 2.0;
  const double c = std::cos(ti - tj), s = std::sin(ti - tj);
  const double gc_bs = g * c + b * s;
  const double gs_bc = g * s - b * c;
  EndFlow f;
  f.p = vi * vi * g - vi * vj * gc_bs;
  f.q = -vi * vi * (b + bc) - vi * vj * gs_bc;
  f.p_vi = 2.0 * vi * g - vj * gc_bs;
  f.p_vj = -vi * gc_bs;
  f.p_ti = vi * vj * gs_bc;
  f.q_vi = -2.0 * vi * (b + bc) - vj * gs_bc;
  f.q_vj = -vi * gs_bc;
  f.q_ti = -vi * vj * gc_bs;
  return f;
}

struct InjectionJacobian {
  MatrixXd p_v, p_theta, q_v, q_theta;
};

InjectionJacobian injection_jacobian(const ComplexSparse& y, const VectorXd& v,
                                     const VectorXd& theta, const VectorXd& p,
                                     const VectorXd& q) {
  const Index n = v.size();
  InjectionJacobian j{MatrixXd::Zero(n, n), MatrixXd::Zero(n, n), MatrixXd::Zero(n, n),
                      MatrixXd::Zero(n, n)};
  for (Index col = 0; col < y.outerSize(); ++col) {
    for (ComplexSparse::InnerIterator it(y, col); it; ++it) {
      const Index i = it.row(), k = it.col();
      if (i == k) continue;
      const double g = it.value().real(), b = it.value().imag();
      const double c = std::cos(theta[i] - theta[k]), s = std::sin(theta[i] - theta[k]);
      j.p_theta(i, k) = v[i] * v[k] * (g * s - b * c);
      j.p_v(i, k) = v[i] * (g * c + b * s);
      j.q_theta(i, k) = -v[i] * v[k] * (g * c + b * s);
      j.q_v(i, k) = v[i] * (g * s - b * c);
    }
  }
  for (Index i = 0; i < n; ++i) {
    const auto yii = y.coeff(i, i);
    const double g = yii.real(), b = yii.imag();
    j.p_theta(i, i) = -q[i] - b * v[i] * v[i];
    j.p_v(i, i) = p[i] / v[i] + g * v[i];
    j.q_theta(i, i) = p[i] - g * v[i] * v[i];
    j.q_v(i, i) = q[i] / v[i] - b * v[i];
  }
  return j;
}

}  // namespace

void compute_injections(const ComplexSparse& ybus, const VectorXd& v, const VectorXd& theta,
                        VectorXd& p, VectorXd& q) {
  const Index n = v.size();
  p = VectorXd::Zero(n);
  q = VectorXd::Zero(n);
  for (Index col = 0; col < ybus.outerSize(); ++col) {
    for (ComplexSparse::InnerIterator it(ybus, col); it; ++it) {
      const Index i = it.row(), k = it.col();
      const double g = it.value().real(), b = it.value().imag();
      const double c = std::cos(theta[i] - theta[k]), s = std::sin(theta[i] - theta[k]);
      p[i] += v[i] * v[k] * (g * c + b * s);
      q[i] += v[i] * v[k] * (g * s - b * c);
    }
  }
}

BranchFlows compute_flows(const Network& net, const VectorXd& v, const VectorXd& theta) {
  check_dims(net, v, theta);
  const Index nl = net.num_lines();
  BranchFlows f{VectorXd(nl), VectorXd(nl), VectorXd(nl), VectorXd(nl)};
  for (Index l = 0; l < nl; ++l) {
    const Index i = net.line_from(l), j = net.line_to(l);
    const Line& line = net.lines()[static_cast<size_t>(l)];
    const EndFlow ij = end_flow(line, v[i], v[j], theta[i], theta[j]);
    const EndFlow ji = end_flow(line, v[j], v[i], theta[j], theta[i]);
    f.fp_from[l] = ij.p;
    f.fq_from[l] = ij.q;
    f.fp_to[l] = ji.p;
    f.fq_to[l] = ji.q;
  }
  return f;
}

SystemState evaluate_state(const Network& net, const VectorXd& v, const VectorXd& theta) {
  check_dims(net, v, theta);
  SystemState s;
  s.v = v;
  s.theta = theta;
  compute_injections(build_admittance(net), v, theta, s.p_inj, s.q_inj);
  BranchFlows f = compute_flows(net, v, theta);
  s.fp_from = std::move(f.fp_from);
  s.fq_from = std::move(f.fq_from);
  s.fp_to = std::move(f.fp_to);
  s.fq_to = std::move(f.fq_to);
  return s;
}

VectorXd pf_residual(const Network& net, const SystemState& state) {
  check_dims(net, state.v, state.theta);
  if (state.p_inj.size() != net.num_buses() || state.q_inj.size() != net.num_buses()) {
    throw Error(Errc::DimensionMismatch, "injection vectors do not match bus count");
  }
  VectorXd p, q;
  compute_injections(build_admittance(net), state.v, state.theta, p, q);
  std::vector<double> out;
  for (Index i = 0; i < net.num_buses(); ++i) {
    if (net.buses()[i].kind != BusKind::Ref) out.push_back(p[i] - state.p_inj[i]);
  }
  for (Index i = 0; i < net.num_buses(); ++i) {
    if (net.buses()[i].kind == BusKind::PQ) out.push_back(q[i] - state.q_inj[i]);
  }
  return Eigen::Map<VectorXd>(out.data(), static_cast<Index>(out.size()));
}

PfJacobian pf_jacobian(const Network& net, const SystemState& state) {
  check_dims(net, state.v, state.theta);
  const VectorXd& v = state.v;
  const VectorXd& th = state.theta;
  VectorXd p, q;
  const ComplexSparse y = build_admittance(net);
  compute_injections(y, v, th, p, q);
  InjectionJacobian inj = injection_jacobian(y, v, th, p, q);

  const Index n = net.num_buses(), nl = net.num_lines();
  auto zero_flow = [&] { return FlowJacobian{MatrixXd::Zero(nl, n), MatrixXd::Zero(nl, n)}; };
  PfJacobian j{std::move(inj.p_v), std::move(inj.p_theta), std::move(inj.q_v),
               std::move(inj.q_theta), zero_flow(), zero_flow(), zero_flow(), zero_flow()};

  auto fill = [](FlowJacobian& fp, FlowJacobian& fq, Index l, Index i, Index k, const EndFlow& e) {
    fp.dv(l, i) = e.p_vi;
    fp.dv(l, k) = e.p_vj;
    fp.dtheta(l, i) = e.p_ti;
    fp.dtheta(l, k) = -e.p_ti;
    fq.dv(l, i) = e.q_vi;
    fq.dv(l, k) = e.q_vj;
    fq.dtheta(l, i) = e.q_ti;
    fq.dtheta(l, k) = -e.q_ti;
  };
  for (Index l = 0; l < nl; ++l) {
    const Index a = net.line_from(l), b = net.line_to(l);
    const Line& line = net.lines()[static_cast<size_t>(l)];
    fill(j.fp_from, j.fq_from, l, a, b, end_flow(line, v[a], v[b], th[a], th[b]));
    fill(j.fp_to, j.fq_to, l, b, a, end_flow(line, v[b], v[a], th[b], th[a]));
  }
  return j;
}

Dispatch case_dispatch(const Network& net) {
  Dispatch d;
  const Index ng = net.num_generators();
  d.p_gen.resize(ng);
  d.q_gen = VectorXd::Zero(ng);
  for (Index g = 0; g < ng; ++g) {
    const Generator& gen = net.generators()[static_cast<size_t>(g)];
    d.p_gen[g] = gen.p_set;
    d.q_gen[g] = std::clamp(0.0, gen.q_min, gen.q_max);
  }
  d.v_set.resize(net.num_buses());
  for (Index i = 0; i < net.num_buses(); ++i) d.v_set[i] = net.buses()[i].v_set;
  return d;
}

OperatingPoint newton_pf(const Network& net, const Dispatch& dispatch,
                         const NewtonOptions& options) {
  const Index n = net.num_buses(), ng = net.num_generators();
  if (dispatch.p_gen.size() != ng || dispatch.q_gen.size() != ng || dispatch.v_set.size() != n) {
    throw Error(Errc::DimensionMismatch, "dispatch does not match network dimensions");
  }
  const bool has_extra_p = dispatch.extra_p.size() > 0;
  const bool has_extra_q = dispatch.extra_q.size() > 0;
  if ((has_extra_p && dispatch.extra_p.size() != n) || (has_extra_q && dispatch.extra_q.size() != n)) {
    throw Error(Errc::DimensionMismatch, "injection offsets do not match bus count");
  }

  // specified injections
  VectorXd p_spec = net.p_wind_at_buses() - net.p_demand();
  VectorXd q_spec = net.q_wind_at_buses() - net.q_demand();
  for (Index g = 0; g < ng; ++g) {
    p_spec[net.generator_bus(g)] += dispatch.p_gen[g];
    q_spec[net.generator_bus(g)] += dispatch.q_gen[g];
  }
  if (has_extra_p) p_spec += dispatch.extra_p;
  if (has_extra_q) q_spec += dispatch.extra_q;

  std::vector<Index> pq, non_ref;
  for (Index i = 0; i < n; ++i) {
    const BusKind k = net.buses()[i].kind;
    if (k != BusKind::Ref) non_ref.push_back(i);
    if (k == BusKind::PQ) pq.push_back(i);
  }
  const Index nt = static_cast<Index>(non_ref.size());
  const Index m = nt + static_cast<Index>(pq.size());

  VectorXd v = VectorXd::Ones(n), theta = VectorXd::Zero(n);
  if (options.warm_start != nullptr) {
    check_dims(net, options.warm_start->v, options.warm_start->theta);
    v = options.warm_start->v;
    theta = options.warm_start->theta;
  }
  for (Index i = 0; i < n; ++i) {
    if (net.buses()[i].kind != BusKind::PQ) v[i] = dispatch.v_set[i];
  }
  theta[net.ref_bus()] = 0.0;

  const ComplexSparse y = build_admittance(net);
  VectorXd p, q, f(m);
  auto mismatch = [&](const VectorXd& vv, const VectorXd& tt) {
    compute_injections(y, vv, tt, p, q);
    Index r = 0;
    for (Index i : non_ref) f[r++] = p[i] - p_spec[i];
    for (Index i : pq) f[r++] = q[i] - q_spec[i];
    return f.size() ? f.lpNorm<Eigen::Infinity>() : 0.0;
  };

  OperatingPoint op;
  double norm = mismatch(v, theta);
  op.residual_history.push_back(norm);
  int iter = 0;
  MatrixXd jac(m, m);
  while (norm > options.tolerance) {
    if (iter >= options.max_iterations) {
      throw Error(Errc::NonConvergence, "newton_pf: " + std::to_string(iter) +
                                            " iterations, residual " + std::to_string(norm));
    }
    ++iter;
    const InjectionJacobian ij = injection_jacobian(y, v, theta, p, q);
    for (Index r = 0; r < nt; ++r) {
      for (Index c = 0; c < nt; ++c) jac(r, c) = ij.p_theta(non_ref[r], non_ref[c]);
      for (Index c = 0; c < static_cast<Index>(pq.size()); ++c) jac(r, nt + c) = ij.p_v(non_ref[r], pq[c]);
    }
    for (Index r = 0; r < static_cast<Index>(pq.size()); ++r) {
      for (Index c = 0; c < nt; ++c) jac(nt + r, c) = ij.q_theta(pq[r], non_ref[c]);
      for (Index c = 0; c < static_cast<Index>(pq.size()); ++c) jac(nt + r, nt + c) = ij.q_v(pq[r], pq[c]);
    }
    Eigen::PartialPivLU<MatrixXd> lu(jac);
    const VectorXd dx = -lu.solve(f);
    if (!dx.allFinite()) {
      throw Error(Errc::NonConvergence, "newton_pf: singular Jacobian at iteration " + std::to_string(iter));
    }

    double step = 1.0;
    VectorXd v_try, t_try;
    double trial = 0.0;
    for (int h = 0; h <= options.max_halvings; ++h) {
      v_try = v;
      t_try = theta;
      for (Index r = 0; r < nt; ++r) t_try[non_ref[r]] += step * dx[r];
      for (Index r = 0; r < static_cast<Index>(pq.size()); ++r) v_try[pq[r]] += step * dx[nt + r];
      trial = mismatch(v_try, t_try);
      if (trial < norm) break;
      step *= 0.5;
    }
    v = v_try;
    theta = t_try;
    norm = mismatch(v, theta);
    op.residual_history.push_back(norm);
    for (Index i = 0; i < n; ++i) {
      if (!(v[i] > 0.5 && v[i] < 1.5)) {
        throw Error(Errc::VoltageCollapse, "voltage at bus " + std::to_string(net.buses()[i].id) +
                                               " reached " + std::to_string(v[i]));
      }
    }
  }

  op.state = evaluate_state(net, v, theta);
  op.residual_norm = norm;
  op.iterations = iter;
  op.p_gen = dispatch.p_gen;
  op.q_gen = dispatch.q_gen;
  // The REF unit takes the active slack; PV and REF units their reactive balance.
  for (Index g = 0; g < ng; ++g) {
    const Index i = net.generator_bus(g);
    const BusKind k = net.buses()[i].kind;
    if (k == BusKind::Ref) {
      op.p_gen[g] = op.state.p_inj[i] - (p_spec[i] - dispatch.p_gen[g]);
    }
    if (k != BusKind::PQ) {
      op.q_gen[g] = op.state.q_inj[i] - (q_spec[i] - dispatch.q_gen[g]);
    }
  }
  op.alpha = VectorXd::Zero(ng);
  return op;
}

VectorXd economic_dispatch(const Network& net) {
  const Index ng = net.num_generators();
  const double need = net.p_demand().sum() - net.p_wind_at_buses().sum();
  auto output = [&](double lambda, VectorXd& p) {
    for (Index g = 0; g < ng; ++g) {
      const Generator& gen = net.generators()[static_cast<size_t>(g)];
      p[g] = std::clamp(gen.b() * lambda - gen.a(), gen.p_min, gen.p_max);
    }
    return p.sum();
  };
  VectorXd p(ng);
  double lo = -1.0, hi = 1.0;
  while (output(lo, p) > need && lo > -1e12) lo *= 2.0;
  while (output(hi, p) < need && hi < 1e12) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (output(mid, p) < need) lo = mid; else hi = mid;
  }
  output(0.5 * (lo + hi), p);
  return p;
}

void infer_generation(const Network& net, const SystemState& state, VectorXd& p_gen,
                      VectorXd& q_gen) {
  const Index ng = net.num_generators();
  const VectorXd pw = net.p_wind_at_buses(), qw = net.q_wind_at_buses();
  p_gen.resize(ng);
  q_gen.resize(ng);
  for (Index g = 0; g < ng; ++g) {
    const Index i = net.generator_bus(g);
    p_gen[g] = state.p_inj[i] + net.buses()[i].p_d - pw[i];
    q_gen[g] = state.q_inj[i] + net.buses()[i].q_d - qw[i];
  }
}

std::string operating_point_to_json(const Network& net, const OperatingPoint& op) {
  auto vec = [](const VectorXd& x) { return std::vector<double>(x.data(), x.data() + x.size()); };
  nlohmann::json j;
  j["schema"] = "ccopf.operating_point/1";
  std::vector<int> ids;
  for (const Bus& b : net.buses()) ids.push_back(b.id);
  j["bus_ids"] = ids;
  j["v"] = vec(op.state.v);
  j["theta"] = vec(op.state.theta);
  j["p"] = vec(op.state.p_inj);
  j["q"] = vec(op.state.q_inj);
  return j.dump(2);
}

OperatingPoint operating_point_from_json(const Network& net, std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SchemaViolation, std::string("operating point: ") + e.what());
  }
  auto read = [&](const char* key, bool required) {
    if (!j.contains(key)) {
      if (required) throw Error(Errc::SchemaViolation, std::string("operating point: missing /") + key);
      return VectorXd();
    }
    const auto& arr = j.at(key);
    if (!arr.is_array()) throw Error(Errc::SchemaViolation, std::string("operating point: /") + key + " not an array");
    VectorXd x(static_cast<Index>(arr.size()));
    for (size_t k = 0; k < arr.size(); ++k) {
      if (!arr[k].is_number()) {
        throw Error(Errc::SchemaViolation, std::string("operating point: /") + key + "/" + std::to_string(k));
      }
      x[static_cast<Index>(k)] = arr[k].get<double>();
    }
    if (x.size() != net.num_buses()) {
      throw Error(Errc::DimensionMismatch, std::string("operating point: /") + key + " has " +
                                               std::to_string(x.size()) + " entries");
    }
    return x;
  };
  const VectorXd v = read("v", true), theta = read("theta", true);
  const VectorXd p = read("p", false), q = read("q", false);

  OperatingPoint op;
  op.state = evaluate_state(net, v, theta);
  if (p.size() && q.size()) {
    SystemState given = op.state;
    given.p_inj = p;
    given.q_inj = q;
    const VectorXd r = pf_residual(net, given);
    op.residual_norm = r.size() ? r.lpNorm<Eigen::Infinity>() : 0.0;
    if (op.residual_norm > 1e-6) {
      throw Error(Errc::NonConvergence, "supplied operating point violates the power flow equations (residual " +
                                            std::to_string(op.residual_norm) + ")");
    }
  }
  infer_generation(net, op.state, op.p_gen, op.q_gen);
  op.alpha = VectorXd::Zero(net.num_generators());
  return op;
}

}  // namespace ccopf
