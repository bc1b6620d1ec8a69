#include "ccopf/sensitivities.hpp"

#include <iomanip>
#include <sstream>

#include "ccopf/error.hpp"

namespace ccopf {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Quantity { P, Q, V, T };

struct Slot {
  Quantity kind;
  Index bus;
};

std::vector<Slot> slots(Quantity kind, const std::vector<Index>& buses) {
  std::vector<Slot> out;
  for (Index b : buses) out.push_back({kind, b});
  return out;
}

std::vector<Slot> concat(std::initializer_list<std::vector<Slot>> parts) {
  std::vector<Slot> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

struct Layout {
  std::vector<Slot> rows_ab, rows_cd, cols_ac, cols_bd;
};

Layout layout(const NodePartition& part) {
  using Q = Quantity;
  return {concat({slots(Q::P, part.pq), slots(Q::P, part.pv), slots(Q::Q, part.pq)}),
          concat({slots(Q::P, part.ref), slots(Q::Q, part.pv), slots(Q::Q, part.ref)}),
          concat({slots(Q::V, part.pq), slots(Q::T, part.pq), slots(Q::T, part.pv)}),
          concat({slots(Q::V, part.pv), slots(Q::V, part.ref), slots(Q::T, part.ref)})};
}

double entry(const PfJacobian& j, Slot row, Slot col) {
  const bool p = row.kind == Quantity::P;
  const bool v = col.kind == Quantity::V;
  const MatrixXd& m = p ? (v ? j.p_v : j.p_theta) : (v ? j.q_v : j.q_theta);
  return m(row.bus, col.bus);
}

MatrixXd gather(const PfJacobian& j, const std::vector<Slot>& rows, const std::vector<Slot>& cols) {
  MatrixXd m(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < cols.size(); ++c) {
      m(static_cast<Index>(r), static_cast<Index>(c)) = entry(j, rows[r], cols[c]);
    }
  }
  return m;
}

// Position of a slot in the raw (p, q) x (v, theta) matrix.
Index raw_row(Slot s, Index n) { return s.kind == Quantity::P ? s.bus : n + s.bus; }
Index raw_col(Slot s, Index n) { return s.kind == Quantity::V ? s.bus : n + s.bus; }

void scatter(MatrixXd& out, const MatrixXd& block, const std::vector<Slot>& rows,
             const std::vector<Slot>& cols, Index n) {
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < cols.size(); ++c) {
      out(raw_row(rows[r], n), raw_col(cols[c], n)) =
          block(static_cast<Index>(r), static_cast<Index>(c));
    }
  }
}

}  // namespace

NodePartition NodePartition::from(const Network& net) {
  NodePartition part;
  for (Index i = 0; i < net.num_buses(); ++i) {
    switch (net.buses()[i].kind) {
      case BusKind::PQ: part.pq.push_back(i); break;
      case BusKind::PV: part.pv.push_back(i); break;
      case BusKind::Ref: part.ref.push_back(i); break;
    }
  }
  part.order = part.pq;
  part.order.insert(part.order.end(), part.pv.begin(), part.pv.end());
  part.order.insert(part.order.end(), part.ref.begin(), part.ref.end());
  part.position.assign(part.order.size(), 0);
  for (size_t k = 0; k < part.order.size(); ++k) part.position[part.order[k]] = static_cast<Index>(k);
  return part;
}

PartitionedJacobian partition_jacobian(const PfJacobian& jac, const NodePartition& part) {
  const Index n = static_cast<Index>(part.order.size());
  if (jac.p_v.rows() != n || jac.p_v.cols() != n || jac.q_theta.rows() != n) {
    throw Error(Errc::DimensionMismatch, "Jacobian does not match the node partition");
  }
  const Layout l = layout(part);
  return {gather(jac, l.rows_ab, l.cols_ac), gather(jac, l.rows_ab, l.cols_bd),
          gather(jac, l.rows_cd, l.cols_ac), gather(jac, l.rows_cd, l.cols_bd)};
}

MatrixXd reassemble_jacobian(const PartitionedJacobian& blocks, const NodePartition& part) {
  const Index n = static_cast<Index>(part.order.size());
  const Layout l = layout(part);
  MatrixXd out = MatrixXd::Zero(2 * n, 2 * n);
  scatter(out, blocks.a, l.rows_ab, l.cols_ac, n);
  scatter(out, blocks.b, l.rows_ab, l.cols_bd, n);
  scatter(out, blocks.c, l.rows_cd, l.cols_ac, n);
  scatter(out, blocks.d, l.rows_cd, l.cols_bd, n);
  return out;
}

SensitivityFactors response_matrices(const Network& net, const OperatingPoint& op) {
  return response_matrices(net, pf_jacobian(net, op.state));
}

SensitivityFactors response_matrices(const Network& net, const PfJacobian& jac) {
  SensitivityFactors sf;
  sf.jacobian = jac;
  sf.partition = NodePartition::from(net);
  sf.blocks = partition_jacobian(jac, sf.partition);
  const NodePartition& part = sf.partition;

  const Index n = net.num_buses();
  const Index npq = static_cast<Index>(part.pq.size());
  const Index npv = static_cast<Index>(part.pv.size());
  const Index na = 2 * npq + npv;

  auto lu = std::make_shared<Eigen::PartialPivLU<MatrixXd>>(n > 1 ? sf.blocks.a : MatrixXd::Identity(0, 0));
  if (na > 0) {
    const double rc = lu->rcond();
    if (!(rc > 1e-13)) {
      std::ostringstream msg;
      msg << "J_A is singular (reciprocal condition " << rc << ")";
      throw Error(Errc::SingularJA, msg.str());
    }
  }
  sf.ja_lu = lu;

  // Right-hand sides for unit injections at every bus. REF injections and
  // reactive injections at voltage-controlled buses leave the state unchanged.
  MatrixXd rhs_p = MatrixXd::Zero(na, n), rhs_q = MatrixXd::Zero(na, n);
  for (Index k = 0; k < npq; ++k) {
    rhs_p(k, part.pq[k]) = 1.0;
    rhs_q(npq + npv + k, part.pq[k]) = 1.0;
  }
  for (Index k = 0; k < npv; ++k) rhs_p(npq + k, part.pv[k]) = 1.0;

  const MatrixXd dx_p = na > 0 ? MatrixXd(lu->solve(rhs_p)) : MatrixXd(0, n);
  const MatrixXd dx_q = na > 0 ? MatrixXd(lu->solve(rhs_q)) : MatrixXd(0, n);

  auto expand = [&](const MatrixXd& dx, MatrixXd& dv, MatrixXd& dth) {
    dv = MatrixXd::Zero(n, n);
    dth = MatrixXd::Zero(n, n);
    for (Index k = 0; k < npq; ++k) {
      dv.row(part.pq[k]) = dx.row(k);
      dth.row(part.pq[k]) = dx.row(npq + k);
    }
    for (Index k = 0; k < npv; ++k) dth.row(part.pv[k]) = dx.row(2 * npq + k);
  };
  MatrixXd dv_p, dth_p, dv_q, dth_q;
  expand(dx_p, dv_p, dth_p);
  expand(dx_q, dv_q, dth_q);
  sf.v = {dv_p, dv_q};
  sf.theta = {dth_p, dth_q};

  // Implicit injections: rows (p_REF, q_PV, q_REF).
  const MatrixXd imp_p = na > 0 ? MatrixXd(sf.blocks.c * dx_p) : MatrixXd::Zero(sf.blocks.c.rows(), n);
  const MatrixXd imp_q = na > 0 ? MatrixXd(sf.blocks.c * dx_q) : MatrixXd::Zero(sf.blocks.c.rows(), n);
  const Index nref = static_cast<Index>(part.ref.size());
  sf.p_ref = {imp_p.topRows(nref), imp_q.topRows(nref)};

  const Index ng = net.num_generators();
  sf.q = {MatrixXd::Zero(ng, n), MatrixXd::Zero(ng, n)};
  auto implicit_q_row = [&](Index bus) -> Index {
    for (Index k = 0; k < npv; ++k) {
      if (part.pv[k] == bus) return nref + k;
    }
    for (Index k = 0; k < nref; ++k) {
      if (part.ref[k] == bus) return nref + npv + k;
    }
    return -1;
  };
  for (Index g = 0; g < ng; ++g) {
    const Index bus = net.generator_bus(g);
    const Index row = implicit_q_row(bus);
    if (row < 0) continue;  // PQ unit: reactive output is a decision
    sf.q.r.row(g) = imp_p.row(row);
    sf.q.x.row(g) = imp_q.row(row);
    // q_G = q - q_U + q_D, so a local reactive injection displaces the unit
    sf.q.x(g, bus) -= 1.0;
  }

  sf.fp = {jac.fp_from.dv * dv_p + jac.fp_from.dtheta * dth_p,
           jac.fp_from.dv * dv_q + jac.fp_from.dtheta * dth_q};
  sf.fq = {jac.fq_from.dv * dv_p + jac.fq_from.dtheta * dth_p,
           jac.fq_from.dv * dv_q + jac.fq_from.dtheta * dth_q};
  return sf;
}

WindResponse wind_response(const ResponseMatrix& m, const Network& net) {
  const Index rows = m.r.rows();
  WindResponse w{MatrixXd(rows, net.num_wind()), MatrixXd(rows, net.num_generators())};
  for (Index u = 0; u < net.num_wind(); ++u) {
    const Index bus = net.wind_bus(u);
    w.wind.col(u) = m.r.col(bus) + net.wind()[static_cast<size_t>(u)].gamma() * m.x.col(bus);
  }
  for (Index g = 0; g < net.num_generators(); ++g) w.gen.col(g) = m.r.col(net.generator_bus(g));
  return w;
}

MatrixXd compose(const ResponseMatrix& m, const Network& net, const VectorXd& alpha) {
  if (alpha.size() != net.num_generators()) {
    throw Error(Errc::DimensionMismatch, "alpha has " + std::to_string(alpha.size()) + " entries");
  }
  const WindResponse w = wind_response(m, net);
  const VectorXd rho = w.gen * alpha;
  return w.wind - rho * Eigen::RowVectorXd::Ones(net.num_wind());
}

std::string sensitivities_csv(const Network& net, const SensitivityFactors& sf) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "matrix,quantity";
  for (const Bus& b : net.buses()) out << ",bus" << b.id;
  out << '\n';
  auto dump = [&](const char* name, const MatrixXd& m, auto label) {
    for (Index r = 0; r < m.rows(); ++r) {
      out << name << ',' << label(r);
      for (Index c = 0; c < m.cols(); ++c) out << ',' << m(r, c);
      out << '\n';
    }
  };
  auto gen_label = [&](Index g) { return "gen@" + std::to_string(net.generators()[static_cast<size_t>(g)].bus); };
  auto bus_label = [&](Index i) { return "bus" + std::to_string(net.buses()[static_cast<size_t>(i)].id); };
  auto line_label = [&](Index l) {
    const Line& line = net.lines()[static_cast<size_t>(l)];
    return std::to_string(line.from) + "->" + std::to_string(line.to);
  };
  dump("R_q", sf.q.r, gen_label);
  dump("X_q", sf.q.x, gen_label);
  dump("R_v", sf.v.r, bus_label);
  dump("X_v", sf.v.x, bus_label);
  dump("R_fp", sf.fp.r, line_label);
  dump("X_fp", sf.fp.x, line_label);
  dump("R_fq", sf.fq.r, line_label);
  dump("X_fq", sf.fq.x, line_label);
  return out.str();
}

}  // namespace ccopf
