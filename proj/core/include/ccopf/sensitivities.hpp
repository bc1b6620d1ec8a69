#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "ccopf/network.hpp"
#include "ccopf/powerflow.hpp"

namespace ccopf {

/// Bus ordering by control role. Raw bus indices are listed per role; the
/// partitioned order is pq, then pv, then ref.
struct NodePartition {
  std::vector<Index> pq, pv, ref;
  std::vector<Index> order;     // partitioned position -> raw bus index
  std::vector<Index> position;  // raw bus index -> partitioned position

  static NodePartition from(const Network& net);
};

/// Jacobian blocks after sorting. Rows of A and B: (p_PQ, p_PV, q_PQ); rows of
/// C and D: (p_REF, q_PV, q_REF). Columns of A and C: (v_PQ, theta_PQ,
/// theta_PV); columns of B and D: (v_PV, v_REF, theta_REF).
struct PartitionedJacobian {
  Eigen::MatrixXd a, b, c, d;
};

PartitionedJacobian partition_jacobian(const PfJacobian& jac, const NodePartition& part);

/// Inverse of partition_jacobian: the raw [[p_v, p_theta], [q_v, q_theta]]
/// matrix with rows (p, q) and columns (v, theta) in bus order.
Eigen::MatrixXd reassemble_jacobian(const PartitionedJacobian& blocks, const NodePartition& part);

/// Response of a monitored quantity family to unit injections. Column j of r
/// is the response to +1 p.u. active injection at bus j, column j of x the
/// response to +1 p.u. reactive injection at bus j.
struct ResponseMatrix {
  Eigen::MatrixXd r, x;
};

/// Linear sensitivities at an operating point. Flow rows follow the line
/// direction from Line::from to Line::to.
struct SensitivityFactors {
  PfJacobian jacobian;
  NodePartition partition;
  PartitionedJacobian blocks;
  ResponseMatrix q;   // generators x buses
  ResponseMatrix v;   // buses x buses
  ResponseMatrix fp;  // lines x buses
  ResponseMatrix fq;  // lines x buses
  ResponseMatrix theta;  // buses x buses
  ResponseMatrix p_ref;  // 1 x buses, implicit active injection of the REF bus
  std::shared_ptr<const Eigen::PartialPivLU<Eigen::MatrixXd>> ja_lu;
};

SensitivityFactors response_matrices(const Network& net, const OperatingPoint& op);
SensitivityFactors response_matrices(const Network& net, const PfJacobian& jac);

/// Response of one quantity family to the wind vector omega, split as
/// gamma-weighted wind columns and generator columns:
///   d(quantity) = (wind - (gen * alpha) e^T) omega.
struct WindResponse {
  Eigen::MatrixXd wind;  // rows x wind units: R C_U + X C_U diag(gamma)
  Eigen::MatrixXd gen;   // rows x generators: R C_G
};

WindResponse wind_response(const ResponseMatrix& m, const Network& net);

/// Composed response matrix (R (I - alpha e^T) + X diag(gamma)) restricted to
/// wind-unit columns.
Eigen::MatrixXd compose(const ResponseMatrix& m, const Network& net, const Eigen::VectorXd& alpha);

/// CSV dump (matrix, quantity, one column per bus id).
std::string sensitivities_csv(const Network& net, const SensitivityFactors& sf);

}  // namespace ccopf
