#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ccopf/network.hpp"

namespace ccopf {

/// Polar AC state. Net injections p_inj/q_inj are the specified (or
/// computed) bus injections; flows are stored for both ends of every line,
/// "from" meaning the direction from Line::from to Line::to.
struct SystemState {
  Eigen::VectorXd v;
  Eigen::VectorXd theta;
  Eigen::VectorXd p_inj;
  Eigen::VectorXd q_inj;
  Eigen::VectorXd fp_from, fq_from;
  Eigen::VectorXd fp_to, fq_to;
};

enum class LineEnd { From, To };

struct BranchFlows {
  Eigen::VectorXd fp_from, fq_from, fp_to, fq_to;
};

/// Injections p_i(v, theta), q_i(v, theta) implied by the admittance matrix.
void compute_injections(const ComplexSparse& ybus, const Eigen::VectorXd& v,
                        const Eigen::VectorXd& theta, Eigen::VectorXd& p,
                        Eigen::VectorXd& q);

BranchFlows compute_flows(const Network& net, const Eigen::VectorXd& v,
                          const Eigen::VectorXd& theta);

/// State whose injections and flows are evaluated at (v, theta).
SystemState evaluate_state(const Network& net, const Eigen::VectorXd& v,
                           const Eigen::VectorXd& theta);

/// Power balance mismatch p_calc - p_inj at non-reference buses followed by
/// q_calc - q_inj at PQ buses, both in bus order.
Eigen::VectorXd pf_residual(const Network& net, const SystemState& state);

/// Setpoints for a power flow solve. Generator vectors follow
/// Network::generators(); q_gen is only used for generators at PQ buses and
/// p_gen is ignored at the reference bus. extra_p/extra_q are optional
/// per-bus injection offsets (e.g. a wind forecast error).
struct Dispatch {
  Eigen::VectorXd p_gen;
  Eigen::VectorXd q_gen;
  Eigen::VectorXd v_set;  // per bus, used at PV and REF buses
  Eigen::VectorXd extra_p;
  Eigen::VectorXd extra_q;
};

struct NewtonOptions {
  double tolerance = 1e-10;
  int max_iterations = 30;
  int max_halvings = 6;
  const SystemState* warm_start = nullptr;
};

/// Linearization point: a converged AC state plus the generator outputs that
/// realize it (the REF unit absorbs the slack, PV units their reactive
/// balance). alpha is a placeholder for participation factors.
struct OperatingPoint {
  SystemState state;
  Eigen::VectorXd p_gen;
  Eigen::VectorXd q_gen;
  Eigen::VectorXd alpha;
  double residual_norm = 0.0;
  int iterations = 0;
  std::vector<double> residual_history;
};

/// Newton-Raphson in polar coordinates with step halving.
OperatingPoint newton_pf(const Network& net, const Dispatch& dispatch,
                         const NewtonOptions& options = {});

struct FlowJacobian {
  Eigen::MatrixXd dv;      // lines x buses
  Eigen::MatrixXd dtheta;  // lines x buses
};

/// Raw (unpartitioned) partial derivatives of injections and directed flows
/// with respect to (v, theta) at a state. The reference bus is not excluded.
struct PfJacobian {
  Eigen::MatrixXd p_v, p_theta, q_v, q_theta;
  FlowJacobian fp_from, fq_from, fp_to, fq_to;
};

PfJacobian pf_jacobian(const Network& net, const SystemState& state);

/// Default dispatch built from the case: generator p_set values, zero
/// reactive output at PQ-bus generators and bus voltage setpoints.
Dispatch case_dispatch(const Network& net);

/// Copper-plate economic dispatch ignoring losses and the network.
Eigen::VectorXd economic_dispatch(const Network& net);

/// Recomputes generator outputs implied by a state: p_G = p + p_D - p_U.
void infer_generation(const Network& net, const SystemState& state,
                      Eigen::VectorXd& p_gen, Eigen::VectorXd& q_gen);

/// Operating point JSON {v, theta, p, q} in per-unit and radians.
std::string operating_point_to_json(const Network& net, const OperatingPoint& op);
OperatingPoint operating_point_from_json(const Network& net, std::string_view text);

}  // namespace ccopf
