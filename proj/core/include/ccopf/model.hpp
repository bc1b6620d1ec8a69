#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ccopf/conic.hpp"
#include "ccopf/network.hpp"
#include "ccopf/powerflow.hpp"
#include "ccopf/sensitivities.hpp"
#include "ccopf/stochastic.hpp"

namespace ccopf {

enum class ModelKind { Det, GenCC, EqvCC, VaCC };

std::string_view to_string(ModelKind k);
/// Accepts "det", "gen-cc", "eqv-cc", "va-cc". Throws OutOfRange otherwise.
ModelKind parse_model_kind(std::string_view text);

/// Location of a named constraint: equality rows index the y duals, cone rows
/// the z duals (and slacks). `dim` is 1 except for second-order blocks.
struct RowRef {
  enum class Set { Eq, Cone };
  Set set = Set::Eq;
  Index index = 0;
  Index dim = 1;
};

/// Names of variables and constraints, e.g. "p_G[3]", "f_p[1-2]",
/// "lambda_p[3]", "delta_p+[3]", "zeta_v[7]", "xi_fq0[4-5]".
class Registry {
 public:
  Index add_var(const std::string& name);
  void add_row(const std::string& name, RowRef ref);

  /// Throws MissingConstraint when the name is unknown.
  Index var(const std::string& name) const;
  const RowRef& row(const std::string& name) const;
  bool has_var(const std::string& name) const { return vars_.count(name) != 0; }
  bool has_row(const std::string& name) const { return rows_.count(name) != 0; }

  const std::vector<std::string>& var_names() const { return var_names_; }
  const std::map<std::string, RowRef>& rows() const { return rows_; }

 private:
  std::map<std::string, Index> vars_;
  std::vector<std::string> var_names_;
  std::map<std::string, RowRef> rows_;
};

/// Labels used inside registry names.
std::string gen_label(const Network& net, Index g);
std::string bus_label(const Network& net, Index i);
std::string line_label(const Network& net, Index l);

struct ModelInstance {
  ModelKind kind = ModelKind::Det;
  ConicProgram program;
  Registry registry;

  std::shared_ptr<const Network> network;
  OperatingPoint point;
  Uncertainty uncertainty = Uncertainty::none(0);
  RiskParams risk;
  VariancePenalties psi;
  /// Wind/generator response rows per monitored family (q_G, v, f_p, f_q).
  WindResponse resp_q, resp_v, resp_fp, resp_fq;

  bool has_alpha() const { return kind != ModelKind::Det; }
  bool has_sigma_rows() const { return kind == ModelKind::EqvCC || kind == ModelKind::VaCC; }
};

ModelInstance build_det(const Network& net, const OperatingPoint& point, const SensitivityFactors& sf);
ModelInstance build_gen_cc(const Network& net, const OperatingPoint& point, const SensitivityFactors& sf,
                           const Uncertainty& unc, const RiskParams& risk);
ModelInstance build_eqv_cc(const Network& net, const OperatingPoint& point, const SensitivityFactors& sf,
                           const Uncertainty& unc, const RiskParams& risk);
ModelInstance build_va_cc(const Network& net, const OperatingPoint& point, const SensitivityFactors& sf,
                          const Uncertainty& unc, const RiskParams& risk, const VariancePenalties& psi);

ModelInstance build_model(ModelKind kind, const Network& net, const OperatingPoint& point,
                          const SensitivityFactors& sf, const Uncertainty& unc, const RiskParams& risk,
                          const VariancePenalties& psi);

struct LinearizationOptions {
  /// Alternate deterministic dispatch and power flow until the dispatch
  /// stops moving.
  bool iterate = true;
  int max_rounds = 10;
  double tolerance = 1e-6;
  NewtonOptions newton;
  SolverOptions solver;
};

struct LinearizationInfo {
  int rounds = 0;
  double last_change = 0.0;
  bool converged = false;
};

/// Builds a linearization point without an external OPF: copper-plate
/// economic dispatch, Newton power flow, then optional Det/PF rounds.
OperatingPoint linearization_point(const Network& net, const LinearizationOptions& options = {},
                                   LinearizationInfo* info = nullptr);

/// Primal schedule read back from a solution vector.
struct Schedule {
  Eigen::VectorXd p_gen, q_gen, alpha;  // per generator (alpha zero for Det)
  Eigen::VectorXd v, theta;             // per bus
  Eigen::VectorXd fp, fq;               // per line, from-end orientation
};

Schedule read_schedule(const ModelInstance& inst, const Eigen::VectorXd& x);

/// Standard deviations ||B'(a_k - rho_k e)|| of every monitored quantity
/// under participation factors alpha (per-unit).
struct Sigmas {
  Eigen::VectorXd q, v, fp, fq;
};

Sigmas realized_sigmas(const ModelInstance& inst, const Eigen::VectorXd& alpha);

/// Objective parts: generation cost at the schedule, expected cost (adds the
/// alpha^2 S^2 / (2b) balancing term), and the variance penalty.
struct ObjectiveParts {
  double generation_cost = 0.0;
  double expected_cost = 0.0;
  double penalty = 0.0;
  /// Sum of squared realized standard deviations plus sum alpha^2 S^2, i.e.
  /// the penalty with unit weights evaluated at the SOC norms rather than at t
  /// (t is not unique when its weight is zero).
  double v_metric = 0.0;
};

ObjectiveParts objective_parts(const ModelInstance& inst, const Eigen::VectorXd& x);

}  // namespace ccopf
