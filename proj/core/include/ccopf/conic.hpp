#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace ccopf {

using SparseMatrix = Eigen::SparseMatrix<double>;

struct Cone {
  enum class Kind { NonNegative, SecondOrder };
  Kind kind = Kind::NonNegative;
  Eigen::Index dim = 0;

  static Cone nonnegative(Eigen::Index n) { return {Kind::NonNegative, n}; }
  static Cone second_order(Eigen::Index n) { return {Kind::SecondOrder, n}; }
};

/// min 1/2 x'Qx + c'x + offset  s.t.  Ax = b,  h - Gx in K.
///
/// K is the product of cones in `cones`, laid out over consecutive rows of
/// G. A second-order block (s0, s1) means s0 >= ||s1||. Q is stored as a full
/// symmetric matrix.
struct ConicProgram {
  SparseMatrix Q;
  Eigen::VectorXd c;
  SparseMatrix A;
  Eigen::VectorXd b;
  SparseMatrix G;
  Eigen::VectorXd h;
  std::vector<Cone> cones;
  double offset = 0.0;

  Eigen::Index num_vars() const { return c.size(); }
  Eigen::Index num_eq() const { return b.size(); }
  Eigen::Index num_cone_rows() const { return h.size(); }

  double objective(const Eigen::VectorXd& x) const;
};

/// Throws Error(InvalidProgram) on inconsistent dimensions, an asymmetric or
/// indefinite Q, or non-finite data.
void validate_program(const ConicProgram& prog);

enum class SolveStatus { Optimal, PrimalInfeasible, DualInfeasible, IterLimit, NumericalFailure };

std::string_view to_string(SolveStatus s);

/// Primal-dual solution. Duals follow the Lagrangian
///   1/2 x'Qx + c'x + y'(Ax - b) + z'(Gx - h),  z in K* = K,
/// so z >= 0 on rows written as Gx <= h. For infeasible statuses x or (y, z)
/// hold the normalized certificate.
struct SolveResult {
  SolveStatus status = SolveStatus::NumericalFailure;
  Eigen::VectorXd x, y, z, s;
  double objective = 0.0;
  double dual_objective = 0.0;
  double gap = 0.0;
  double r_primal = 0.0;
  double r_dual = 0.0;
  int iterations = 0;
};

struct SolverOptions {
  double tolerance = 1e-8;
  int max_iter = 200;
  int verbosity = 0;
  double static_regularization = 1e-9;
  int refinement_steps = 4;
  bool equilibrate = true;
  /// When set, one JSON object per iteration is written here.
  std::ostream* log = nullptr;
};

SolveResult solve(const ConicProgram& prog, const SolverOptions& opts = {});

struct KktResiduals {
  double r_primal = 0.0;        // relative equality + cone-membership violation of h - Gx
  double r_dual = 0.0;          // relative stationarity violation
  double gap = 0.0;             // relative primal-dual objective gap
  double complementarity = 0.0; // (h - Gx)'z
  double dual_cone_violation = 0.0;
};

/// Recomputes optimality residuals from (x, y, z) and the program data only.
KktResiduals kkt_residuals(const ConicProgram& prog, const SolveResult& result);

/// Distance-like violation of cone membership (0 when inside).
double cone_violation(const std::vector<Cone>& cones, const Eigen::VectorXd& v);

/// Sparse text export: sections for Q, c, A, b, G, h and the cone list.
std::string export_program(const ConicProgram& prog);

}  // namespace ccopf
