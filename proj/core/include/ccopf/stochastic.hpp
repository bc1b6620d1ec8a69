#pragma once

#include <Eigen/Core>

#include "ccopf/network.hpp"

namespace ccopf {

/// Gaussian forecast error of the wind units, zero mean, covariance sigma in
/// per-unit squared. Rows/columns follow Network::wind().
class Uncertainty {
 public:
  /// Validates symmetry and positive semidefiniteness. The factor is the lower
  /// Cholesky factor, or an eigen-decomposition with eigenvalues below 1e-12
  /// clamped to zero when Cholesky fails.
  static Uncertainty create(const Eigen::MatrixXd& sigma);
  /// Independent errors with standard deviation rel_std * p_u per unit.
  static Uncertainty relative(const Network& net, double rel_std);
  static Uncertainty none(Index num_wind);

  const Eigen::MatrixXd& sigma() const { return sigma_; }
  const Eigen::MatrixXd& root() const { return root_; }
  Index size() const { return sigma_.rows(); }
  /// S = sqrt(e' Sigma e), the standard deviation of the total error.
  double s_total() const { return s_total_; }
  /// Sigma e.
  const Eigen::VectorXd& sigma_e() const { return sigma_e_; }

  Uncertainty scaled(double factor) const;

 private:
  Eigen::MatrixXd sigma_, root_;
  Eigen::VectorXd sigma_e_;
  double s_total_ = 0.0;
};

/// Phi^{-1}(1 - eps) for the standard normal. Throws OutOfRange unless
/// 0 < eps < 1.
double z_quantile(double eps);

struct RiskParams {
  double eps_p = 0.05, eps_q = 0.05, eps_v = 0.05, eps_f = 0.05;
  double z_p = 0.0, z_q = 0.0, z_v = 0.0;
  double z_f25 = 0.0;  // z(eps_f / 2.5)
  double z_f5 = 0.0;   // z(eps_f / 5)

  /// Throws OutOfRange unless every eps is in (0, 0.5).
  static RiskParams create(double eps_p, double eps_q, double eps_v, double eps_f);
  static RiskParams uniform(double eps) { return create(eps, eps, eps, eps); }
};

/// c(p) + alpha^2 S^2 / (2b): expected cost of a unit following p - alpha*Omega.
double expected_cost(const Generator& gen, double p, double alpha, double s_total);

/// Variance penalty weights in $ per per-unit squared standard deviation.
struct VariancePenalties {
  Eigen::VectorXd psi_p, psi_q;  // per generator
  Eigen::VectorXd psi_v;         // per bus
  Eigen::VectorXd psi_fp, psi_fq;  // per line

  static VariancePenalties zero(const Network& net) { return uniform(net, 0.0); }
  static VariancePenalties uniform(const Network& net, double psi);
  bool all_zero() const;
};

}  // namespace ccopf
