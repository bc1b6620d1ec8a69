#include "ccopf/stochastic.hpp"

#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <boost/math/distributions/normal.hpp>

#include "ccopf/error.hpp"

namespace ccopf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Uncertainty Uncertainty::create(const MatrixXd& sigma) {
  if (sigma.rows() != sigma.cols()) {
    throw Error(Errc::InconsistentDimension, "covariance must be square");
  }
  if (!sigma.allFinite()) throw Error(Errc::InconsistentDimension, "covariance has non-finite entries");
  Uncertainty u;
  if (sigma.size() == 0) {
    u.sigma_ = u.root_ = MatrixXd(0, 0);
    u.sigma_e_ = VectorXd(0);
    return u;
  }
  const double scale = std::max(1e-300, sigma.cwiseAbs().maxCoeff());
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw Error(Errc::InconsistentDimension, "covariance is not symmetric");
  }
  u.sigma_ = 0.5 * (sigma + sigma.transpose());
  const Index n = sigma.rows();
  Eigen::LLT<MatrixXd> llt(u.sigma_);
  if (llt.info() == Eigen::Success) {
    u.root_ = llt.matrixL();
  } else {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(u.sigma_);
    VectorXd ev = es.eigenvalues();
    if (ev.minCoeff() < -1e-9 * scale) {
      throw Error(Errc::InconsistentDimension, "covariance is not positive semidefinite");
    }
    for (Index i = 0; i < n; ++i) ev[i] = ev[i] < 1e-12 ? 0.0 : std::sqrt(ev[i]);
    u.root_ = es.eigenvectors() * ev.asDiagonal();
  }
  u.sigma_e_ = u.sigma_.rowwise().sum();
  u.s_total_ = std::sqrt(std::max(0.0, u.sigma_e_.sum()));
  return u;
}

Uncertainty Uncertainty::relative(const Network& net, double rel_std) {
  VectorXd sd(net.num_wind());
  for (Index w = 0; w < net.num_wind(); ++w) sd[w] = rel_std * net.wind()[static_cast<size_t>(w)].p_u;
  return create(MatrixXd(sd.cwiseAbs2().asDiagonal()));
}

Uncertainty Uncertainty::none(Index num_wind) { return create(MatrixXd::Zero(num_wind, num_wind)); }

Uncertainty Uncertainty::scaled(double factor) const { return create(factor * sigma_); }

double z_quantile(double eps) {
  if (!(eps > 0.0 && eps < 1.0)) {
    throw Error(Errc::OutOfRange, "probability " + std::to_string(eps) + " not in (0, 1)");
  }
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(boost::math::complement(standard, eps));
}

RiskParams RiskParams::create(double eps_p, double eps_q, double eps_v, double eps_f) {
  for (double e : {eps_p, eps_q, eps_v, eps_f}) {
    if (!(e > 0.0 && e < 0.5)) {
      throw Error(Errc::OutOfRange, "risk level " + std::to_string(e) + " not in (0, 0.5)");
    }
  }
  RiskParams r;
  r.eps_p = eps_p;
  r.eps_q = eps_q;
  r.eps_v = eps_v;
  r.eps_f = eps_f;
  r.z_p = z_quantile(eps_p);
  r.z_q = z_quantile(eps_q);
  r.z_v = z_quantile(eps_v);
  r.z_f25 = z_quantile(eps_f / 2.5);
  r.z_f5 = z_quantile(eps_f / 5.0);
  return r;
}

double expected_cost(const Generator& gen, double p, double alpha, double s_total) {
  return gen.cost(p) + alpha * alpha * s_total * s_total / (2.0 * gen.b());
}

VariancePenalties VariancePenalties::uniform(const Network& net, double psi) {
  if (!(psi >= 0.0)) throw Error(Errc::OutOfRange, "variance penalty must be non-negative");
  VariancePenalties v;
  v.psi_p = VectorXd::Constant(net.num_generators(), psi);
  v.psi_q = VectorXd::Constant(net.num_generators(), psi);
  v.psi_v = VectorXd::Constant(net.num_buses(), psi);
  v.psi_fp = VectorXd::Constant(net.num_lines(), psi);
  v.psi_fq = VectorXd::Constant(net.num_lines(), psi);
  return v;
}

bool VariancePenalties::all_zero() const {
  for (const VectorXd* x : {&psi_p, &psi_q, &psi_v, &psi_fp, &psi_fq}) {
    if (x->size() && x->cwiseAbs().maxCoeff() != 0.0) return false;
  }
  return true;
}

}  // namespace ccopf
