#pragma once

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ccopf/conic.hpp"
#include "ccopf/model.hpp"

namespace ccopf {

/// Named multipliers of a solved instance in per-unit, with signs chosen so
/// that every inequality rent is non-negative and the balance duals read as
/// prices (lambda = -y for the balance rows).
///
/// Constraints that do not exist in the model kind are zero and listed in
/// `absent` ("chi", "alpha", "sigma").
struct DualSolution {
  ModelKind kind = ModelKind::Det;
  Eigen::VectorXd lambda_p, lambda_q;  // per bus
  Eigen::VectorXd beta_p, beta_q;      // per line
  double chi = 0.0;
  Eigen::VectorXd delta_p_plus, delta_p_minus, delta_q_plus, delta_q_minus;  // per generator
  Eigen::VectorXd kappa_plus, kappa_minus;  // alpha <= 1 and alpha >= 0
  Eigen::VectorXd mu_plus, mu_minus;        // per bus
  Eigen::VectorXd zeta_q, nu_q;             // per generator
  Eigen::VectorXd zeta_v, nu_v;             // per bus
  Eigen::VectorXd eta;                      // per line, for (f_p)^2 + (f_q)^2 <= s_max^2
  Eigen::VectorXd xi_fp_plus, xi_fp_minus, xi_fp0, xi_fq_plus, xi_fq_minus, xi_fq0;
  Eigen::VectorXd zeta_fp, nu_fp, zeta_fq, nu_fq;
  std::set<std::string> absent;

  bool has(const std::string& what) const { return absent.count(what) == 0; }
};

/// Throws NotOptimal unless the result is optimal.
DualSolution extract_duals(const ModelInstance& inst, const SolveResult& result);

struct LambdaResiduals {
  /// Per bus; zero at buses without a generator, where no identity applies.
  Eigen::VectorXd p, q;
  double max_p = 0.0, max_q = 0.0;
};

/// lambda_p = (p_G + a)/b + delta_p+ - delta_p-, lambda_q = delta_q+ - delta_q-
/// at every generator bus.
LambdaResiduals decompose_lambda(const DualSolution& duals, const Network& net, const Schedule& primal);

/// Reserve price implied by the generator rents alone:
/// (S^2 + z_p S sum w (delta+ + delta-) + sum w (kappa+ - kappa-)) / sum w,
/// with w = b for GEN-CC.
double chi_gen_cc(const DualSolution& duals, const Network& net, const Uncertainty& unc,
                  const RiskParams& risk);
/// Same with explicit weights w (used when alpha carries an extra penalty).
double chi_from_rents(const DualSolution& duals, const Eigen::VectorXd& w, double s_total, double z_p,
                      const Eigen::VectorXd& y_total);

/// Per-generator y terms of one monitored family, built from the reconstructed
/// SOC multipliers: y_g = sum_k zeta_k [R C_G]_kg (a_k' Sigma e - rho_k S^2) / sigma_k.
struct YTerms {
  Eigen::VectorXd q, v, fp, fq;  // per generator
  Eigen::VectorXd total() const { return q + v + fp + fq; }
};

struct ChiReconstruction {
  double chi = 0.0;
  YTerms y;
  /// zeta per family rebuilt from the rents (and the variance penalty).
  Eigen::VectorXd zeta_q, zeta_v, zeta_fp, zeta_fq;
  std::vector<std::string> flags;
};

/// zeta from rents: z_q (delta_q+ + delta_q-), z_v (mu+ + mu-),
/// z(eps_f/2.5)(xi+ + xi-) + z(eps_f/5) xi0.
ChiReconstruction chi_eqv_cc(const ModelInstance& inst, const DualSolution& duals, const Eigen::VectorXd& x);
/// As chi_eqv_cc with zeta += 2 Psi t and generator weights b / (1 + 2 Psi_p b).
/// Throws NegativeZeta if a reconstruction falls below -1e-6.
ChiReconstruction chi_va_cc(const ModelInstance& inst, const DualSolution& duals, const Eigen::VectorXd& x);

struct PriceReport {
  std::string model;
  double base_mva = 100.0;
  std::vector<int> bus_ids;
  Eigen::VectorXd lmp_p, lmp_q;  // $/MWh, $/MVArh
  bool has_chi = false;
  double chi = 0.0;           // $ (dual of sum alpha = 1)
  double chi_formula = 0.0;   // reconstruction from rents
  Eigen::VectorXd chi_tilde;  // $ per bus, chi + y terms at generator buses
  Eigen::VectorXd y_q, y_v, y_fp, y_fq;  // $ per bus
  bool has_sigma = false;
  Eigen::VectorXd sigma_q, sigma_v, sigma_fp, sigma_fq;  // per-unit standard deviations
  Eigen::VectorXd eta;  // $ per pu^2 per line
  std::map<std::string, double> decomposition_residuals;
  std::vector<std::string> flags;
};

bool same_report(const PriceReport& a, const PriceReport& b);

PriceReport price_report(const ModelInstance& inst, const SolveResult& result);

inline constexpr std::string_view kPriceReportSchema = "ccopf.price_report/1";

std::string price_report_to_json(const PriceReport& r);
PriceReport price_report_from_json(std::string_view text);
/// bus,lmp_p,lmp_q,chi_tilde,y_q,y_v,y_fp,y_fq
std::string price_report_csv(const PriceReport& r);
std::string dual_solution_to_json(const ModelInstance& inst, const DualSolution& d);

}  // namespace ccopf
