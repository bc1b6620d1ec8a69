#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ccopf/model.hpp"

namespace ccopf {

/// n draws of B xi (one per row) with xi standard normal. Draws are produced
/// in fixed blocks with their own seed sequence, so the result depends only on
/// (seed, n) and not on the number of threads.
Eigen::MatrixXd sample_omega(const Uncertainty& unc, Index n, std::uint64_t seed, int threads = 0);

struct RealizedState {
  Eigen::VectorXd p_gen, q_gen;  // per generator
  Eigen::VectorXd v;             // per bus
  Eigen::VectorXd fp, fq;        // per line, from end
};

/// Affine policy response to a forecast error omega (per wind unit):
/// p_G - alpha Omega, and (W - rho e') omega for q_G, v and the flows.
RealizedState apply_response(const ModelInstance& inst, const Schedule& s, const Eigen::VectorXd& omega);

enum class ValidationMode { Linearized, FullAC };

std::string_view to_string(ValidationMode m);
ValidationMode parse_validation_mode(std::string_view text);

struct ValidationOptions {
  Index samples = 10000;
  std::uint64_t seed = 1;
  ValidationMode mode = ValidationMode::Linearized;
  /// 0 picks CCOPF_THREADS or the hardware concurrency.
  int threads = 0;
  /// Per-draw rows kept for the CSV trace (at most 10000).
  Index trace_rows = 0;
  double violation_tol = 1e-7;
};

/// One one-sided (or apparent-power) limit.
struct ConstraintRate {
  std::string name;  // e.g. "p_max[3]", "v_min[7]", "s_max[2-5]"
  double eps = 0.0;  // allowed violation probability
  double rate = 0.0;
  double half_width = 0.0;  // 99% normal-approximation interval
  /// Whether the model kind promises this limit (GEN-CC only covers p_G).
  bool enforced = false;
  /// enforced and rate > eps + 3 sqrt(eps (1 - eps) / n)
  bool exceeded = false;
};

struct ValidationReport {
  ValidationMode mode = ValidationMode::Linearized;
  std::string model;
  Index samples = 0;
  std::uint64_t seed = 0;
  std::vector<ConstraintRate> rates;
  /// Sample standard deviations per monitored quantity (per-unit).
  Eigen::VectorXd sigma_p, sigma_q, sigma_v, sigma_fp, sigma_fq;
  /// Mean and standard error of sum_i c_i(p_G,i(omega)).
  double expected_cost = 0.0, expected_cost_se = 0.0;
  Index pf_failures = 0;
  bool any_exceeded = false;
  /// CSV rows: draw, Omega, p_G..., q_G..., v..., |s|... .
  std::string trace_header;
  std::vector<std::vector<double>> trace;

  const ConstraintRate& rate(const std::string& name) const;
};

ValidationReport validate(const ModelInstance& inst, const Eigen::VectorXd& x, const ValidationOptions& options);

inline constexpr std::string_view kValidationSchema = "ccopf.validation_report/1";

std::string validation_report_to_json(const ValidationReport& r);
std::string validation_trace_csv(const ValidationReport& r);

/// Worker count: CCOPF_THREADS if set and positive, otherwise the hardware
/// concurrency (at least one).
int default_threads();

}  // namespace ccopf
