#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ccopf/conic.hpp"
#include "ccopf/model.hpp"
#include "ccopf/pricing.hpp"
#include "ccopf/validation.hpp"

namespace ccopf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitInfeasible = 2;
inline constexpr int kExitExceeded = 3;

inline constexpr std::string_view kSolutionSchema = "ccopf.solution/1";
inline constexpr std::string_view kSweepSchema = "ccopf.sweep/1";
inline constexpr std::string_view kTidySchema = "ccopf.tidy/1";

struct RunConfig {
  std::filesystem::path case_path;
  ModelKind model = ModelKind::Det;
  /// solve uses the first entry; sweep all of them.
  std::vector<double> eps{0.05};
  std::optional<double> eps_p, eps_q, eps_v, eps_f;
  std::vector<double> psi{0.0};
  std::optional<std::filesystem::path> lin_point;
  /// Overrides the case covariance with independent errors of this relative size.
  std::optional<double> rel_std;
  SolverOptions solver;
  std::filesystem::path out = ".";

  // validate
  std::filesystem::path solution;
  Index samples = 10000;
  std::uint64_t seed = 1;
  ValidationMode mode = ValidationMode::Linearized;
  Index trace_rows = 0;

  /// 0 picks CCOPF_THREADS or the hardware concurrency.
  int threads = 0;
};

/// Throws OutOfRange on an eps outside (0, 0.5) or a negative psi.
void check_config(const RunConfig& config);
RiskParams risk_for(const RunConfig& config, double eps);

/// Everything a model build needs, shared by all cells of a sweep.
struct Prepared {
  std::shared_ptr<const Network> network;
  OperatingPoint point;
  SensitivityFactors factors;
  Uncertainty uncertainty = Uncertainty::none(0);
  LinearizationInfo linearization;
  bool external_point = false;
};

Prepared prepare(const RunConfig& config);

struct SolveOutcome {
  ModelInstance instance;
  SolveResult result;
};

SolveOutcome solve_case(const Prepared& prep, ModelKind kind, const RiskParams& risk, double psi,
                        const SolverOptions& solver);

std::string solution_to_json(const RunConfig& config, double eps, double psi, const Prepared& prep,
                             const SolveOutcome& outcome);

/// One row of the comparison table.
struct SweepRow {
  ModelKind model = ModelKind::Det;
  double eps = 0.0;
  double psi = 0.0;
  std::string status;
  std::string error;
  double objective = 0.0;
  double expected_cost = 0.0;
  double expected_cost_delta_pct = 0.0;  // relative to EQV-CC at the same eps
  bool has_chi = false;
  double chi = 0.0;
  bool has_sigma = false;
  double sum_sigma2[4] = {0, 0, 0, 0};  // q, v, fp, fq
  double sigma2_pct[4] = {0, 0, 0, 0};  // percent of EQV-CC at the same eps
  double v_metric = 0.0;
  bool has_reference = false;
  std::optional<PriceReport> prices;

  bool ok() const { return status == "optimal"; }
};

/// Per eps: Det, GEN-CC, EQV-CC and one VA-CC row per psi, ordered by model,
/// then eps (as given), then psi (as given).
std::vector<SweepRow> run_sweep(const RunConfig& config, const Prepared& prep);
std::string sweep_csv(const std::vector<SweepRow>& rows);
/// bus,quantity,model,eps,psi,value for lmp_p, lmp_q, chi_tilde and sigma_v.
std::string sweep_tidy_csv(const std::vector<SweepRow>& rows);

int cmd_solve(const RunConfig& config, std::ostream& log);
int cmd_sweep(const RunConfig& config, std::ostream& log);
int cmd_validate(const RunConfig& config, std::ostream& log);

/// Parses the command line and dispatches. Never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ccopf::cli
