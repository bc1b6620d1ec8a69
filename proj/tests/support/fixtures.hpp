#pragma once

#include <filesystem>
#include <string>

#include "ccopf/case_io.hpp"
#include "ccopf/model.hpp"

#ifndef CCOPF_DATA_DIR
#error "CCOPF_DATA_DIR must point at data/"
#endif

namespace ccopf::testing {

inline std::filesystem::path case_path(const std::string& name) {
  return std::filesystem::path(CCOPF_DATA_DIR) / "cases" / name;
}

/// A network with its linearization point and sensitivities.
struct Setup {
  Network net;
  OperatingPoint op;
  SensitivityFactors sf;
  Uncertainty unc;
};

inline Setup load_setup(const std::string& name) {
  CaseFile cf = load_case(case_path(name));
  const Network& net = cf.network;
  LinearizationOptions lo;
  lo.solver.tolerance = 1e-9;
  OperatingPoint op = linearization_point(net, lo);
  SensitivityFactors sf = response_matrices(net, op);
  Uncertainty unc = cf.sigma ? Uncertainty::create(*cf.sigma) : Uncertainty::relative(net, 0.125);
  return {cf.network, op, sf, unc};
}

inline SolverOptions tight() {
  SolverOptions o;
  o.tolerance = 1e-9;
  return o;
}

}  // namespace ccopf::testing
