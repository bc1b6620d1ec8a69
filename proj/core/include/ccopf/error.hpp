#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ccopf {

/// Failure categories surfaced by the library. Each maps onto one named
/// error condition of a public operation.
enum class Errc {
  // case ingestion
  MissingTable,
  MalformedRow,
  NoRefBus,
  MultipleRefBuses,
  UnsupportedCostModel,
  SchemaViolation,
  InconsistentDimension,
  InvalidNetwork,
  SingularBranch,
  // power flow
  DimensionMismatch,
  NonConvergence,
  VoltageCollapse,
  // sensitivities
  SingularJA,
  // stochastic model
  OutOfRange,
  InfeasibleBounds,
  InfeasibleReserve,
  // solver
  InvalidProgram,
  // pricing
  NotOptimal,
  MissingConstraint,
  DegenerateSigma,
  NegativeZeta,
  // cli / io
  MissingSolution,
  Io,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Parse failure that carries the 1-based source line it refers to.
class ParseError : public Error {
 public:
  ParseError(Errc code, int line, const std::string& what)
      : Error(code, "line " + std::to_string(line) + ": " + what), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace ccopf
