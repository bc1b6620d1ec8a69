#include "ccopf/error.hpp"

namespace ccopf {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::MissingTable: return "MissingTable";
    case Errc::MalformedRow: return "MalformedRow";
    case Errc::NoRefBus: return "NoRefBus";
    case Errc::MultipleRefBuses: return "MultipleRefBuses";
    case Errc::UnsupportedCostModel: return "UnsupportedCostModel";
    case Errc::SchemaViolation: return "SchemaViolation";
    case Errc::InconsistentDimension: return "InconsistentDimension";
    case Errc::InvalidNetwork: return "InvalidNetwork";
    case Errc::SingularBranch: return "SingularBranch";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::NonConvergence: return "NonConvergence";
    case Errc::VoltageCollapse: return "VoltageCollapse";
    case Errc::SingularJA: return "SingularJA";
    case Errc::DegenerateSigma: return "DegenerateSigma";
    case Errc::NegativeZeta: return "NegativeZeta";
    case Errc::InvalidProgram: return "InvalidProgram";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::InfeasibleBounds: return "InfeasibleBounds";
    case Errc::InfeasibleReserve: return "InfeasibleReserve";
    case Errc::NotOptimal: return "NotOptimal";
    case Errc::MissingConstraint: return "MissingConstraint";
    case Errc::MissingSolution: return "MissingSolution";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace ccopf
