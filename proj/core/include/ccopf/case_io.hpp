#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "ccopf/network.hpp"

namespace ccopf {

/// A network together with an optional forecast-error covariance over the
/// wind units (ordered as Network::wind(), per-unit squared).
struct CaseFile {
  Network network;
  std::optional<Eigen::MatrixXd> sigma;
};

/// Reads MATPOWER case text (baseMVA, bus, gen, branch, gencost) into
/// physical-unit data. Out-of-service rows are dropped.
NetworkData parse_matpower_data(std::string_view text);

/// parse_matpower_data followed by aggregation, per-unit conversion and
/// validation.
Network parse_matpower(std::string_view text);

/// Native JSON case format. Powers are MW / MVAr, costs $/MWh-based, the
/// covariance is in MW^2; impedances are per-unit as in MATPOWER.
CaseFile parse_network_json(std::string_view text);
std::string emit_network_json(const Network& net,
                              const std::optional<Eigen::MatrixXd>& sigma = {});

/// Loads a case by extension: ".m" is MATPOWER, anything else native JSON.
CaseFile load_case(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace ccopf
