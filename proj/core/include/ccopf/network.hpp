#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace ccopf {

using Index = Eigen::Index;

enum class BusKind { PQ, PV, Ref };

struct Bus {
  int id = 0;
  BusKind kind = BusKind::PQ;
  double v_min = 0.9;
  double v_max = 1.1;
  double p_d = 0.0;
  double q_d = 0.0;
  double shunt_g = 0.0;
  double shunt_b = 0.0;
  /// Voltage setpoint used when the bus is voltage controlled (PV/REF).
  double v_set = 1.0;

  friend bool operator==(const Bus&, const Bus&) = default;
};

struct Line {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b_charge = 0.0;
  double s_max = 0.0;

  friend bool operator==(const Line&, const Line&) = default;
};

/// Conventional unit with quadratic cost c2 p^2 + c1 p + c0.
///
/// The pricing algebra works with the reparameterization c2 = 1/(2b),
/// c1 = a/b, so b = 1/(2 c2) and a = c1/(2 c2). c0 only shifts the objective.
struct Generator {
  int bus = 0;
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  double c2 = 0.0;
  double c1 = 0.0;
  double c0 = 0.0;
  /// Initial active dispatch hint (e.g. Pg of a case file); not a limit.
  double p_set = 0.0;

  double b() const { return 1.0 / (2.0 * c2); }
  double a() const { return c1 / (2.0 * c2); }
  double cost(double p) const { return (c2 * p + c1) * p + c0; }
  double marginal_cost(double p) const { return 2.0 * c2 * p + c1; }

  friend bool operator==(const Generator&, const Generator&) = default;
};

struct WindUnit {
  int bus = 0;
  double p_u = 0.0;
  double cos_phi = 1.0;

  /// Reactive-to-active ratio of the fixed power factor.
  double gamma() const {
    return std::sqrt(1.0 - cos_phi * cos_phi) / cos_phi;
  }

  friend bool operator==(const WindUnit&, const WindUnit&) = default;
};

/// Unvalidated network description. Units depend on context: parsers produce
/// physical data (MW, MVAr, $/MW^2) and convert it with to_per_unit().
struct NetworkData {
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<Generator> generators;
  std::vector<WindUnit> wind;

  friend bool operator==(const NetworkData&, const NetworkData&) = default;
};

NetworkData to_per_unit(const NetworkData& physical);
NetworkData to_physical(const NetworkData& per_unit);

/// Merges generators sharing a bus into one equivalent unit: limits add and
/// the cost becomes the infimal convolution of the quadratics (exact while no
/// individual limit binds). Throws UnsupportedCostModel if a unit has c2 <= 0.
NetworkData aggregate_generators(NetworkData data);

/// Validated per-unit network with at most one generator and one wind unit
/// per bus. Immutable once created.
class Network {
 public:
  /// Validates per-unit data. Generators must already be aggregated.
  static Network create(NetworkData per_unit);

  double base_mva() const { return data_.base_mva; }
  const NetworkData& data() const { return data_; }
  const std::vector<Bus>& buses() const { return data_.buses; }
  const std::vector<Line>& lines() const { return data_.lines; }
  const std::vector<Generator>& generators() const { return data_.generators; }
  const std::vector<WindUnit>& wind() const { return data_.wind; }

  Index num_buses() const { return static_cast<Index>(data_.buses.size()); }
  Index num_lines() const { return static_cast<Index>(data_.lines.size()); }
  Index num_generators() const {
    return static_cast<Index>(data_.generators.size());
  }
  Index num_wind() const { return static_cast<Index>(data_.wind.size()); }

  /// Position of a bus id in buses(); throws InvalidNetwork if unknown.
  Index bus_index(int id) const;
  Index ref_bus() const { return ref_; }
  Index line_from(Index l) const { return line_from_[static_cast<size_t>(l)]; }
  Index line_to(Index l) const { return line_to_[static_cast<size_t>(l)]; }
  Index generator_bus(Index g) const { return gen_bus_[static_cast<size_t>(g)]; }
  Index wind_bus(Index w) const { return wind_bus_[static_cast<size_t>(w)]; }
  /// Generator located at a bus index, or -1.
  Index generator_at(Index bus) const { return gen_at_[static_cast<size_t>(bus)]; }
  /// Wind unit located at a bus index, or -1.
  Index wind_at(Index bus) const { return wind_at_[static_cast<size_t>(bus)]; }

  Eigen::VectorXd gamma() const;
  Eigen::VectorXd p_demand() const;
  Eigen::VectorXd q_demand() const;
  /// Forecast wind injection per bus (active, reactive at fixed power factor).
  Eigen::VectorXd p_wind_at_buses() const;
  Eigen::VectorXd q_wind_at_buses() const;

 private:
  explicit Network(NetworkData data) : data_(std::move(data)) {}

  NetworkData data_;
  std::unordered_map<int, Index> bus_pos_;
  Index ref_ = -1;
  std::vector<Index> line_from_, line_to_, gen_bus_, wind_bus_, gen_at_, wind_at_;
};

using ComplexSparse = Eigen::SparseMatrix<std::complex<double>>;

/// Bus admittance matrix of the pi-model lines plus bus shunts.
ComplexSparse build_admittance(const Network& net);

}  // namespace ccopf
