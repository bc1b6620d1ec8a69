#include "ccopf/network.hpp"

#include <algorithm>
#include <map>
#include <queue>
#include <set>
#include <string>

#include "ccopf/error.hpp"

namespace ccopf {

namespace {

NetworkData rescale(NetworkData d, double power) {
  // power = 1/base converts MW -> p.u., power = base converts back.
  for (auto& b : d.buses) {
    b.p_d *= power;
    b.q_d *= power;
    b.shunt_g *= power;
    b.shunt_b *= power;
  }
  for (auto& l : d.lines) l.s_max *= power;
  for (auto& g : d.generators) {
    g.p_min *= power;
    g.p_max *= power;
    g.q_min *= power;
    g.q_max *= power;
    g.p_set *= power;
    // cost($) is invariant: c2 p_mw^2 = (c2 / power^2) (power p_mw)^2
    g.c2 /= power * power;
    g.c1 /= power;
  }
  for (auto& w : d.wind) w.p_u *= power;
  return d;
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

NetworkData to_per_unit(const NetworkData& physical) {
  return rescale(physical, 1.0 / physical.base_mva);
}

NetworkData to_physical(const NetworkData& per_unit) {
  return rescale(per_unit, per_unit.base_mva);
}

NetworkData aggregate_generators(NetworkData data) {
  std::map<int, std::vector<Generator>> by_bus;
  std::vector<int> order;
  for (const auto& g : data.generators) {
    if (!(g.c2 > 0.0)) {
      throw Error(Errc::UnsupportedCostModel,
                  "generator at bus " + std::to_string(g.bus) +
                      " has non-positive quadratic cost coefficient");
    }
    if (by_bus.find(g.bus) == by_bus.end()) order.push_back(g.bus);
    by_bus[g.bus].push_back(g);
  }
  std::vector<Generator> merged;
  merged.reserve(order.size());
  for (int bus : order) {
    const auto& units = by_bus[bus];
    if (units.size() == 1) {
      merged.push_back(units.front());
      continue;
    }
    // Equal-marginal-cost split: with p_k = b_k lambda - a_k the total cost is
    // (P + sum a)^2 / (2 sum b) + sum (c0_k - a_k^2 / (2 b_k)).
    double sum_a = 0.0, sum_b = 0.0, offset = 0.0;
    Generator agg;
    agg.bus = bus;
    for (const auto& g : units) {
      sum_a += g.a();
      sum_b += g.b();
      offset += g.c0 - g.a() * g.a() / (2.0 * g.b());
      agg.p_min += g.p_min;
      agg.p_max += g.p_max;
      agg.q_min += g.q_min;
      agg.q_max += g.q_max;
      agg.p_set += g.p_set;
    }
    agg.c2 = 1.0 / (2.0 * sum_b);
    agg.c1 = sum_a / sum_b;
    agg.c0 = sum_a * sum_a / (2.0 * sum_b) + offset;
    merged.push_back(agg);
  }
  data.generators = std::move(merged);
  return data;
}

Network Network::create(NetworkData d) {
  if (d.buses.empty()) throw Error(Errc::InvalidNetwork, "network has no buses");
  if (!(d.base_mva > 0.0)) throw Error(Errc::InvalidNetwork, "base_mva must be positive");

  Network net(std::move(d));
  const auto& data = net.data_;
  const auto nb = data.buses.size();

  for (size_t i = 0; i < nb; ++i) {
    const Bus& b = data.buses[i];
    if (!net.bus_pos_.emplace(b.id, static_cast<Index>(i)).second) {
      throw Error(Errc::InvalidNetwork, "duplicate bus id " + std::to_string(b.id));
    }
    if (!(b.v_min > 0.0) || b.v_min > b.v_max) {
      throw Error(Errc::InvalidNetwork, "bus " + std::to_string(b.id) + ": need 0 < v_min <= v_max");
    }
    if (!finite(b.p_d) || !finite(b.q_d) || !finite(b.shunt_g) || !finite(b.shunt_b)) {
      throw Error(Errc::InvalidNetwork, "bus " + std::to_string(b.id) + ": non-finite demand");
    }
    if (b.kind == BusKind::Ref) {
      if (net.ref_ >= 0) {
        throw Error(Errc::MultipleRefBuses, "buses " + std::to_string(data.buses[net.ref_].id) +
                                                " and " + std::to_string(b.id));
      }
      net.ref_ = static_cast<Index>(i);
    }
  }
  if (net.ref_ < 0) throw Error(Errc::NoRefBus, "no reference bus");

  std::set<std::pair<Index, Index>> pairs;
  for (const Line& l : data.lines) {
    if (l.from == l.to) throw Error(Errc::InvalidNetwork, "self-loop at bus " + std::to_string(l.from));
    const Index f = net.bus_index(l.from);
    const Index t = net.bus_index(l.to);
    if (l.r == 0.0 && l.x == 0.0) {
      throw Error(Errc::SingularBranch,
                  "line " + std::to_string(l.from) + "-" + std::to_string(l.to) + " has zero impedance");
    }
    if (!(l.s_max > 0.0)) {
      throw Error(Errc::InvalidNetwork,
                  "line " + std::to_string(l.from) + "-" + std::to_string(l.to) + ": s_max must be positive");
    }
    if (!pairs.emplace(std::min(f, t), std::max(f, t)).second) {
      throw Error(Errc::InvalidNetwork,
                  "parallel lines between " + std::to_string(l.from) + " and " + std::to_string(l.to));
    }
    net.line_from_.push_back(f);
    net.line_to_.push_back(t);
  }

  net.gen_at_.assign(nb, -1);
  net.wind_at_.assign(nb, -1);
  for (size_t g = 0; g < data.generators.size(); ++g) {
    const Generator& gen = data.generators[g];
    const Index bi = net.bus_index(gen.bus);
    if (gen.p_min > gen.p_max || gen.q_min > gen.q_max) {
      throw Error(Errc::InvalidNetwork, "generator at bus " + std::to_string(gen.bus) + ": inverted limits");
    }
    if (!(gen.c2 > 0.0)) {
      throw Error(Errc::UnsupportedCostModel,
                  "generator at bus " + std::to_string(gen.bus) + " needs c2 > 0");
    }
    if (net.gen_at_[bi] >= 0) {
      throw Error(Errc::InvalidNetwork,
                  "more than one generator at bus " + std::to_string(gen.bus) + " (aggregate first)");
    }
    net.gen_at_[bi] = static_cast<Index>(g);
    net.gen_bus_.push_back(bi);
  }
  for (size_t w = 0; w < data.wind.size(); ++w) {
    const WindUnit& unit = data.wind[w];
    const Index bi = net.bus_index(unit.bus);
    if (!(unit.cos_phi > 0.0 && unit.cos_phi <= 1.0)) {
      throw Error(Errc::InvalidNetwork, "wind unit at bus " + std::to_string(unit.bus) + ": cos_phi not in (0,1]");
    }
    if (!(unit.p_u >= 0.0)) {
      throw Error(Errc::InvalidNetwork, "wind unit at bus " + std::to_string(unit.bus) + ": negative forecast");
    }
    if (net.wind_at_[bi] >= 0) {
      throw Error(Errc::InvalidNetwork, "more than one wind unit at bus " + std::to_string(unit.bus));
    }
    net.wind_at_[bi] = static_cast<Index>(w);
    net.wind_bus_.push_back(bi);
  }

  // connectivity
  std::vector<std::vector<Index>> adj(nb);
  for (size_t l = 0; l < net.line_from_.size(); ++l) {
    adj[net.line_from_[l]].push_back(net.line_to_[l]);
    adj[net.line_to_[l]].push_back(net.line_from_[l]);
  }
  std::vector<bool> seen(nb, false);
  std::queue<Index> frontier;
  frontier.push(net.ref_);
  seen[net.ref_] = true;
  size_t reached = 1;
  while (!frontier.empty()) {
    const Index u = frontier.front();
    frontier.pop();
    for (Index v : adj[u]) {
      if (!seen[v]) {
        seen[v] = true;
        ++reached;
        frontier.push(v);
      }
    }
  }
  if (reached != nb) throw Error(Errc::InvalidNetwork, "network is not connected");
  return net;
}

Index Network::bus_index(int id) const {
  auto it = bus_pos_.find(id);
  if (it == bus_pos_.end()) throw Error(Errc::InvalidNetwork, "unknown bus id " + std::to_string(id));
  return it->second;
}

Eigen::VectorXd Network::gamma() const {
  Eigen::VectorXd g(num_wind());
  for (Index w = 0; w < num_wind(); ++w) g[w] = data_.wind[w].gamma();
  return g;
}

Eigen::VectorXd Network::p_demand() const {
  Eigen::VectorXd p(num_buses());
  for (Index i = 0; i < num_buses(); ++i) p[i] = data_.buses[i].p_d;
  return p;
}

Eigen::VectorXd Network::q_demand() const {
  Eigen::VectorXd q(num_buses());
  for (Index i = 0; i < num_buses(); ++i) q[i] = data_.buses[i].q_d;
  return q;
}

Eigen::VectorXd Network::p_wind_at_buses() const {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(num_buses());
  for (Index w = 0; w < num_wind(); ++w) p[wind_bus(w)] += data_.wind[w].p_u;
  return p;
}

Eigen::VectorXd Network::q_wind_at_buses() const {
  Eigen::VectorXd q = Eigen::VectorXd::Zero(num_buses());
  for (Index w = 0; w < num_wind(); ++w) q[wind_bus(w)] += data_.wind[w].gamma() * data_.wind[w].p_u;
  return q;
}

ComplexSparse build_admittance(const Network& net) {
  using C = std::complex<double>;
  const Index n = net.num_buses();
  std::vector<Eigen::Triplet<C>> trip;
  trip.reserve(static_cast<size_t>(4 * net.num_lines() + n));
  for (Index l = 0; l < net.num_lines(); ++l) {
    const Line& line = net.lines()[l];
    if (line.r == 0.0 && line.x == 0.0) {
      throw Error(Errc::SingularBranch, "line with zero impedance");
    }
    const C y = 1.0 / C(line.r, line.x);
    const C half_charge(0.0, line.b_charge / 2.0);
    const Index f = net.line_from(l), t = net.line_to(l);
    trip.emplace_back(f, f, y + half_charge);
    trip.emplace_back(t, t, y + half_charge);
    trip.emplace_back(f, t, -y);
    trip.emplace_back(t, f, -y);
  }
  for (Index i = 0; i < n; ++i) {
    const Bus& b = net.buses()[i];
    trip.emplace_back(i, i, C(b.shunt_g, b.shunt_b));
  }
  ComplexSparse y(n, n);
  y.setFromTriplets(trip.begin(), trip.end());
  return y;
}

}  // namespace ccopf
