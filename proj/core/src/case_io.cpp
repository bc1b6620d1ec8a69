#include "ccopf/case_io.hpp"

#include <cctype>
#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ccopf/error.hpp"

namespace ccopf {

namespace {

using json = nlohmann::json;

// MATPOWER marks an unlimited branch with RATE_A = 0.
constexpr double kUnlimitedRatingMva = 1.0e4;

struct Row {
  int line = 0;
  std::vector<double> values;
};

struct Tables {
  std::optional<double> base_mva;
  std::map<std::string, std::vector<Row>> tables;
};

std::string strip_comment(const std::string& line) {
  const auto pos = line.find('%');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

void flush_row(std::string& cell_text, int line_no, std::vector<Row>& rows) {
  std::istringstream in(cell_text);
  Row row;
  row.line = line_no;
  std::string tok;
  while (in >> tok) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') {
      throw ParseError(Errc::MalformedRow, line_no, "cannot read number '" + tok + "'");
    }
    row.values.push_back(v);
  }
  if (!row.values.empty()) rows.push_back(std::move(row));
  cell_text.clear();
}

Tables scan_matpower(std::string_view text) {
  Tables out;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  std::vector<Row>* current = nullptr;
  std::string pending;
  int pending_line = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = strip_comment(raw);
    size_t pos = 0;
    if (current == nullptr) {
      const auto mpc = line.find("mpc.");
      if (mpc == std::string::npos) continue;
      const auto eq = line.find('=', mpc);
      if (eq == std::string::npos) continue;
      std::string name = line.substr(mpc + 4, eq - mpc - 4);
      while (!name.empty() && std::isspace(static_cast<unsigned char>(name.back()))) name.pop_back();
      const auto bracket = line.find('[', eq);
      if (bracket == std::string::npos) {
        if (name == "baseMVA") {
          std::string value = line.substr(eq + 1);
          const auto semi = value.find(';');
          if (semi != std::string::npos) value.resize(semi);
          char* end = nullptr;
          const double v = std::strtod(value.c_str(), &end);
          if (end == value.c_str()) throw ParseError(Errc::MalformedRow, line_no, "bad baseMVA");
          out.base_mva = v;
        }
        continue;
      }
      current = &out.tables[name];
      pos = bracket + 1;
      pending_line = line_no;
    }
    for (; pos < line.size(); ++pos) {
      const char c = line[pos];
      if (c == ']') {
        flush_row(pending, pending_line, *current);
        current = nullptr;
        break;
      }
      if (c == ';') {
        flush_row(pending, pending_line, *current);
        pending_line = line_no;
      } else {
        pending.push_back(c == ',' ? ' ' : c);
      }
    }
    if (current != nullptr) {
      // a newline also terminates a matrix row
      flush_row(pending, pending_line, *current);
      pending_line = line_no + 1;
    }
  }
  if (current != nullptr) throw ParseError(Errc::MalformedRow, line_no, "unterminated matrix");
  return out;
}

const std::vector<Row>& require_table(const Tables& t, const std::string& name) {
  auto it = t.tables.find(name);
  if (it == t.tables.end()) throw Error(Errc::MissingTable, "mpc." + name);
  return it->second;
}

void require_columns(const Row& r, size_t n, const char* table) {
  if (r.values.size() < n) {
    throw ParseError(Errc::MalformedRow, r.line,
                     std::string(table) + " row needs at least " + std::to_string(n) + " columns");
  }
}

int as_id(double v, int line) {
  if (v != std::floor(v)) throw ParseError(Errc::MalformedRow, line, "non-integer bus id");
  return static_cast<int>(v);
}

/// Collapses parallel branches into their equivalent pi model.
std::vector<Line> merge_parallel(const std::vector<Line>& lines) {
  std::vector<Line> out;
  std::map<std::pair<int, int>, size_t> seen;
  for (const Line& l : lines) {
    const auto key = std::minmax(l.from, l.to);
    auto it = seen.find(key);
    if (it == seen.end()) {
      seen.emplace(key, out.size());
      out.push_back(l);
      continue;
    }
    Line& m = out[it->second];
    const std::complex<double> y = 1.0 / std::complex<double>(m.r, m.x) +
                                   1.0 / std::complex<double>(l.r, l.x);
    const std::complex<double> z = 1.0 / y;
    m.r = z.real();
    m.x = z.imag();
    m.b_charge += l.b_charge;
    m.s_max += l.s_max;
  }
  return out;
}

BusKind kind_from_code(double code, int line) {
  switch (static_cast<int>(code)) {
    case 1: return BusKind::PQ;
    case 2: return BusKind::PV;
    case 3: return BusKind::Ref;
    default: break;
  }
  throw ParseError(Errc::MalformedRow, line, "unsupported bus type " + std::to_string(code));
}

}  // namespace

NetworkData parse_matpower_data(std::string_view text) {
  const Tables t = scan_matpower(text);
  if (!t.base_mva) throw Error(Errc::MissingTable, "mpc.baseMVA");
  const auto& bus_rows = require_table(t, "bus");
  const auto& gen_rows = require_table(t, "gen");
  const auto& branch_rows = require_table(t, "branch");
  const auto& cost_rows = require_table(t, "gencost");
  if (cost_rows.size() < gen_rows.size()) {
    throw Error(Errc::MissingTable, "mpc.gencost has fewer rows than mpc.gen");
  }

  NetworkData d;
  d.base_mva = *t.base_mva;
  std::map<int, size_t> bus_pos;
  for (const Row& r : bus_rows) {
    require_columns(r, 13, "bus");
    Bus b;
    b.id = as_id(r.values[0], r.line);
    b.kind = kind_from_code(r.values[1], r.line);
    b.p_d = r.values[2];
    b.q_d = r.values[3];
    b.shunt_g = r.values[4];
    b.shunt_b = r.values[5];
    b.v_set = r.values[7];
    b.v_max = r.values[11];
    b.v_min = r.values[12];
    bus_pos[b.id] = d.buses.size();
    d.buses.push_back(b);
  }

  for (size_t k = 0; k < gen_rows.size(); ++k) {
    const Row& r = gen_rows[k];
    require_columns(r, 10, "gen");
    const Row& c = cost_rows[k];
    require_columns(c, 4, "gencost");
    if (r.values[7] <= 0.0) continue;  // out of service
    if (static_cast<int>(c.values[0]) != 2) {
      throw ParseError(Errc::UnsupportedCostModel, c.line, "only polynomial (model 2) costs are supported");
    }
    const int n = static_cast<int>(c.values[3]);
    if (n < 1 || n > 3) {
      throw ParseError(Errc::UnsupportedCostModel, c.line, "polynomial cost degree must be <= 2");
    }
    require_columns(c, 4 + static_cast<size_t>(n), "gencost");
    double coef[3] = {0.0, 0.0, 0.0};  // c2, c1, c0
    for (int j = 0; j < n; ++j) coef[3 - n + j] = c.values[4 + static_cast<size_t>(j)];
    if (!(coef[0] > 0.0)) {
      throw ParseError(Errc::UnsupportedCostModel, c.line, "cost must be strictly convex (c2 > 0)");
    }
    Generator g;
    g.bus = as_id(r.values[0], r.line);
    g.p_set = r.values[1];
    g.q_max = r.values[3];
    g.q_min = r.values[4];
    g.p_max = r.values[8];
    g.p_min = r.values[9];
    g.c2 = coef[0];
    g.c1 = coef[1];
    g.c0 = coef[2];
    auto it = bus_pos.find(g.bus);
    if (it == bus_pos.end()) throw ParseError(Errc::MalformedRow, r.line, "generator at unknown bus");
    Bus& host = d.buses[it->second];
    if (host.kind != BusKind::PQ) host.v_set = r.values[5];
    d.generators.push_back(g);
  }
  // PV buses without an in-service generator behave as load buses.
  for (Bus& b : d.buses) {
    if (b.kind != BusKind::PV) continue;
    const bool has_gen = std::any_of(d.generators.begin(), d.generators.end(),
                                     [&](const Generator& g) { return g.bus == b.id; });
    if (!has_gen) b.kind = BusKind::PQ;
  }

  std::vector<Line> lines;
  for (const Row& r : branch_rows) {
    require_columns(r, 11, "branch");
    if (r.values[10] <= 0.0) continue;
    Line l;
    l.from = as_id(r.values[0], r.line);
    l.to = as_id(r.values[1], r.line);
    l.r = r.values[2];
    l.x = r.values[3];
    l.b_charge = r.values[4];
    l.s_max = r.values[5] > 0.0 ? r.values[5] : kUnlimitedRatingMva;
    lines.push_back(l);
  }
  d.lines = merge_parallel(lines);
  return d;
}

Network parse_matpower(std::string_view text) {
  return Network::create(to_per_unit(aggregate_generators(parse_matpower_data(text))));
}

namespace {

const json& at(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw Error(Errc::SchemaViolation, path + "/" + key + " missing");
  return j.at(key);
}

double num(const json& j, const std::string& key, const std::string& path) {
  const json& v = at(j, key, path);
  if (!v.is_number()) throw Error(Errc::SchemaViolation, path + "/" + key + " must be a number");
  return v.get<double>();
}

double num_or(const json& j, const std::string& key, double fallback, const std::string& path) {
  return j.contains(key) ? num(j, key, path) : fallback;
}

int id(const json& j, const std::string& key, const std::string& path) {
  const json& v = at(j, key, path);
  if (!v.is_number_integer()) throw Error(Errc::SchemaViolation, path + "/" + key + " must be an integer");
  return v.get<int>();
}

const json& array(const json& j, const std::string& key, const std::string& path) {
  const json& v = at(j, key, path);
  if (!v.is_array()) throw Error(Errc::SchemaViolation, path + "/" + key + " must be an array");
  return v;
}

BusKind kind_from_json(const json& v, const std::string& path) {
  if (v.is_string()) {
    std::string s = v.get<std::string>();
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (s == "PQ") return BusKind::PQ;
    if (s == "PV") return BusKind::PV;
    if (s == "REF" || s == "SLACK") return BusKind::Ref;
  } else if (v.is_number_integer()) {
    switch (v.get<int>()) {
      case 1: return BusKind::PQ;
      case 2: return BusKind::PV;
      case 3: return BusKind::Ref;
      default: break;
    }
  }
  throw Error(Errc::SchemaViolation, path + "/kind must be PQ, PV or REF");
}

const char* kind_name(BusKind k) {
  switch (k) {
    case BusKind::PQ: return "PQ";
    case BusKind::PV: return "PV";
    case BusKind::Ref: return "REF";
  }
  return "PQ";
}

Eigen::MatrixXd read_sigma(const json& unc, const NetworkData& d) {
  const std::string path = "/uncertainty";
  const auto n = static_cast<Index>(d.wind.size());
  Eigen::MatrixXd sigma(n, n);
  if (unc.contains("sigma")) {
    const json& s = array(unc, "sigma", path);
    if (!s.empty() && s.front().is_array()) {
      if (static_cast<Index>(s.size()) != n) {
        throw Error(Errc::InconsistentDimension, "sigma has " + std::to_string(s.size()) + " rows for " +
                                                     std::to_string(n) + " wind units");
      }
      for (Index i = 0; i < n; ++i) {
        const json& row = s[static_cast<size_t>(i)];
        if (!row.is_array() || static_cast<Index>(row.size()) != n) {
          throw Error(Errc::InconsistentDimension, path + "/sigma/" + std::to_string(i) + " has wrong length");
        }
        for (Index k = 0; k < n; ++k) {
          const json& v = row[static_cast<size_t>(k)];
          if (!v.is_number()) throw Error(Errc::SchemaViolation, path + "/sigma entries must be numbers");
          sigma(i, k) = v.get<double>();
        }
      }
    } else {
      if (static_cast<Index>(s.size()) != n * n) {
        throw Error(Errc::InconsistentDimension, "flat sigma needs " + std::to_string(n * n) + " entries");
      }
      for (Index i = 0; i < n * n; ++i) {
        const json& v = s[static_cast<size_t>(i)];
        if (!v.is_number()) throw Error(Errc::SchemaViolation, path + "/sigma entries must be numbers");
        sigma(i / n, i % n) = v.get<double>();
      }
    }
    if (unc.contains("ordering")) {
      const json& ord = array(unc, "ordering", path);
      if (static_cast<Index>(ord.size()) != n) {
        throw Error(Errc::InconsistentDimension, "ordering length differs from wind unit count");
      }
      // ordering[k] = bus id of the wind unit that row k describes
      std::vector<Index> perm(static_cast<size_t>(n), -1);
      for (Index k = 0; k < n; ++k) {
        const json& v = ord[static_cast<size_t>(k)];
        if (!v.is_number_integer()) throw Error(Errc::SchemaViolation, path + "/ordering entries must be bus ids");
        const int bus = v.get<int>();
        Index w = 0;
        while (w < n && d.wind[static_cast<size_t>(w)].bus != bus) ++w;
        if (w == n) throw Error(Errc::InconsistentDimension, "ordering names bus " + std::to_string(bus) +
                                                                 " without a wind unit");
        perm[static_cast<size_t>(k)] = w;
      }
      Eigen::MatrixXd reordered(n, n);
      for (Index i = 0; i < n; ++i)
        for (Index k = 0; k < n; ++k) reordered(perm[i], perm[k]) = sigma(i, k);
      sigma = reordered;
    }
  } else if (unc.contains("relative_std")) {
    const double rel = num(unc, "relative_std", path);
    sigma.setZero();
    for (Index w = 0; w < n; ++w) {
      const double sd = rel * d.wind[static_cast<size_t>(w)].p_u;
      sigma(w, w) = sd * sd;
    }
  } else {
    throw Error(Errc::SchemaViolation, path + " needs sigma or relative_std");
  }
  return sigma;
}

}  // namespace

CaseFile parse_network_json(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::SchemaViolation, std::string("malformed JSON: ") + e.what());
  }
  if (!root.is_object()) throw Error(Errc::SchemaViolation, "/ must be an object");

  NetworkData d;
  d.base_mva = num(root, "base_mva", "");
  const json& buses = array(root, "buses", "");
  for (size_t i = 0; i < buses.size(); ++i) {
    const std::string p = "/buses/" + std::to_string(i);
    const json& b = buses[i];
    Bus bus;
    bus.id = id(b, "id", p);
    bus.kind = kind_from_json(at(b, "kind", p), p);
    bus.v_min = num(b, "v_min", p);
    bus.v_max = num(b, "v_max", p);
    bus.p_d = num_or(b, "p_d", 0.0, p);
    bus.q_d = num_or(b, "q_d", 0.0, p);
    bus.shunt_g = num_or(b, "shunt_g", 0.0, p);
    bus.shunt_b = num_or(b, "shunt_b", 0.0, p);
    bus.v_set = num_or(b, "v_set", 1.0, p);
    d.buses.push_back(bus);
  }
  const json& lines = array(root, "lines", "");
  for (size_t i = 0; i < lines.size(); ++i) {
    const std::string p = "/lines/" + std::to_string(i);
    const json& l = lines[i];
    Line line;
    line.from = id(l, "from", p);
    line.to = id(l, "to", p);
    line.r = num(l, "r", p);
    line.x = num(l, "x", p);
    line.b_charge = num_or(l, "b_charge", 0.0, p);
    line.s_max = num(l, "s_max", p);
    d.lines.push_back(line);
  }
  if (root.contains("generators")) {
    const json& gens = array(root, "generators", "");
    for (size_t i = 0; i < gens.size(); ++i) {
      const std::string p = "/generators/" + std::to_string(i);
      const json& g = gens[i];
      Generator gen;
      gen.bus = id(g, "bus", p);
      gen.p_min = num(g, "p_min", p);
      gen.p_max = num(g, "p_max", p);
      gen.q_min = num(g, "q_min", p);
      gen.q_max = num(g, "q_max", p);
      gen.c2 = num(g, "c2", p);
      gen.c1 = num(g, "c1", p);
      gen.c0 = num_or(g, "c0", 0.0, p);
      gen.p_set = num_or(g, "p_set", 0.5 * (gen.p_min + gen.p_max), p);
      d.generators.push_back(gen);
    }
  }
  if (root.contains("wind")) {
    const json& wind = array(root, "wind", "");
    for (size_t i = 0; i < wind.size(); ++i) {
      const std::string p = "/wind/" + std::to_string(i);
      const json& w = wind[i];
      WindUnit unit;
      unit.bus = id(w, "bus", p);
      unit.p_u = num(w, "p_u", p);
      unit.cos_phi = num_or(w, "cos_phi", 1.0, p);
      d.wind.push_back(unit);
    }
  }

  std::optional<Eigen::MatrixXd> sigma;
  if (root.contains("uncertainty") && !root.at("uncertainty").is_null()) {
    const double base2 = d.base_mva * d.base_mva;
    sigma = read_sigma(root.at("uncertainty"), d) / base2;
  }
  Network net = Network::create(to_per_unit(aggregate_generators(std::move(d))));
  return CaseFile{std::move(net), std::move(sigma)};
}

std::string emit_network_json(const Network& net, const std::optional<Eigen::MatrixXd>& sigma) {
  const NetworkData d = to_physical(net.data());
  json root;
  root["base_mva"] = d.base_mva;
  root["buses"] = json::array();
  for (const Bus& b : d.buses) {
    root["buses"].push_back({{"id", b.id},
                             {"kind", kind_name(b.kind)},
                             {"v_min", b.v_min},
                             {"v_max", b.v_max},
                             {"p_d", b.p_d},
                             {"q_d", b.q_d},
                             {"shunt_g", b.shunt_g},
                             {"shunt_b", b.shunt_b},
                             {"v_set", b.v_set}});
  }
  root["lines"] = json::array();
  for (const Line& l : d.lines) {
    root["lines"].push_back(
        {{"from", l.from}, {"to", l.to}, {"r", l.r}, {"x", l.x}, {"b_charge", l.b_charge}, {"s_max", l.s_max}});
  }
  root["generators"] = json::array();
  for (const Generator& g : d.generators) {
    root["generators"].push_back({{"bus", g.bus},
                                  {"p_min", g.p_min},
                                  {"p_max", g.p_max},
                                  {"q_min", g.q_min},
                                  {"q_max", g.q_max},
                                  {"c2", g.c2},
                                  {"c1", g.c1},
                                  {"c0", g.c0},
                                  {"p_set", g.p_set}});
  }
  root["wind"] = json::array();
  for (const WindUnit& w : d.wind) {
    root["wind"].push_back({{"bus", w.bus}, {"p_u", w.p_u}, {"cos_phi", w.cos_phi}});
  }
  if (sigma) {
    const double base2 = d.base_mva * d.base_mva;
    json rows = json::array();
    for (Index i = 0; i < sigma->rows(); ++i) {
      json row = json::array();
      for (Index k = 0; k < sigma->cols(); ++k) row.push_back((*sigma)(i, k) * base2);
      rows.push_back(row);
    }
    json ordering = json::array();
    for (const WindUnit& w : d.wind) ordering.push_back(w.bus);
    root["uncertainty"] = {{"sigma", rows}, {"ordering", ordering}};
  }
  return root.dump(2);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CaseFile load_case(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  if (path.extension() == ".m") return CaseFile{parse_matpower(text), std::nullopt};
  return parse_network_json(text);
}

}  // namespace ccopf
