#include "ccopf/validation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ccopf/error.hpp"

namespace ccopf {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

namespace {

constexpr Index kBlock = 4096;
constexpr Index kMaxTrace = 10000;
constexpr double kZ99 = 2.5758293035489004;

// Runs fn(block) for blocks [0, count) on up to `threads` workers.
template <class Fn>
void parallel_blocks(Index count, int threads, Fn fn) {
  const int workers = static_cast<int>(std::min<Index>(std::max(1, threads), count));
  if (workers <= 1) {
    for (Index b = 0; b < count; ++b) fn(b);
    return;
  }
  std::atomic<Index> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (Index b = next++; b < count; b = next++) {
        try {
          fn(b);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

int default_threads() {
  if (const char* env = std::getenv("CCOPF_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

MatrixXd sample_omega(const Uncertainty& unc, Index n, std::uint64_t seed, int threads) {
  if (n < 1) throw Error(Errc::OutOfRange, "sample count must be at least 1");
  const Index nw = unc.size();
  MatrixXd out(n, nw);
  const MatrixXd& B = unc.root();
  const Index blocks = (n + kBlock - 1) / kBlock;
  parallel_blocks(blocks, threads > 0 ? threads : default_threads(), [&](Index b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal;
    VectorXd xi(nw);
    const Index end = std::min(n, (b + 1) * kBlock);
    for (Index r = b * kBlock; r < end; ++r) {
      for (Index k = 0; k < nw; ++k) xi[k] = normal(rng);
      out.row(r) = (B * xi).transpose();
    }
  });
  return out;
}

RealizedState apply_response(const ModelInstance& inst, const Schedule& s, const VectorXd& omega) {
  if (omega.size() != inst.uncertainty.size()) {
    throw Error(Errc::DimensionMismatch, "omega has " + std::to_string(omega.size()) + " entries");
  }
  const double total = omega.sum();
  auto respond = [&](const WindResponse& w, const VectorXd& base) {
    if (omega.size() == 0) return base;
    return VectorXd(base + w.wind * omega - (w.gen * s.alpha) * total);
  };
  RealizedState r;
  r.p_gen = s.p_gen - s.alpha * total;
  r.q_gen = respond(inst.resp_q, s.q_gen);
  r.v = respond(inst.resp_v, s.v);
  r.fp = respond(inst.resp_fp, s.fp);
  r.fq = respond(inst.resp_fq, s.fq);
  return r;
}

std::string_view to_string(ValidationMode m) { return m == ValidationMode::FullAC ? "full-ac" : "linearized"; }

ValidationMode parse_validation_mode(std::string_view text) {
  if (text == "linearized") return ValidationMode::Linearized;
  if (text == "full-ac") return ValidationMode::FullAC;
  throw Error(Errc::OutOfRange, "unknown validation mode '" + std::string(text) + "'");
}

const ConstraintRate& ValidationReport::rate(const std::string& name) const {
  for (const ConstraintRate& r : rates) {
    if (r.name == name) return r;
  }
  throw Error(Errc::MissingConstraint, "no validated limit " + name);
}

namespace {

struct Limits {
  std::vector<std::string> names;
  std::vector<double> eps;
  std::vector<bool> enforced;
};

// Accumulators for one block of draws; merged in block order.
struct Tally {
  std::vector<Index> violations;
  VectorXd sum, sum_sq;  // stacked p, q, v, fp, fq
  double cost = 0.0, cost_sq = 0.0;
  Index ok = 0, failures = 0;
};

}  // namespace

ValidationReport validate(const ModelInstance& inst, const VectorXd& x, const ValidationOptions& options) {
  if (options.samples < 1) throw Error(Errc::OutOfRange, "sample count must be at least 1");
  const Network& net = *inst.network;
  const Index n = net.num_buses(), ng = net.num_generators(), nl = net.num_lines();
  const Schedule s = read_schedule(inst, x);
  const RiskParams& risk = inst.risk;
  const int threads = options.threads > 0 ? options.threads : default_threads();

  Limits lim;
  auto add = [&](std::string name, double eps, bool enforced) {
    lim.names.push_back(std::move(name));
    lim.eps.push_back(eps);
    lim.enforced.push_back(enforced);
  };
  const bool cc = inst.has_alpha(), sig = inst.has_sigma_rows();
  for (Index g = 0; g < ng; ++g) {
    add("p_max[" + gen_label(net, g) + "]", risk.eps_p, cc);
    add("p_min[" + gen_label(net, g) + "]", risk.eps_p, cc);
  }
  for (Index g = 0; g < ng; ++g) {
    add("q_max[" + gen_label(net, g) + "]", risk.eps_q, sig);
    add("q_min[" + gen_label(net, g) + "]", risk.eps_q, sig);
  }
  for (Index i = 0; i < n; ++i) {
    add("v_max[" + bus_label(net, i) + "]", risk.eps_v, sig);
    add("v_min[" + bus_label(net, i) + "]", risk.eps_v, sig);
  }
  for (Index l = 0; l < nl; ++l) add("s_max[" + line_label(net, l) + "]", risk.eps_f, sig);
  const Index nlim = static_cast<Index>(lim.names.size());
  const Index nq = 2 * ng + n + 2 * nl;

  const MatrixXd omega = sample_omega(inst.uncertainty, options.samples, options.seed, threads);
  const VectorXd gamma = net.gamma();
  const double tol = options.violation_tol;

  auto realize = [&](Index r, RealizedState& out) -> bool {
    const VectorXd w = omega.row(r).transpose();
    if (options.mode == ValidationMode::Linearized) {
      out = apply_response(inst, s, w);
      return true;
    }
    Dispatch d;
    d.p_gen = s.p_gen - s.alpha * w.sum();
    d.q_gen = s.q_gen;
    d.v_set = s.v;
    d.extra_p = VectorXd::Zero(n);
    d.extra_q = VectorXd::Zero(n);
    for (Index u = 0; u < w.size(); ++u) {
      d.extra_p[net.wind_bus(u)] += w[u];
      d.extra_q[net.wind_bus(u)] += gamma[u] * w[u];
    }
    try {
      const OperatingPoint op = newton_pf(net, d);
      out = {op.p_gen, op.q_gen, op.state.v, op.state.fp_from, op.state.fq_from};
      return true;
    } catch (const Error&) {
      return false;
    }
  };

  auto check = [&](const RealizedState& st, auto&& hit) {
    Index k = 0;
    for (Index g = 0; g < ng; ++g) {
      const Generator& gen = net.generators()[static_cast<size_t>(g)];
      if (st.p_gen[g] > gen.p_max + tol) hit(k);
      ++k;
      if (st.p_gen[g] < gen.p_min - tol) hit(k);
      ++k;
    }
    for (Index g = 0; g < ng; ++g) {
      const Generator& gen = net.generators()[static_cast<size_t>(g)];
      if (st.q_gen[g] > gen.q_max + tol) hit(k);
      ++k;
      if (st.q_gen[g] < gen.q_min - tol) hit(k);
      ++k;
    }
    for (Index i = 0; i < n; ++i) {
      const Bus& b = net.buses()[static_cast<size_t>(i)];
      if (st.v[i] > b.v_max + tol) hit(k);
      ++k;
      if (st.v[i] < b.v_min - tol) hit(k);
      ++k;
    }
    for (Index l = 0; l < nl; ++l) {
      const double smax = net.lines()[static_cast<size_t>(l)].s_max;
      if (std::hypot(st.fp[l], st.fq[l]) > smax + tol) hit(k);
      ++k;
    }
  };

  const Index blocks = (options.samples + kBlock - 1) / kBlock;
  std::vector<Tally> tallies(static_cast<size_t>(blocks));
  parallel_blocks(blocks, threads, [&](Index b) {
    Tally& t = tallies[static_cast<size_t>(b)];
    t.violations.assign(static_cast<size_t>(nlim), 0);
    t.sum = t.sum_sq = VectorXd::Zero(nq);
    RealizedState st;
    VectorXd stack(nq);
    const Index end = std::min(options.samples, (b + 1) * kBlock);
    for (Index r = b * kBlock; r < end; ++r) {
      if (!realize(r, st)) {
        ++t.failures;
        continue;
      }
      ++t.ok;
      check(st, [&](Index k) { ++t.violations[static_cast<size_t>(k)]; });
      stack << st.p_gen, st.q_gen, st.v, st.fp, st.fq;
      t.sum += stack;
      t.sum_sq += stack.cwiseAbs2();
      double c = 0.0;
      for (Index g = 0; g < ng; ++g) c += net.generators()[static_cast<size_t>(g)].cost(st.p_gen[g]);
      t.cost += c;
      t.cost_sq += c * c;
    }
  });

  Tally total;
  total.violations.assign(static_cast<size_t>(nlim), 0);
  total.sum = total.sum_sq = VectorXd::Zero(nq);
  for (const Tally& t : tallies) {
    for (Index k = 0; k < nlim; ++k) total.violations[static_cast<size_t>(k)] += t.violations[static_cast<size_t>(k)];
    total.sum += t.sum;
    total.sum_sq += t.sum_sq;
    total.cost += t.cost;
    total.cost_sq += t.cost_sq;
    total.ok += t.ok;
    total.failures += t.failures;
  }

  ValidationReport rep;
  rep.mode = options.mode;
  rep.model = std::string(to_string(inst.kind));
  rep.samples = options.samples;
  rep.seed = options.seed;
  rep.pf_failures = total.failures;
  const double m = static_cast<double>(std::max<Index>(1, total.ok));
  for (Index k = 0; k < nlim; ++k) {
    ConstraintRate c;
    c.name = lim.names[static_cast<size_t>(k)];
    c.eps = lim.eps[static_cast<size_t>(k)];
    c.enforced = lim.enforced[static_cast<size_t>(k)];
    c.rate = static_cast<double>(total.violations[static_cast<size_t>(k)]) / m;
    c.half_width = kZ99 * std::sqrt(c.rate * (1.0 - c.rate) / m);
    c.exceeded = c.enforced && c.rate > c.eps + 3.0 * std::sqrt(c.eps * (1.0 - c.eps) / m);
    rep.any_exceeded = rep.any_exceeded || c.exceeded;
    rep.rates.push_back(std::move(c));
  }
  if (options.mode == ValidationMode::FullAC && total.failures * 100 > options.samples) rep.any_exceeded = true;

  const VectorXd mean = total.sum / m;
  const VectorXd var = ((total.sum_sq / m - mean.cwiseAbs2()) * (m / std::max(1.0, m - 1.0))).cwiseMax(0.0);
  const VectorXd sd = var.cwiseSqrt();
  rep.sigma_p = sd.segment(0, ng);
  rep.sigma_q = sd.segment(ng, ng);
  rep.sigma_v = sd.segment(2 * ng, n);
  rep.sigma_fp = sd.segment(2 * ng + n, nl);
  rep.sigma_fq = sd.segment(2 * ng + n + nl, nl);
  rep.expected_cost = total.cost / m;
  const double cvar = std::max(0.0, total.cost_sq / m - rep.expected_cost * rep.expected_cost);
  rep.expected_cost_se = std::sqrt(cvar / m);

  const Index rows = std::min({options.trace_rows, options.samples, kMaxTrace});
  if (rows > 0) {
    std::ostringstream h;
    h << "draw,Omega";
    for (Index g = 0; g < ng; ++g) h << ",p_G[" << gen_label(net, g) << "]";
    for (Index g = 0; g < ng; ++g) h << ",q_G[" << gen_label(net, g) << "]";
    for (Index i = 0; i < n; ++i) h << ",v[" << bus_label(net, i) << "]";
    for (Index l = 0; l < nl; ++l) h << ",s[" << line_label(net, l) << "]";
    rep.trace_header = h.str();
    RealizedState st;
    for (Index r = 0; r < rows; ++r) {
      if (!realize(r, st)) continue;
      std::vector<double> row{static_cast<double>(r), omega.row(r).sum()};
      for (Index g = 0; g < ng; ++g) row.push_back(st.p_gen[g]);
      for (Index g = 0; g < ng; ++g) row.push_back(st.q_gen[g]);
      for (Index i = 0; i < n; ++i) row.push_back(st.v[i]);
      for (Index l = 0; l < nl; ++l) row.push_back(std::hypot(st.fp[l], st.fq[l]));
      rep.trace.push_back(std::move(row));
    }
  }
  return rep;
}

std::string validation_report_to_json(const ValidationReport& r) {
  auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json j;
  j["schema"] = kValidationSchema;
  j["model"] = r.model;
  j["mode"] = to_string(r.mode);
  j["samples"] = r.samples;
  j["seed"] = r.seed;
  j["pf_failures"] = r.pf_failures;
  j["any_exceeded"] = r.any_exceeded;
  j["expected_cost"] = r.expected_cost;
  j["expected_cost_se"] = r.expected_cost_se;
  j["sigma"] = {{"p_G", vec(r.sigma_p)}, {"q_G", vec(r.sigma_q)}, {"v", vec(r.sigma_v)},
                {"f_p", vec(r.sigma_fp)}, {"f_q", vec(r.sigma_fq)}};
  json rates = json::array();
  for (const ConstraintRate& c : r.rates) {
    rates.push_back({{"name", c.name}, {"eps", c.eps}, {"rate", c.rate}, {"half_width_99", c.half_width},
                     {"enforced", c.enforced}, {"exceeded", c.exceeded}});
  }
  j["rates"] = rates;
  return j.dump(1);
}

std::string validation_trace_csv(const ValidationReport& r) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << r.trace_header << '\n';
  for (const auto& row : r.trace) {
    for (size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << row[k];
    out << '\n';
  }
  return out.str();
}

}  // namespace ccopf
