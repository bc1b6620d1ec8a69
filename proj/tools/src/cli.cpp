#include "ccopf/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "ccopf/case_io.hpp"
#include "ccopf/error.hpp"

namespace ccopf::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::string num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::Io, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(Errc::Io, "write failed for " + path.string());
}

std::string with_schema(std::string_view schema, const std::string& body) {
  return "# schema: " + std::string(schema) + "\n" + body;
}

json sigma_json(const MatrixXd& s) {
  json rows = json::array();
  for (Index i = 0; i < s.rows(); ++i) {
    json r = json::array();
    for (Index j = 0; j < s.cols(); ++j) r.push_back(s(i, j));
    rows.push_back(r);
  }
  return rows;
}

MatrixXd sigma_from_json(const json& rows) {
  const auto n = static_cast<Index>(rows.size());
  MatrixXd s(n, n);
  for (Index i = 0; i < n; ++i) {
    const auto& r = rows.at(static_cast<size_t>(i));
    if (static_cast<Index>(r.size()) != n) throw Error(Errc::SchemaViolation, "solution: /uncertainty/sigma not square");
    for (Index j = 0; j < n; ++j) s(i, j) = r.at(static_cast<size_t>(j)).get<double>();
  }
  return s;
}

bool infeasible(SolveStatus s) { return s == SolveStatus::PrimalInfeasible || s == SolveStatus::DualInfeasible; }

bool infeasible(const Error& e) {
  return e.code() == Errc::InfeasibleReserve || e.code() == Errc::InfeasibleBounds;
}

double sum_sq(const VectorXd& v) { return v.squaredNorm(); }

// Plain worker pool over indices; results land in caller-owned slots.
template <class Fn>
void for_each_parallel(size_t count, int threads, Fn fn) {
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(count)));
  if (workers == 1) {
    for (size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (size_t k = next++; k < count; k = next++) fn(k);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

void check_config(const RunConfig& config) {
  if (config.eps.empty()) throw Error(Errc::OutOfRange, "at least one eps is required");
  for (double e : config.eps) risk_for(config, e);
  for (double p : config.psi) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw Error(Errc::OutOfRange, "psi must be finite and >= 0, got " + num(p));
  }
  if (config.rel_std && !(*config.rel_std >= 0.0)) throw Error(Errc::OutOfRange, "rel-std must be >= 0");
  if (config.samples <= 0) throw Error(Errc::OutOfRange, "samples must be positive");
}

RiskParams risk_for(const RunConfig& config, double eps) {
  return RiskParams::create(config.eps_p.value_or(eps), config.eps_q.value_or(eps), config.eps_v.value_or(eps),
                            config.eps_f.value_or(eps));
}

Prepared prepare(const RunConfig& config) {
  CaseFile cf = load_case(config.case_path);
  Prepared prep;
  prep.network = std::make_shared<const Network>(cf.network);
  const Network& net = *prep.network;

  if (config.rel_std) {
    prep.uncertainty = Uncertainty::relative(net, *config.rel_std);
  } else if (cf.sigma) {
    prep.uncertainty = Uncertainty::create(*cf.sigma);
  } else {
    prep.uncertainty = Uncertainty::relative(net, 0.125);
  }

  if (config.lin_point) {
    prep.point = operating_point_from_json(net, read_text_file(*config.lin_point));
    prep.external_point = true;
    prep.linearization.converged = true;
  } else {
    LinearizationOptions lo;
    lo.solver = config.solver;
    prep.point = linearization_point(net, lo, &prep.linearization);
  }
  prep.factors = response_matrices(net, prep.point);
  return prep;
}

SolveOutcome solve_case(const Prepared& prep, ModelKind kind, const RiskParams& risk, double psi,
                        const SolverOptions& solver) {
  const Network& net = *prep.network;
  SolveOutcome out{build_model(kind, net, prep.point, prep.factors, prep.uncertainty, risk,
                               VariancePenalties::uniform(net, psi)),
                   {}};
  out.result = solve(out.instance.program, solver);
  return out;
}

std::string solution_to_json(const RunConfig& config, double eps, double psi, const Prepared& prep,
                             const SolveOutcome& outcome) {
  const ModelInstance& inst = outcome.instance;
  const SolveResult& res = outcome.result;
  json j;
  j["schema"] = kSolutionSchema;

  json cfg;
  std::error_code ec;
  const fs::path case_abs = fs::absolute(config.case_path, ec);
  cfg["case"] = (ec ? config.case_path : case_abs).generic_string();
  cfg["model"] = to_string(inst.kind);
  cfg["eps"] = eps;
  cfg["eps_p"] = inst.risk.eps_p;
  cfg["eps_q"] = inst.risk.eps_q;
  cfg["eps_v"] = inst.risk.eps_v;
  cfg["eps_f"] = inst.risk.eps_f;
  cfg["psi"] = psi;
  cfg["tolerance"] = config.solver.tolerance;
  cfg["lin_point"] = config.lin_point ? json(config.lin_point->generic_string()) : json(nullptr);
  cfg["rel_std"] = config.rel_std ? json(*config.rel_std) : json(nullptr);
  j["config"] = cfg;

  j["linearization"] = {{"rounds", prep.linearization.rounds},
                        {"last_change", prep.linearization.last_change},
                        {"converged", prep.linearization.converged},
                        {"external", prep.external_point}};
  j["operating_point"] = json::parse(operating_point_to_json(*prep.network, prep.point));
  j["uncertainty"] = {{"sigma", sigma_json(prep.uncertainty.sigma())}, {"s_total", prep.uncertainty.s_total()}};

  j["status"] = to_string(res.status);
  j["iterations"] = res.iterations;
  const KktResiduals kkt = kkt_residuals(inst.program, res);
  j["kkt"] = {{"r_primal", kkt.r_primal},
              {"r_dual", kkt.r_dual},
              {"gap", kkt.gap},
              {"complementarity", kkt.complementarity},
              {"dual_cone_violation", kkt.dual_cone_violation}};

  if (res.status == SolveStatus::Optimal) {
    j["objective"] = res.objective;
    const ObjectiveParts parts = objective_parts(inst, res.x);
    j["objective_parts"] = {{"generation_cost", parts.generation_cost},
                            {"expected_cost", parts.expected_cost},
                            {"penalty", parts.penalty},
                            {"v_metric", parts.v_metric}};
    json primal = json::object();
    const auto& names = inst.registry.var_names();
    for (size_t k = 0; k < names.size(); ++k) primal[names[k]] = res.x[static_cast<Index>(k)];
    j["primal"] = primal;
    j["duals"] = json::parse(dual_solution_to_json(inst, extract_duals(inst, res)));
  } else {
    j["objective"] = nullptr;
  }
  return j.dump(2) + "\n";
}

namespace {

std::vector<std::string> tidy_lines(const SweepRow& row) {
  std::vector<std::string> lines;
  if (!row.prices) return lines;
  const PriceReport& r = *row.prices;
  const std::string tail = "," + std::string(to_string(row.model)) + "," + num(row.eps) + "," + num(row.psi) + ",";
  auto emit = [&](const char* q, const VectorXd& v) {
    for (Index i = 0; i < v.size() && i < static_cast<Index>(r.bus_ids.size()); ++i) {
      lines.push_back(std::to_string(r.bus_ids[static_cast<size_t>(i)]) + "," + q + tail + num(v[i]));
    }
  };
  emit("lmp_p", r.lmp_p);
  emit("lmp_q", r.lmp_q);
  if (r.has_chi) emit("chi_tilde", r.chi_tilde);
  if (r.has_sigma) emit("sigma_v", r.sigma_v);
  return lines;
}

SweepRow row_from(ModelKind kind, double eps, double psi, const SolveOutcome& o) {
  SweepRow row;
  row.model = kind;
  row.eps = eps;
  row.psi = psi;
  row.status = std::string(to_string(o.result.status));
  for (auto& c : row.status) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (o.result.status != SolveStatus::Optimal) return row;
  row.status = "optimal";
  row.objective = o.result.objective;
  const ObjectiveParts parts = objective_parts(o.instance, o.result.x);
  row.expected_cost = parts.expected_cost;
  row.v_metric = parts.v_metric;
  row.prices = price_report(o.instance, o.result);
  row.has_chi = row.prices->has_chi;
  row.chi = row.prices->chi;
  if (kind != ModelKind::Det) {
    const Schedule s = read_schedule(o.instance, o.result.x);
    const Sigmas sg = realized_sigmas(o.instance, s.alpha);
    row.has_sigma = true;
    row.sum_sigma2[0] = sum_sq(sg.q);
    row.sum_sigma2[1] = sum_sq(sg.v);
    row.sum_sigma2[2] = sum_sq(sg.fp);
    row.sum_sigma2[3] = sum_sq(sg.fq);
  }
  return row;
}

}  // namespace

std::vector<SweepRow> run_sweep(const RunConfig& config, const Prepared& prep) {
  check_config(config);
  struct Cell {
    ModelKind kind;
    size_t eps_index;
    double psi;
  };
  // Det does not depend on eps: solve it once and copy it into every eps block.
  std::vector<Cell> cells{{ModelKind::Det, 0, 0.0}};
  for (size_t e = 0; e < config.eps.size(); ++e) {
    cells.push_back({ModelKind::GenCC, e, 0.0});
    cells.push_back({ModelKind::EqvCC, e, 0.0});
    for (double p : config.psi) cells.push_back({ModelKind::VaCC, e, p});
  }

  std::vector<SweepRow> solved(cells.size());
  const int threads = config.threads > 0 ? config.threads : default_threads();
  for_each_parallel(cells.size(), threads, [&](size_t k) {
    const Cell& c = cells[k];
    const double eps = config.eps[c.eps_index];
    try {
      const SolveOutcome o = solve_case(prep, c.kind, risk_for(config, eps), c.psi, config.solver);
      solved[k] = row_from(c.kind, eps, c.psi, o);
    } catch (const Error& e) {
      SweepRow row;
      row.model = c.kind;
      row.eps = eps;
      row.psi = c.psi;
      row.status = infeasible(e) ? "infeasible" : "error";
      row.error = e.what();
      solved[k] = std::move(row);
    } catch (const std::exception& e) {
      SweepRow row;
      row.model = c.kind;
      row.eps = eps;
      row.psi = c.psi;
      row.status = "error";
      row.error = e.what();
      solved[k] = std::move(row);
    }
  });

  std::vector<SweepRow> rows;
  for (size_t e = 0; e < config.eps.size(); ++e) {
    SweepRow det = solved[0];
    det.eps = config.eps[e];
    rows.push_back(std::move(det));
  }
  for (ModelKind kind : {ModelKind::GenCC, ModelKind::EqvCC, ModelKind::VaCC}) {
    for (size_t e = 0; e < config.eps.size(); ++e) {
      for (size_t k = 1; k < cells.size(); ++k) {
        if (cells[k].kind == kind && cells[k].eps_index == e) rows.push_back(solved[k]);
      }
    }
  }

  for (auto& row : rows) {
    const auto ref = std::find_if(rows.begin(), rows.end(), [&](const SweepRow& r) {
      return r.model == ModelKind::EqvCC && r.eps == row.eps && r.ok();
    });
    if (ref == rows.end() || !row.ok()) continue;
    row.has_reference = true;
    row.expected_cost_delta_pct = 100.0 * (row.expected_cost - ref->expected_cost) / ref->expected_cost;
    for (int f = 0; f < 4; ++f) {
      row.sigma2_pct[f] = ref->sum_sigma2[f] > 0.0 ? 100.0 * row.sum_sigma2[f] / ref->sum_sigma2[f] : NAN;
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "model,eps,psi,status,objective,expected_cost,expected_cost_delta_pct,chi,"
        "sum_sigma2_q,sum_sigma2_v,sum_sigma2_fp,sum_sigma2_fq,"
        "d_sigma2_q_pct,d_sigma2_v_pct,d_sigma2_fp_pct,d_sigma2_fq_pct,v_metric,error\n";
  for (const auto& r : rows) {
    os << to_string(r.model) << ',' << num(r.eps) << ',' << num(r.psi) << ',' << r.status << ',';
    if (r.ok()) {
      os << num(r.objective) << ',' << num(r.expected_cost) << ','
         << (r.has_reference ? num(r.expected_cost_delta_pct) : "") << ',' << (r.has_chi ? num(r.chi) : "") << ',';
      for (int f = 0; f < 4; ++f) os << (r.has_sigma ? num(r.sum_sigma2[f]) : "") << ',';
      for (int f = 0; f < 4; ++f) os << (r.has_sigma && r.has_reference ? num(r.sigma2_pct[f]) : "") << ',';
      os << (r.has_sigma ? num(r.v_metric) : "") << ',';
    } else {
      os << ",,,,,,,,,,,,,";
    }
    std::string err = r.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    std::replace(err.begin(), err.end(), '\n', ' ');
    if (!err.empty()) os << '"' << err << '"';
    os << '\n';
  }
  return os.str();
}

std::string sweep_tidy_csv(const std::vector<SweepRow>& rows) {
  std::string out = "bus,quantity,model,eps,psi,value\n";
  for (const auto& r : rows) {
    for (const auto& line : tidy_lines(r)) out += line + "\n";
  }
  return out;
}

int cmd_solve(const RunConfig& config, std::ostream& log) {
  check_config(config);
  const double eps = config.eps.front();
  const double psi = config.psi.empty() ? 0.0 : config.psi.front();
  const Prepared prep = prepare(config);
  if (!prep.linearization.converged) {
    log << "warning: linearization rounds did not settle (last change " << prep.linearization.last_change << ")\n";
  }
  SolveOutcome o;
  try {
    o = solve_case(prep, config.model, risk_for(config, eps), psi, config.solver);
  } catch (const Error& e) {
    if (!infeasible(e)) throw;
    log << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  }
  write_file(config.out / "solution.json", solution_to_json(config, eps, psi, prep, o));
  if (o.result.status != SolveStatus::Optimal) {
    log << "solver status: " << to_string(o.result.status) << "\n";
    return infeasible(o.result.status) ? kExitInfeasible : kExitError;
  }
  const SweepRow row = row_from(config.model, eps, psi, o);
  write_file(config.out / "prices.json", price_report_to_json(*row.prices));
  write_file(config.out / "prices.csv", with_schema(kPriceReportSchema, price_report_csv(*row.prices)));
  write_file(config.out / "prices_tidy.csv", with_schema(kTidySchema, sweep_tidy_csv({row})));
  log << to_string(config.model) << ": optimal, objective " << num(o.result.objective) << " $";
  if (row.has_chi) log << ", chi " << num(row.chi) << " $";
  log << "\n";
  return kExitOk;
}

int cmd_sweep(const RunConfig& config, std::ostream& log) {
  check_config(config);
  if (config.psi.empty()) throw Error(Errc::OutOfRange, "at least one psi is required");
  const Prepared prep = prepare(config);
  const auto rows = run_sweep(config, prep);
  write_file(config.out / "sweep.csv", with_schema(kSweepSchema, sweep_csv(rows)));
  write_file(config.out / "sweep_tidy.csv", with_schema(kTidySchema, sweep_tidy_csv(rows)));
  int failed = 0;
  for (const auto& r : rows) {
    if (!r.ok()) {
      ++failed;
      log << to_string(r.model) << " eps=" << num(r.eps) << " psi=" << num(r.psi) << ": " << r.status
          << (r.error.empty() ? "" : " (" + r.error + ")") << "\n";
    }
  }
  log << rows.size() << " rows, " << failed << " failed\n";
  return failed == 0 ? kExitOk : kExitError;
}

int cmd_validate(const RunConfig& config, std::ostream& log) {
  if (config.solution.empty() || !fs::exists(config.solution)) {
    throw Error(Errc::MissingSolution, "no solution file at '" + config.solution.string() + "'");
  }
  json sol;
  try {
    sol = json::parse(read_text_file(config.solution));
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaViolation, std::string("solution: ") + e.what());
  }
  try {
    if (sol.at("schema").get<std::string>() != kSolutionSchema) {
      throw Error(Errc::SchemaViolation, "solution: unexpected schema " + sol.at("schema").dump());
    }
    if (sol.at("status").get<std::string>() != to_string(SolveStatus::Optimal)) {
      throw Error(Errc::NotOptimal, "solution status is " + sol.at("status").get<std::string>());
    }
    const json& cfg = sol.at("config");
    const fs::path case_path = config.case_path.empty() ? fs::path(cfg.at("case").get<std::string>()) : config.case_path;
    const CaseFile cf = load_case(case_path);
    const Network& net = cf.network;
    const ModelKind kind = parse_model_kind(cfg.at("model").get<std::string>());
    const RiskParams risk = RiskParams::create(cfg.at("eps_p").get<double>(), cfg.at("eps_q").get<double>(),
                                               cfg.at("eps_v").get<double>(), cfg.at("eps_f").get<double>());
    const double psi = cfg.at("psi").get<double>();
    const OperatingPoint op = operating_point_from_json(net, sol.at("operating_point").dump());
    const Uncertainty planned = Uncertainty::create(sigma_from_json(sol.at("uncertainty").at("sigma")));
    const SensitivityFactors sf = response_matrices(net, op);
    const ModelInstance inst = build_model(kind, net, op, sf, planned, risk, VariancePenalties::uniform(net, psi));

    const json& primal = sol.at("primal");
    const auto& names = inst.registry.var_names();
    VectorXd x(static_cast<Index>(names.size()));
    for (size_t k = 0; k < names.size(); ++k) {
      if (!primal.contains(names[k])) throw Error(Errc::SchemaViolation, "solution: missing primal " + names[k]);
      x[static_cast<Index>(k)] = primal.at(names[k]).get<double>();
    }

    // Draws may come from a different covariance than the one planned for.
    ModelInstance tested = inst;
    if (config.rel_std) tested.uncertainty = Uncertainty::relative(net, *config.rel_std);

    ValidationOptions vo;
    vo.samples = config.samples;
    vo.seed = config.seed;
    vo.mode = config.mode;
    vo.threads = config.threads;
    vo.trace_rows = config.trace_rows;
    const ValidationReport rep = validate(tested, x, vo);
    write_file(config.out / "validation.json", validation_report_to_json(rep));
    if (config.trace_rows > 0) write_file(config.out / "validation_trace.csv", validation_trace_csv(rep));

    for (const auto& r : rep.rates) {
      if (r.exceeded) log << "exceeded: " << r.name << " rate " << num(r.rate) << " > eps " << num(r.eps) << "\n";
    }
    if (rep.pf_failures > 0) log << "power flow failures: " << rep.pf_failures << "\n";
    log << "validated " << rep.samples << " draws (" << to_string(rep.mode) << ")"
        << (rep.any_exceeded ? ", limits exceeded" : ", within limits") << "\n";
    return rep.any_exceeded ? kExitExceeded : kExitOk;
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaViolation, std::string("solution: ") + e.what());
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Chance-constrained AC-OPF pricing"};
  app.require_subcommand(1);
  RunConfig cfg;
  std::string model = "det", mode = "linearized";
  std::vector<double> eps, psi;
  std::string case_path, lin_point, out_dir = ".", solution;
  double rel_std = -1.0;
  std::optional<double> eps_p, eps_q, eps_v, eps_f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--rel-std", rel_std, "Independent forecast errors of this relative size");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--tol", cfg.solver.tolerance, "Solver tolerance");
  };
  auto model_opts = [&](CLI::App* sub, bool multi) {
    sub->add_option("--case", case_path, "Case file (.m or .json)")->required();
    auto* e = sub->add_option("--eps", eps, "Risk level(s)");
    auto* p = sub->add_option("--psi", psi, "Variance penalty weight(s)");
    if (!multi) {
      e->expected(1);
      p->expected(1);
    }
    sub->add_option("--eps-p", eps_p);
    sub->add_option("--eps-q", eps_q);
    sub->add_option("--eps-v", eps_v);
    sub->add_option("--eps-f", eps_f);
    sub->add_option("--lin-point", lin_point, "Operating point JSON");
    common(sub);
  };

  auto* solve_cmd = app.add_subcommand("solve", "Solve one model and price it");
  model_opts(solve_cmd, false);
  solve_cmd->add_option("--model", model, "det, gen-cc, eqv-cc or va-cc");

  auto* sweep_cmd = app.add_subcommand("sweep", "Comparison table over eps and psi");
  model_opts(sweep_cmd, true);

  auto* val_cmd = app.add_subcommand("validate", "Monte Carlo check of a stored solution");
  val_cmd->add_option("--solution", solution, "solution.json from solve")->required();
  val_cmd->add_option("--case", case_path, "Override the case path stored in the solution");
  val_cmd->add_option("--samples", cfg.samples);
  val_cmd->add_option("--seed", cfg.seed)->required();
  val_cmd->add_option("--mode", mode, "linearized or full-ac");
  val_cmd->add_option("--trace", cfg.trace_rows, "Per-draw rows to write");
  common(val_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    cfg.case_path = case_path;
    cfg.out = out_dir;
    cfg.solution = solution;
    if (!lin_point.empty()) cfg.lin_point = lin_point;
    if (rel_std >= 0.0) cfg.rel_std = rel_std;
    cfg.eps_p = eps_p;
    cfg.eps_q = eps_q;
    cfg.eps_v = eps_v;
    cfg.eps_f = eps_f;
    cfg.mode = parse_validation_mode(mode);
    if (*sweep_cmd) {
      cfg.eps = eps.empty() ? std::vector<double>{0.1, 0.01} : eps;
      cfg.psi = psi.empty() ? std::vector<double>{0.1, 1, 10, 100, 1000} : psi;
      return cmd_sweep(cfg, err);
    }
    if (!eps.empty()) cfg.eps = eps;
    if (!psi.empty()) cfg.psi = psi;
    if (*solve_cmd) {
      cfg.model = parse_model_kind(model);
      return cmd_solve(cfg, err);
    }
    return cmd_validate(cfg, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
}

}  // namespace ccopf::cli
