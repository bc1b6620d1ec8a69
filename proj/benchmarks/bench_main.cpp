#include <benchmark/benchmark.h>

#include "ccopf/pricing.hpp"
#include "ccopf/validation.hpp"
#include "fixtures.hpp"
#include "problems.hpp"

using namespace ccopf;

namespace {

const testing::Setup& case14() {
  static const testing::Setup s = testing::load_setup("case14_wind.json");
  return s;
}

void BM_NewtonPF(benchmark::State& state) {
  const Network& net = case14().net;
  const Dispatch d = case_dispatch(net);
  for (auto _ : state) benchmark::DoNotOptimize(newton_pf(net, d));
}
BENCHMARK(BM_NewtonPF);

void BM_ResponseMatrices(benchmark::State& state) {
  const auto& s = case14();
  for (auto _ : state) benchmark::DoNotOptimize(response_matrices(s.net, s.op));
}
BENCHMARK(BM_ResponseMatrices);

void BM_ReferenceProblems(benchmark::State& state) {
  const auto problems = testing::reference_problems();
  for (auto _ : state) {
    for (const auto& p : problems) benchmark::DoNotOptimize(solve(p.program));
  }
}
BENCHMARK(BM_ReferenceProblems);

void BM_BuildAndSolve(benchmark::State& state) {
  const auto& s = case14();
  const auto kind = static_cast<ModelKind>(state.range(0));
  const RiskParams risk = RiskParams::uniform(0.1);
  const VariancePenalties psi = VariancePenalties::uniform(s.net, 10.0);
  for (auto _ : state) {
    const ModelInstance m = build_model(kind, s.net, s.op, s.sf, s.unc, risk, psi);
    benchmark::DoNotOptimize(solve(m.program));
  }
  state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_BuildAndSolve)->DenseRange(0, 3);

void BM_PriceReport(benchmark::State& state) {
  const auto& s = case14();
  const ModelInstance m = build_va_cc(s.net, s.op, s.sf, s.unc, RiskParams::uniform(0.1),
                                      VariancePenalties::uniform(s.net, 10.0));
  const SolveResult r = solve(m.program);
  for (auto _ : state) benchmark::DoNotOptimize(price_report(m, r));
}
BENCHMARK(BM_PriceReport);

void BM_Validate(benchmark::State& state) {
  const auto& s = case14();
  const ModelInstance m = build_eqv_cc(s.net, s.op, s.sf, s.unc, RiskParams::uniform(0.1));
  const SolveResult r = solve(m.program);
  ValidationOptions vo;
  vo.samples = state.range(0);
  vo.threads = 1;
  for (auto _ : state) benchmark::DoNotOptimize(validate(m, r.x, vo));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Validate)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
