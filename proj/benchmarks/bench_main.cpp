#include <benchmark/benchmark.h>

#include <numeric>
#include <set>

#include "egtas/datasets.hpp"
#include "egtas/evo_search.hpp"
#include "egtas/model.hpp"
#include "egtas/surrogate.hpp"

using namespace egtas;

namespace {

GraphInstance sbm_graph() {
  SbmConfig cfg;
  cfg.seed = 1;
  return generate_sbm(cfg);
}

TrainingArchive archive(int n) {
  SeededRng rng(3);
  TrainingArchive a;
  std::set<ArchitectureEncoding> seen;
  while (static_cast<int>(a.size()) < n) {
    const auto e = sample_uniform(OperationTable::standard(), rng);
    if (seen.insert(e).second) a.add(e, std::accumulate(e.genes.begin(), e.genes.end(), 0.0) + rng.normal(0, 0.1));
  }
  return a;
}

}  // namespace

static void BM_Precompute(benchmark::State& state) {
  const auto g = sbm_graph();
  const auto m = build_model({"Vanilla", "Alternate", "GCN", {"LE", "SVD", "DC"}, {"PEM", "SE", "Mask"}, "Mini"},
                             ModelScale::preset("Desk"), 1, {Task::kNodeClassification, g.feature_dim(), 3});
  for (auto _ : state) benchmark::DoNotOptimize(precompute(g, m));
}
BENCHMARK(BM_Precompute)->Unit(benchmark::kMillisecond);

static void BM_LossAndGradients(benchmark::State& state) {
  static const char* gnns[] = {"None", "GCN", "GAT", "GIN"};
  const auto g = sbm_graph();
  const auto m = build_model({"JK", "Alternate", gnns[state.range(0)], {"LE", "DC"}, {"SE", "Mask"}, "Mini"},
                             ModelScale::preset("Desk"), 1, {Task::kNodeClassification, g.feature_dim(), 3});
  const auto ctx = precompute(g, m);
  LossTargets t;
  t.labels = *g.node_labels;
  for (int i = 0; i < g.n; ++i) t.rows.push_back(i);
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_gradients(m, ctx, t).loss);
  state.SetLabel(gnns[state.range(0)]);
}
BENCHMARK(BM_LossAndGradients)->DenseRange(0, 3)->Unit(benchmark::kMicrosecond);

static void BM_FitSurrogate(benchmark::State& state) {
  const auto a = archive(50);
  const auto kind = static_cast<SurrogateKind>(state.range(0));
  for (auto _ : state) {
    SeededRng rng(1);
    benchmark::DoNotOptimize(fit(kind, a, rng));
  }
  state.SetLabel(kind_name(kind));
}
BENCHMARK(BM_FitSurrogate)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

static void BM_SelectBest(benchmark::State& state) {
  const auto a = archive(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    SeededRng rng(1);
    benchmark::DoNotOptimize(select_best(a, 5, rng));
  }
}
BENCHMARK(BM_SelectBest)->Arg(20)->Arg(50)->Unit(benchmark::kMillisecond);

static void BM_SearchOverForest(benchmark::State& state) {
  SeededRng rng(2);
  const auto model = fit(SurrogateKind::kRandomForest, archive(50), rng);
  SearchConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(run_search(cfg, OperationTable::standard(), model).best.predicted);
}
BENCHMARK(BM_SearchOverForest)->Unit(benchmark::kMillisecond);

static void BM_EnumerateAll(benchmark::State& state) {
  for (auto _ : state) {
    std::size_t n = 0;
    auto it = enumerate_all(OperationTable::standard());
    while (const auto e = it.next()) n += (*e)[0];
    benchmark::DoNotOptimize(n);
  }
}
BENCHMARK(BM_EnumerateAll)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
