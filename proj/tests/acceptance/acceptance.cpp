// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "../gradcheck.hpp"
#include "egtas/datasets.hpp"
#include "egtas/evo_search.hpp"
#include "egtas/metrics.hpp"
#include "egtas/model.hpp"
#include "egtas/surrogate.hpp"
#include "egtas_cli/commands.hpp"
#include "egtas_cli/evaluator.hpp"

using namespace egtas;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradFloor = 1e-6;
constexpr double kGradStep = 1e-5;
// Retry steps for coordinates sitting within kGradStep of a GNN ReLU kink.
constexpr std::initializer_list<double> kGradRefineSteps = {1e-6, 1e-7};
constexpr double kNeutralTol = 1e-9;
constexpr double kKtauMin = 0.8;
constexpr double kGpInterpTol = 1e-6;
constexpr double kTopFraction = 0.01;
constexpr int kSearchSeedsNeeded = 9;
constexpr double kBaselineMargin = 0.15;
constexpr int kPipelineSeedsNeeded = 8;
constexpr double kAucTol = 1e-9;
constexpr double kLnCTol = 1e-9;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void run(int id, const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > budget_s) {
    o.pass = false;
    o.detail += " (over the " + std::to_string(static_cast<int>(budget_s)) + " s budget)";
  }
  if (!o.pass) ++failures;
  std::printf("[%s] %d %s: %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

const OperationTable& table() { return OperationTable::standard(); }

GraphInstance graph(int n, const std::vector<std::pair<int, int>>& edges, int d, std::uint64_t seed) {
  GraphInstance g;
  g.n = n;
  g.edges = edges;
  SeededRng rng(seed);
  g.features = Matrix(n, d);
  for (int i = 0; i < g.features.size(); ++i) g.features.data()[i] = rng.uniform(-1, 1);
  return g;
}

const char* kTopologies[] = {"Vanilla", "JK", "Residual", "GCNII"};
const char* kCombinations[] = {"Before", "Alternate", "Parallel"};
const char* kGnns[] = {"GCN", "SAGE", "GAT", "GATv2", "GIN", "None"};

// 1
Outcome encoding_completeness() {
  std::size_t count = 0, bad = 0;
  auto it = enumerate_all(table());
  while (const auto e = it.next()) {
    ++count;
    if (encode(decode(*e, table()), table()) != *e) ++bad;
  }
  return {count == 18432 && bad == 0, std::to_string(count) + " encodings, " + std::to_string(bad) + " round-trip mismatches"};
}

// 2
Outcome gradient_correctness() {
  const GraphInstance g = graph(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {1, 4}, {0, 2}}, 3, 17);
  LossTargets t;
  for (int i = 0; i < 6; ++i) {
    t.labels.push_back(i % 3);
    t.rows.push_back(i);
  }
  double worst = 0.0;
  std::string where;
  std::size_t coords = 0, refined = 0;
  int specs = 0;
  for (const char* topo : kTopologies)
    for (const char* comb : kCombinations)
      for (const char* gnn : kGnns) {
        const ArchitectureSpec spec{topo, comb, gnn, {"LE", "DC"}, {"SE", "Mask"}, "Mini"};
        const auto m = build_model(spec, ModelScale::preset("Desk"), 7, {Task::kNodeClassification, 3, 3});
        const auto r = testing::gradient_check(m, precompute(g, m), t, kGradStep, kGradFloor, kGradRelTol,
                                               kGradRefineSteps);
        coords += r.coords;
        refined += r.refined;
        ++specs;
        if (r.worst_rel_error > worst) {
          worst = r.worst_rel_error;
          where = std::string(topo) + "/" + comb + "/" + gnn + " " + r.worst_param;
        }
      }
  return {specs == 72 && worst <= kGradRelTol,
          std::to_string(specs) + " specs, " + std::to_string(coords) + " coordinates (" + std::to_string(refined) +
              " at a refined step), worst relative error " + fmt(worst) + " at " + where};
}

// 3
Outcome mask_neutrality() {
  // connected 12-node graph: a path plus chords
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i + 1 < 12; ++i) edges.emplace_back(i, i + 1);
  for (auto e : {std::pair{0, 5}, {3, 9}, {2, 7}, {6, 11}}) edges.push_back(e);
  const GraphInstance g = graph(12, edges, 4, 23);
  const int diameter = bfs_all_pairs(g).diameter();
  double mask_gap = 0.0, gcnii_gap = 0.0;
  const ModelIO io{Task::kNodeClassification, 4, 3};
  for (const char* topo : kTopologies)
    for (const char* comb : kCombinations)
      for (const char* gnn : kGnns) {
        EncodingConfig cfg;
        cfg.mask_threshold = diameter;
        const auto plain = build_model({topo, comb, gnn, {"DC"}, {}, "Mini"}, ModelScale::preset("Desk"), 3, io, cfg);
        const auto masked = build_model({topo, comb, gnn, {"DC"}, {"Mask"}, "Mini"}, ModelScale::preset("Desk"), 3, io, cfg);
        const Matrix a = assemble_forward(plain, precompute(g, plain)).output;
        const Matrix b = assemble_forward(masked, precompute(g, masked)).output;
        mask_gap = std::max(mask_gap, (a - b).cwiseAbs().maxCoeff());
      }
  for (const char* comb : kCombinations)
    for (const char* gnn : kGnns) {
      EncodingConfig cfg;
      cfg.gcnii_alpha = 0.0;
      const auto v = build_model({"Vanilla", comb, gnn, {"LE"}, {"SE"}, "Mini"}, ModelScale::preset("Desk"), 3, io, cfg);
      const auto c = build_model({"GCNII", comb, gnn, {"LE"}, {"SE"}, "Mini"}, ModelScale::preset("Desk"), 3, io, cfg);
      const Matrix a = assemble_forward(v, precompute(g, v)).output;
      const Matrix b = assemble_forward(c, precompute(g, c)).output;
      gcnii_gap = std::max(gcnii_gap, (a - b).cwiseAbs().maxCoeff());
    }
  return {mask_gap <= kNeutralTol && gcnii_gap <= kNeutralTol,
          "diameter " + std::to_string(diameter) + ", mask gap " + fmt(mask_gap) + ", GCNII gap " + fmt(gcnii_gap)};
}

// 4
Outcome surrogate_fidelity() {
  SeededRng rng(2024);
  Vector weights(feature_width());
  for (int i = 0; i < weights.size(); ++i) weights(i) = rng.normal();
  TrainingArchive archive;
  std::set<ArchitectureEncoding> seen;
  while (archive.size() < 200) {
    const auto e = sample_uniform(table(), rng);
    if (!seen.insert(e).second) continue;
    archive.add(e, featurize(e).dot(weights) + rng.normal(0.0, 0.01));
  }
  std::vector<std::size_t> order(200);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const TrainingArchive train = archive.subset({order.begin(), order.begin() + 160});
  const TrainingArchive hold = archive.subset({order.begin() + 160, order.end()});

  SeededRng sel_rng(7);
  auto sel = select_best(train, 5, sel_rng);
  score_holdout(sel.model, hold, sel.report);
  const double kt = *sel.report.holdout_ktau;

  SurrogateOptions exact;
  exact.gp.noises = {1e-10};
  SeededRng gp_rng(1);
  const auto gp = fit(SurrogateKind::kGaussianProcess, train, gp_rng, exact);
  double interp = 0.0;
  for (std::size_t i = 0; i < train.size(); ++i)
    interp = std::max(interp, std::abs(gp.predict(train.encodings[i]) - train.values[i]));
  return {kt >= kKtauMin && interp <= kGpInterpTol,
          "winner " + sel.report.selected + ", holdout(40) ktau " + fmt(kt) + ", GP interpolation error " + fmt(interp)};
}

// 5
Outcome search_optimality() {
  const auto& b = table().bounds();
  int hits = 0;
  bool monotone = true;
  std::string ranks;
  std::vector<ArchitectureEncoding> space;
  auto it = enumerate_all(table());
  while (const auto e = it.next()) space.push_back(*e);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SeededRng frng(derive_seed(seed, hash_name("oracle")));
    std::vector<std::vector<double>> main(kNumGenes);
    for (std::size_t g = 0; g < kNumGenes; ++g)
      for (int v = 0; v < b[g]; ++v) main[g].push_back(frng.normal());
    const int ga = frng.uniform_int(kNumGenes);
    int gb = frng.uniform_int(kNumGenes - 1);
    if (gb >= ga) ++gb;
    Matrix inter(b[ga], b[gb]);
    for (int i = 0; i < inter.size(); ++i) inter.data()[i] = frng.normal();
    const Scorer f = [&](const ArchitectureEncoding& e) {
      double s = inter(e[ga], e[gb]);
      for (std::size_t g = 0; g < kNumGenes; ++g) s += main[g][e[g]];
      return s;
    };
    SearchConfig cfg;
    cfg.population_size = 20;
    cfg.crossover_prob = 0.7;
    cfg.mutation_prob = 1.0 / 6;
    cfg.generations = 30;
    cfg.seed = seed;
    const auto r = run_search(cfg, table(), f, false);
    const double found = f(r.best.encoding);
    std::size_t better = 0;
    for (const auto& e : space) better += f(e) > found;
    const double top = static_cast<double>(better + 1) / static_cast<double>(space.size());
    if (top <= kTopFraction) ++hits;
    ranks += (ranks.empty() ? "" : ",") + std::to_string(better + 1);
    for (std::size_t g = 1; g < r.history.size(); ++g)
      if (r.history[g].best_pred < r.history[g - 1].best_pred) monotone = false;
  }
  return {hits >= kSearchSeedsNeeded && monotone,
          std::to_string(hits) + "/10 seeds in the top 1% (ranks " + ranks + "), history monotone " +
              (monotone ? "yes" : "no")};
}

// 6
Outcome desk_pipeline() {
  int pass_a = 0, pass_b = 0;
  std::string values;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const fs::path dir = fs::temp_directory_path() / ("egtas_acceptance_pipeline_" + std::to_string(seed));
    fs::remove_all(dir);
    cli::CommonArgs args;
    args.seed = seed;
    args.out_dir = dir;
    std::ostringstream sink;
    cli::cmd_gen_dataset(args, sink);
    cli::cmd_sample(args, sink);
    cli::cmd_fit_surrogate(args, sink);
    cli::cmd_search(args, sink, sink);

    const Dataset data = load_dataset(dir / cli::artifact::kDataset);
    const auto& g = data.graphs.front();
    std::vector<int> counts(data.num_classes, 0);
    int val = 0;
    for (int i = 0; i < g.n; ++i)
      if (g.split_masks->val[i]) {
        ++counts[(*g.node_labels)[i]];
        ++val;
      }
    const double baseline = static_cast<double>(*std::max_element(counts.begin(), counts.end())) / val;

    std::vector<double> sampled;
    for (const auto& e : cli::read_archive(dir / cli::artifact::kArchive)) sampled.push_back(e.record.value);
    std::sort(sampled.begin(), sampled.end());
    const std::size_t n = sampled.size();
    const double median = n % 2 ? sampled[n / 2] : 0.5 * (sampled[n / 2 - 1] + sampled[n / 2]);

    std::ifstream in(dir / cli::artifact::kResult);
    const auto result = nlohmann::json::parse(in);
    const double retrained = result.at("retrained").at("value").get<double>();
    pass_a += retrained >= baseline + kBaselineMargin;
    pass_b += retrained >= median;
    values += (values.empty() ? "" : " ") + fmt(retrained) + "/" + fmt(median);
    fs::remove_all(dir);
  }
  return {pass_a >= kPipelineSeedsNeeded && pass_b >= kPipelineSeedsNeeded,
          "(a) " + std::to_string(pass_a) + "/10, (b) " + std::to_string(pass_b) + "/10; retrained/median " + values};
}

// 7
Outcome metric_oracles() {
  SeededRng rng(99);
  double auc_gap = 0.0;
  for (int set = 0; set < 200; ++set) {
    const int n = 2 + rng.uniform_int(60);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = set % 2 ? rng.uniform_int(8) : rng.uniform();
      y[i] = rng.bernoulli(0.4);
    }
    y[0] = 0;
    y[1] = 1;
    double num = 0, den = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (y[i] == 1 && y[j] == 0) {
          den += 1;
          num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    auc_gap = std::max(auc_gap, std::abs(roc_auc(s, y) - num / den));
  }

  double lnc_gap = 0.0;
  const GraphInstance g = graph(7, {{0, 1}, {1, 2}, {3, 4}, {5, 6}, {2, 5}}, 3, 5);
  for (int c : {2, 3, 7}) {
    auto m = build_model({"Residual", "Parallel", "GAT", {"DC"}, {"SE"}, "Mini"}, ModelScale::preset("Desk"), 1,
                         {Task::kNodeClassification, 3, c});
    m.params["head.weight"].setZero();
    m.params["head.bias"].setZero();
    LossTargets t;
    for (int i = 0; i < 7; ++i) {
      t.labels.push_back(i % c);
      t.rows.push_back(i);
    }
    lnc_gap = std::max(lnc_gap, std::abs(loss_value(m, precompute(g, m), t) - std::log(static_cast<double>(c))));
  }

  const std::vector<double> x{0.1, 0.5, 0.2, 0.9, 0.3};
  std::vector<double> rev(x);
  for (double& v : rev) v = -v;
  const bool kt = ktau(x, x) == 1.0 && ktau(x, rev) == -1.0;
  return {auc_gap <= kAucTol && lnc_gap <= kLnCTol && kt,
          "auc gap " + fmt(auc_gap) + " over 200 sets, ln C gap " + fmt(lnc_gap) + ", ktau edge cases " +
              (kt ? "exact" : "wrong")};
}

// 8
Outcome protocol_round_trip() {
  const std::string echo = ECHO_WORKER_PATH;
  const fs::path dir = fs::temp_directory_path() / "egtas_acceptance_protocol";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << R"({"sampling": {"num_samples": 40}, "evaluator": {"command": ")" << echo
                                     << R"("}})";
  cli::CommonArgs args;
  args.config_path = (dir / "config.json").string();
  args.out_dir = dir;
  std::ostringstream sink;
  cli::cmd_gen_dataset(args, sink);
  cli::cmd_sample(args, sink);
  std::size_t exact = 0;
  const auto archive = cli::read_archive(dir / cli::artifact::kArchive);
  for (const auto& e : archive) {
    const auto& enc = e.record.encoding;
    exact += e.record.value == std::accumulate(enc.genes.begin(), enc.genes.end(), 0) / 30.0 && !e.record.diverged;
  }

  std::vector<cli::EvaluatorRequest> reqs;
  SeededRng rng(4);
  for (int i = 0; i < 30; ++i) {
    cli::EvaluatorRequest r;
    r.id = 1000 + 7 * i;
    r.encoding = sample_uniform(table(), rng);
    r.max_steps = 1;
    r.metric_name = "acc";
    reqs.push_back(r);
  }
  bool killed_ok = true;
  for (int k : {0, 1, 13, 29}) {
    const auto res = cli::external_evaluate(echo + " --die-after " + std::to_string(k), reqs);
    killed_ok = killed_ok && res.worker_failed;
    for (int i = 0; i < 30; ++i) killed_ok = killed_ok && res.responses[i].id == reqs[i].id &&
                                              res.responses[i].diverged == (i >= k);
  }
  fs::remove_all(dir);
  return {archive.size() == 40 && exact == 40 && killed_ok,
          std::to_string(exact) + "/40 archive values exact, killed-worker flags " + (killed_ok ? "precise" : "wrong")};
}

}  // namespace

int main() {
  run(1, "encoding completeness", 1.0, encoding_completeness);
  run(2, "gradient correctness", 600.0, gradient_correctness);
  run(3, "mask neutrality", 60.0, mask_neutrality);
  run(4, "surrogate fidelity", 60.0, surrogate_fidelity);
  run(5, "search optimality oracle", 30.0, search_optimality);
  run(6, "end-to-end desk pipeline", 1200.0, desk_pipeline);
  run(7, "metric oracles", 60.0, metric_oracles);
  run(8, "protocol round-trip", 60.0, protocol_round_trip);
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
