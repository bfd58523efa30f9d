#include "egtas/evo_search.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "egtas/error.hpp"

namespace egtas {

void SearchConfig::validate() const {
  if (population_size < 2 || population_size % 2 != 0) {
    throw InvalidArgument("population_size must be even and at least 2");
  }
  if (generations < 0) throw InvalidArgument("generations must be non-negative");
  if (crossover_prob < 0 || crossover_prob > 1) throw InvalidArgument("crossover_prob must lie in [0, 1]");
  if (mutation_prob < 0 || mutation_prob > 1) throw InvalidArgument("mutation_prob must lie in [0, 1]");
  if (mutation_eta < 0) throw InvalidArgument("mutation_eta must be non-negative");
}

nlohmann::json to_json(const GenerationSummary& g) {
  return {{"generation", g.generation},
          {"best_pred", g.best_pred},
          {"mean_pred", g.mean_pred},
          {"best_encoding", g.best.genes}};
}

namespace {

Individual score_one(SearchState& state, const Scorer& score, const ArchitectureEncoding& enc) {
  Individual ind;
  ind.encoding = enc;
  ind.predicted = score(enc);
  ind.generation = state.generation;
  ind.audit_index = static_cast<int>(state.audit.size());
  state.audit.push_back(ind);
  return ind;
}

/// Strict weak order: better prediction first, then earlier generation, then lower audit index.
bool ranks_before(const Individual& a, const Individual& b, bool minimize) {
  if (a.predicted != b.predicted) return minimize ? a.predicted < b.predicted : a.predicted > b.predicted;
  if (a.generation != b.generation) return a.generation < b.generation;
  return a.audit_index < b.audit_index;
}

const Individual& best_of(const std::vector<Individual>& pop, bool minimize) {
  return *std::min_element(pop.begin(), pop.end(),
                           [&](const Individual& a, const Individual& b) { return ranks_before(a, b, minimize); });
}

GenerationSummary summarize(const SearchState& state) {
  GenerationSummary s;
  s.generation = state.generation;
  const Individual& b = best_of(state.population, state.minimize);
  s.best_pred = b.predicted;
  s.best = b.encoding;
  double sum = 0.0;
  for (const auto& ind : state.population) sum += ind.predicted;
  s.mean_pred = sum / static_cast<double>(state.population.size());
  return s;
}

}  // namespace

SearchState init_population(const SearchConfig& cfg, const OperationTable& table, const Scorer& score,
                            bool minimize) {
  cfg.validate();
  SearchState state;
  state.minimize = minimize;
  state.rng = SeededRng(cfg.seed);
  for (int i = 0; i < cfg.population_size; ++i) {
    const ArchitectureEncoding enc = sample_uniform(table, state.rng);
    state.population.push_back(score_one(state, score, enc));
  }
  state.best_ever = best_of(state.population, minimize);
  return state;
}

std::pair<ArchitectureEncoding, ArchitectureEncoding> two_point_crossover(
    const ArchitectureEncoding& p1, const ArchitectureEncoding& p2, std::pair<int, int> cut) {
  const auto [i, j] = cut;
  if (i < 0 || j > static_cast<int>(kNumGenes) || i >= j) {
    throw InvalidArgument("crossover cuts must satisfy 0 <= i < j <= 6");
  }
  ArchitectureEncoding c1 = p1, c2 = p2;
  for (int g = i; g < j; ++g) std::swap(c1.genes[g], c2.genes[g]);
  return {c1, c2};
}

std::pair<int, int> draw_cuts(SeededRng& rng) {
  constexpr int n = static_cast<int>(kNumGenes);
  int k = rng.uniform_int(n * (n + 1) / 2);
  for (int i = 0; i < n; ++i) {
    const int row = n - i;  // choices of j for this i
    if (k < row) return {i, i + 1 + k};
    k -= row;
  }
  return {0, n};
}

ArchitectureEncoding polynomial_mutation(const ArchitectureEncoding& enc,
                                         const std::array<int, kNumGenes>& bounds, double p_m,
                                         double eta, SeededRng& rng) {
  ArchitectureEncoding out = enc;
  for (std::size_t g = 0; g < kNumGenes; ++g) {
    if (!rng.bernoulli(p_m)) continue;
    const double lo = 0.0, hi = static_cast<double>(bounds[g] - 1);
    if (hi <= lo) continue;
    const double y = std::clamp(static_cast<double>(enc[g]), lo, hi);
    const double d1 = (y - lo) / (hi - lo), d2 = (hi - y) / (hi - lo);
    const double u = rng.uniform();
    const double power = 1.0 / (eta + 1.0);
    double dq = 0.0;
    if (u < 0.5) {
      const double v = 2.0 * u + (1.0 - 2.0 * u) * std::pow(1.0 - d1, eta + 1.0);
      dq = std::pow(v, power) - 1.0;
    } else {
      const double v = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * std::pow(1.0 - d2, eta + 1.0);
      dq = 1.0 - std::pow(v, power);
    }
    const double mutated = std::clamp(y + dq * (hi - lo), lo, hi);
    out[g] = static_cast<int>(std::lround(mutated));
  }
  return out;
}

std::vector<Individual> environmental_selection(const std::vector<Individual>& parents,
                                                const std::vector<Individual>& offspring, int keep,
                                                bool minimize) {
  if (keep < 0 || keep > static_cast<int>(parents.size() + offspring.size())) {
    throw InvalidArgument("bad survivor count");
  }
  // Offspring that repeat an encoding already in the pool are only used to fill up.
  std::vector<Individual> pool(parents), repeats;
  std::set<ArchitectureEncoding> present;
  for (const auto& p : parents) present.insert(p.encoding);
  for (const auto& o : offspring) (present.insert(o.encoding).second ? pool : repeats).push_back(o);
  for (std::size_t k = 0; pool.size() < static_cast<std::size_t>(keep); ++k) pool.push_back(repeats[k]);
  std::stable_sort(pool.begin(), pool.end(),
                   [&](const Individual& a, const Individual& b) { return ranks_before(a, b, minimize); });
  pool.resize(static_cast<std::size_t>(keep));
  return pool;
}

std::vector<ArchitectureEncoding> reproduce(const std::vector<Individual>& parents, const SearchConfig& cfg,
                                            const OperationTable& table, SeededRng& rng) {
  std::vector<ArchitectureEncoding> mating;
  for (const auto& p : parents) mating.push_back(p.encoding);
  std::shuffle(mating.begin(), mating.end(), rng.engine());
  const auto bounds = table.bounds();
  std::vector<ArchitectureEncoding> children;
  for (std::size_t k = 0; k + 1 < mating.size(); k += 2) {
    ArchitectureEncoding c1 = mating[k], c2 = mating[k + 1];
    if (rng.bernoulli(cfg.crossover_prob)) std::tie(c1, c2) = two_point_crossover(c1, c2, draw_cuts(rng));
    children.push_back(polynomial_mutation(c1, bounds, cfg.mutation_prob, cfg.mutation_eta, rng));
    children.push_back(polynomial_mutation(c2, bounds, cfg.mutation_prob, cfg.mutation_eta, rng));
  }
  return children;
}

SearchResult run_search(const SearchConfig& cfg, const OperationTable& table, const Scorer& score,
                        bool minimize) {
  SearchResult result;
  SearchState state = init_population(cfg, table, score, minimize);
  for (int t = 1; t <= cfg.generations; ++t) {
    state.generation = t;
    std::vector<Individual> offspring;
    for (const auto& child : reproduce(state.population, cfg, table, state.rng)) {
      offspring.push_back(score_one(state, score, child));
    }
    state.population = cfg.elitism
                           ? environmental_selection(state.population, offspring, cfg.population_size, minimize)
                           : offspring;
    const Individual& gen_best = best_of(state.population, minimize);
    if (ranks_before(gen_best, state.best_ever, minimize)) state.best_ever = gen_best;
    result.history.push_back(summarize(state));
  }
  result.best = best_of(state.population, minimize);
  result.state = std::move(state);
  return result;
}

SearchResult run_search(const SearchConfig& cfg, const OperationTable& table, const SurrogateModel& surrogate) {
  return run_search(
      cfg, table, [&](const ArchitectureEncoding& e) { return surrogate.predict(e); }, surrogate.minimize);
}

FitnessRecord retrain_best(const ArchitectureEncoding& best, const Dataset& data, const TrainConfig& retrain_cfg,
                           const TrainConfig& sampling_cfg, const FitnessOptions& options,
                           const OperationTable& table) {
  if (retrain_cfg.max_steps < sampling_cfg.max_steps) {
    throw InvalidArgument("retraining budget is below the sampling budget");
  }
  return fitness(best, data, retrain_cfg, options, table);
}

}  // namespace egtas
