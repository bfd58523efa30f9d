#pragma once

#include <cstdint>
#include <functional>
#include <nlohmann/json.hpp>
#include <utility>
#include <vector>

#include "egtas/rng.hpp"
#include "egtas/search_space.hpp"
#include "egtas/surrogate.hpp"
#include "egtas/trainer.hpp"

namespace egtas {

struct SearchConfig {
  int population_size = 20;
  int generations = 30;
  double crossover_prob = 0.7;
  double mutation_prob = 1.0 / 6.0;
  double mutation_eta = 20.0;
  std::uint64_t seed = 0;
  bool elitism = true;  // false: offspring replace parents outright

  void validate() const;
};

struct Individual {
  ArchitectureEncoding encoding;
  double predicted = 0.0;
  int generation = 0;
  int audit_index = 0;
};

/// Predicted metric in raw units; the search applies the direction itself.
using Scorer = std::function<double(const ArchitectureEncoding&)>;

struct SearchState {
  int generation = 0;
  bool minimize = false;
  std::vector<Individual> population;
  Individual best_ever;
  SeededRng rng;
  std::vector<Individual> audit;  // every scored individual, in scoring order

  /// True when a is strictly better than b under the search direction.
  bool better(double a, double b) const { return minimize ? a < b : a > b; }
};

struct GenerationSummary {
  int generation = 0;
  double best_pred = 0.0;
  double mean_pred = 0.0;
  ArchitectureEncoding best;
};

nlohmann::json to_json(const GenerationSummary& g);

struct SearchResult {
  Individual best;
  SearchState state;
  std::vector<GenerationSummary> history;  // one entry per generation
};

SearchState init_population(const SearchConfig& cfg, const OperationTable& table,
                            const Scorer& score, bool minimize);

/// Swaps genes in [cut.first, cut.second); throws unless 0 <= first < second <= 6.
std::pair<ArchitectureEncoding, ArchitectureEncoding> two_point_crossover(
    const ArchitectureEncoding& p1, const ArchitectureEncoding& p2, std::pair<int, int> cut);

/// Uniform draw over the 21 ordered cut pairs.
std::pair<int, int> draw_cuts(SeededRng& rng);

/// Bounded polynomial mutation per gene, then round and clamp.
ArchitectureEncoding polynomial_mutation(const ArchitectureEncoding& enc,
                                         const std::array<int, kNumGenes>& bounds, double p_m,
                                         double eta, SeededRng& rng);

/// mu+lambda truncation: best `keep` of the merged pool, ties by (generation, audit index).
/// Offspring repeating an encoding already in the pool only fill remaining slots.
std::vector<Individual> environmental_selection(const std::vector<Individual>& parents,
                                                const std::vector<Individual>& offspring,
                                                int keep, bool minimize);

/// Shuffle-and-pair crossover followed by mutation; unscored children.
std::vector<ArchitectureEncoding> reproduce(const std::vector<Individual>& parents,
                                            const SearchConfig& cfg, const OperationTable& table,
                                            SeededRng& rng);

SearchResult run_search(const SearchConfig& cfg, const OperationTable& table, const Scorer& score,
                        bool minimize);
SearchResult run_search(const SearchConfig& cfg, const OperationTable& table,
                        const SurrogateModel& surrogate);

/// Full training of the chosen encoding; throws if the retraining budget is below the
/// sampling budget.
FitnessRecord retrain_best(const ArchitectureEncoding& best, const Dataset& data,
                           const TrainConfig& retrain_cfg, const TrainConfig& sampling_cfg,
                           const FitnessOptions& options = {},
                           const OperationTable& table = OperationTable::standard());

}  // namespace egtas
