#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "egtas/datasets.hpp"
#include "egtas/evo_search.hpp"
#include "egtas/model.hpp"
#include "egtas/trainer.hpp"

namespace egtas::cli {

struct DatasetSection {
  std::string kind = "sbm";  // "sbm" or "graph_set"
  std::string path;          // empty: <run dir>/dataset.json
  SbmConfig sbm;
  GraphSetConfig graph_set;
};

struct SamplingSection {
  int num_samples = 20;
  std::string metric_name;  // empty: default for the dataset
  std::optional<std::string> scale_override = std::string("Desk");
  TrainConfig train;
};

struct SurrogateSection {
  int folds = 5;
  double holdout_fraction = 0.2;
  std::vector<std::string> kinds{"decision_tree", "random_forest", "gaussian_process"};
};

struct EvaluatorSection {
  std::string command;  // empty: in-process trainer
  int workers = 1;
  double timeout_factor = 10.0;
  double timeout_floor = 60.0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DatasetSection dataset;
  SamplingSection sampling;
  TrainConfig retrain;
  SurrogateSection surrogate;
  SearchConfig search;
  EncodingConfig encoding;
  EvaluatorSection evaluator;

  /// Sub-seeds left unset in the file follow the master seed.
  void apply_seed(std::uint64_t master);
  void validate() const;
};

/// Defaults, overlaid with the keys present in the file; unknown keys are errors.
RunConfig load_config(const std::filesystem::path& path);
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

nlohmann::json to_json(const TrainConfig& t);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

nlohmann::json to_json(const EncodingConfig& e);
EncodingConfig encoding_config_from_json(const nlohmann::json& j, EncodingConfig base = {});

FitnessOptions fitness_options(const RunConfig& cfg);

}  // namespace egtas::cli
