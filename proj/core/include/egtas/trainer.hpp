#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "egtas/datasets.hpp"
#include "egtas/model.hpp"
#include "egtas/search_space.hpp"

namespace egtas {

struct TrainConfig {
  int max_steps = 300;
  int warmup_steps = 30;
  double learning_rate = 1e-2;
  double weight_decay = 1e-5;
  int batch_size = 8;  // graph task only
  DropoutRates dropout{0.1, 0.1, 0.1};
  std::uint64_t seed = 0;

  void validate() const;
};

/// lr_peak * step / warmup for 1 <= step <= warmup, lr_peak afterwards.
double learning_rate_at(const TrainConfig& cfg, int step);

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(const ParameterSet& shape_like, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  /// One update at the given learning rate; `grads` must match the parameter shapes.
  void step(ParameterSet& params, const ParameterSet& grads, double lr);
  int steps_taken() const { return t_; }

 private:
  ParameterSet m_, v_;
  double weight_decay_, beta1_, beta2_, eps_;
  int t_ = 0;
};

struct TrainOutcome {
  bool diverged = false;
  int diverged_step = -1;  // 1-based step whose loss was non-finite
  double final_loss = 0.0;
  int steps = 0;
};

/// Trains `model` in place; parameters are those after the last completed step.
TrainOutcome train(GraphTransformerModel& model, const Dataset& data, const TrainConfig& cfg);

enum class Split { kTrain, kVal, kTest };

/// Mean training loss without dropout.
double dataset_loss(const GraphTransformerModel& model, const Dataset& data, Split split);

/// "acc", "auc" or "mae" on the chosen split (validation by default).
double evaluate_metric(const GraphTransformerModel& model, const Dataset& data,
                       const std::string& metric_name, Split split = Split::kVal);

bool metric_minimized(const std::string& metric_name);
/// 0 for acc/auc, the largest finite double for mae.
double worst_value(const std::string& metric_name);
/// "acc" for node tasks, "acc" for graph tasks with 0/1 labels, "mae" otherwise.
std::string default_metric(const Dataset& data);

struct FitnessRecord {
  ArchitectureEncoding encoding;
  std::string metric_name = "acc";
  double value = 0.0;
  bool minimize = false;
  double wall_time = 0.0;
  std::uint64_t seed = 0;
  bool diverged = false;
};

nlohmann::json to_json(const FitnessRecord& r);
/// Throws SchemaError naming the bad field.
FitnessRecord fitness_record_from_json(const nlohmann::json& j);

/// Builds a trained model's validation record.
FitnessRecord evaluate(const GraphTransformerModel& model, const ArchitectureEncoding& enc,
                       const Dataset& data, const std::string& metric_name);

struct FitnessOptions {
  std::string metric_name;                  // empty picks default_metric()
  std::optional<std::string> scale_override;  // replaces the decoded scale preset
  EncodingConfig encoding;
};

/// decode, build (seeded by cfg.seed), train, evaluate. Divergence yields the worst value
/// with the diverged flag set.
FitnessRecord fitness(const ArchitectureEncoding& enc, const Dataset& data, const TrainConfig& cfg,
                      const FitnessOptions& options = {},
                      const OperationTable& table = OperationTable::standard());

/// Model construction shared by fitness() and retraining.
GraphTransformerModel build_for_dataset(const ArchitectureEncoding& enc, const Dataset& data,
                                        const TrainConfig& cfg, const FitnessOptions& options,
                                        const OperationTable& table);

}  // namespace egtas
