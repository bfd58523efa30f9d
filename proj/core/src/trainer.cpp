#include "egtas/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cfloat>
#include <cmath>
#include <numeric>

#include "egtas/error.hpp"
#include "egtas/metrics.hpp"
#include "egtas/rng.hpp"

namespace egtas {

void TrainConfig::validate() const {
  if (max_steps < 0) throw InvalidArgument("max_steps must be non-negative");
  if (warmup_steps < 0 || warmup_steps > max_steps) {
    throw InvalidArgument("warmup_steps must lie in [0, max_steps]");
  }
  if (learning_rate < 0) throw InvalidArgument("learning_rate must be non-negative");
  if (weight_decay < 0) throw InvalidArgument("weight_decay must be non-negative");
  if (batch_size < 1) throw InvalidArgument("batch_size must be positive");
  for (double r : {dropout.attention, dropout.ffn, dropout.gnn}) {
    if (r < 0 || r >= 1) throw InvalidArgument("dropout rates must lie in [0, 1)");
  }
}

double learning_rate_at(const TrainConfig& cfg, int step) {
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return cfg.learning_rate * static_cast<double>(step) / cfg.warmup_steps;
  }
  return cfg.learning_rate;
}

AdamW::AdamW(const ParameterSet& shape_like, double weight_decay, double beta1, double beta2,
             double eps)
    : m_(shape_like.zeros_like()),
      v_(shape_like.zeros_like()),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {}

void AdamW::step(ParameterSet& params, const ParameterSet& grads, double lr) {
  if (!params.same_shapes(grads) || !params.same_shapes(m_)) {
    throw InvalidArgument("gradient shapes do not match the parameters");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  for (auto& [name, p] : params) {
    const Matrix& g = grads.at(name);
    Matrix& m = m_[name];
    Matrix& v = v_[name];
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseAbs2();
    const Matrix update =
        (m / c1).array() / ((v / c2).array().sqrt() + eps_);
    p -= lr * (update + weight_decay_ * p);
  }
}

namespace {

struct PreparedData {
  std::vector<GraphContext> contexts;
};

PreparedData prepare(const GraphTransformerModel& model, const Dataset& data) {
  PreparedData out;
  out.contexts.reserve(data.graphs.size());
  for (const auto& g : data.graphs) out.contexts.push_back(precompute(g, model));
  return out;
}

std::vector<int> mask_rows(const std::vector<bool>& mask) {
  std::vector<int> rows;
  for (int i = 0; i < static_cast<int>(mask.size()); ++i)
    if (mask[i]) rows.push_back(i);
  return rows;
}

const std::vector<bool>& node_mask(const Dataset& data, Split split) {
  const SplitMasks& m = *data.graphs.front().split_masks;
  switch (split) {
    case Split::kTrain: return m.train;
    case Split::kVal: return m.val;
    case Split::kTest: return m.test;
  }
  return m.val;
}

const std::vector<int>& graph_split(const Dataset& data, Split split) {
  switch (split) {
    case Split::kTrain: return data.train;
    case Split::kVal: return data.val;
    case Split::kTest: return data.test;
  }
  return data.val;
}

LossTargets node_targets(const Dataset& data, Split split) {
  LossTargets t;
  t.task = Task::kNodeClassification;
  t.labels = *data.graphs.front().node_labels;
  t.rows = mask_rows(node_mask(data, split));
  return t;
}

LossTargets graph_targets(const GraphInstance& g) {
  LossTargets t;
  t.task = Task::kGraphClassification;
  t.graph_target = *g.graph_label;
  return t;
}

void accumulate(ParameterSet& into, const ParameterSet& add, double weight) {
  for (auto& [name, value] : into) value += weight * add.at(name);
}

}  // namespace

TrainOutcome train(GraphTransformerModel& model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  if (model.io.task != data.task) throw InvalidArgument("model and dataset disagree on the task");

  const PreparedData prep = prepare(model, data);
  AdamW opt(model.params, cfg.weight_decay);
  SeededRng dropout_rng(derive_seed(cfg.seed, hash_name("dropout")));
  SeededRng batch_rng(derive_seed(cfg.seed, hash_name("batches")));

  ForwardOptions fwd;
  fwd.training = true;
  fwd.dropout = cfg.dropout;
  fwd.rng = &dropout_rng;

  TrainOutcome outcome;
  const LossTargets nc_targets =
      data.task == Task::kNodeClassification ? node_targets(data, Split::kTrain) : LossTargets{};
  std::vector<int> order = data.train;
  std::size_t cursor = order.size();

  for (int step = 1; step <= cfg.max_steps; ++step) {
    LossAndGradients lg;
    try {
      if (data.task == Task::kNodeClassification) {
        lg = loss_and_gradients(model, prep.contexts.front(), nc_targets, fwd);
      } else {
        const auto batch = static_cast<std::size_t>(std::min<int>(cfg.batch_size, static_cast<int>(order.size())));
        lg.grads = model.params.zeros_like();
        for (std::size_t b = 0; b < batch; ++b) {
          if (cursor >= order.size()) {
            std::shuffle(order.begin(), order.end(), batch_rng.engine());
            cursor = 0;
          }
          const int gi = order[cursor++];
          const auto part = loss_and_gradients(model, prep.contexts[gi], graph_targets(data.graphs[gi]), fwd);
          lg.loss += part.loss / static_cast<double>(batch);
          accumulate(lg.grads, part.grads, 1.0 / static_cast<double>(batch));
        }
      }
    } catch (const NonFiniteError&) {
      outcome.diverged = true;
      outcome.diverged_step = step;
      return outcome;
    }
    if (!std::isfinite(lg.loss) || !lg.grads.all_finite()) {
      outcome.diverged = true;
      outcome.diverged_step = step;
      return outcome;
    }
    opt.step(model.params, lg.grads, learning_rate_at(cfg, step));
    outcome.final_loss = lg.loss;
    outcome.steps = step;
    if (!model.params.all_finite()) {
      outcome.diverged = true;
      outcome.diverged_step = step;
      return outcome;
    }
  }
  return outcome;
}

double dataset_loss(const GraphTransformerModel& model, const Dataset& data, Split split) {
  const PreparedData prep = prepare(model, data);
  if (data.task == Task::kNodeClassification) {
    return loss_value(model, prep.contexts.front(), node_targets(data, split));
  }
  const auto& idx = graph_split(data, split);
  if (idx.empty()) throw InvalidArgument("empty split");
  double total = 0.0;
  for (int gi : idx) total += loss_value(model, prep.contexts[gi], graph_targets(data.graphs[gi]));
  return total / static_cast<double>(idx.size());
}

bool metric_minimized(const std::string& metric_name) {
  if (metric_name == "mae") return true;
  if (metric_name == "acc" || metric_name == "auc") return false;
  throw UnknownOptionError("metric_name", metric_name);
}

double worst_value(const std::string& metric_name) {
  return metric_minimized(metric_name) ? DBL_MAX : 0.0;
}

std::string default_metric(const Dataset& data) {
  if (data.task == Task::kNodeClassification) return "acc";
  for (const auto& g : data.graphs)
    if (*g.graph_label != 0.0 && *g.graph_label != 1.0) return "mae";
  return "acc";
}

double evaluate_metric(const GraphTransformerModel& model, const Dataset& data,
                       const std::string& metric_name, Split split) {
  metric_minimized(metric_name);  // rejects unknown names
  const PreparedData prep = prepare(model, data);

  if (data.task == Task::kNodeClassification) {
    const auto& g = data.graphs.front();
    const Matrix logits = assemble_forward(model, prep.contexts.front()).output;
    const auto rows = mask_rows(node_mask(data, split));
    if (rows.empty()) throw InvalidArgument("empty evaluation split");
    std::vector<int> truth, predicted;
    std::vector<double> scores;
    for (int i : rows) {
      Eigen::Index arg = 0;
      logits.row(i).maxCoeff(&arg);
      predicted.push_back(static_cast<int>(arg));
      truth.push_back((*g.node_labels)[i]);
      if (logits.cols() == 2) scores.push_back(logits(i, 1) - logits(i, 0));
    }
    if (metric_name == "acc") return accuracy(predicted, truth);
    if (metric_name == "auc") {
      if (logits.cols() != 2) throw InvalidArgument("auc requires a binary task");
      return roc_auc(scores, truth);
    }
    std::vector<double> p(predicted.begin(), predicted.end()), t(truth.begin(), truth.end());
    return mean_absolute_error(p, t);
  }

  const auto& idx = graph_split(data, split);
  if (idx.empty()) throw InvalidArgument("empty evaluation split");
  std::vector<double> preds, targets;
  for (int gi : idx) {
    preds.push_back(assemble_forward(model, prep.contexts[gi]).output(0, 0));
    targets.push_back(*data.graphs[gi].graph_label);
  }
  if (metric_name == "mae") return mean_absolute_error(preds, targets);
  std::vector<int> labels;
  for (double t : targets) {
    if (t != 0.0 && t != 1.0) throw InvalidArgument(metric_name + " requires 0/1 graph labels");
    labels.push_back(static_cast<int>(t));
  }
  if (metric_name == "auc") return roc_auc(preds, labels);
  std::vector<int> predicted;
  for (double p : preds) predicted.push_back(p >= 0.5 ? 1 : 0);
  return accuracy(predicted, labels);
}

nlohmann::json to_json(const FitnessRecord& r) {
  return {{"encoding", r.encoding.genes}, {"metric_name", r.metric_name},
          {"value", r.value},             {"minimize", r.minimize},
          {"wall_time", r.wall_time},     {"seed", r.seed},
          {"diverged", r.diverged}};
}

FitnessRecord fitness_record_from_json(const nlohmann::json& j) {
  auto field = [&](const char* key) -> const nlohmann::json& {
    if (!j.is_object() || !j.contains(key)) throw SchemaError(key, "missing field");
    return j.at(key);
  };
  FitnessRecord r;
  try {
    const auto genes = field("encoding").get<std::vector<int>>();
    if (genes.size() != kNumGenes) throw SchemaError("encoding", "expected 6 genes");
    std::copy(genes.begin(), genes.end(), r.encoding.genes.begin());
    r.metric_name = field("metric_name").get<std::string>();
    r.value = field("value").get<double>();
    r.minimize = field("minimize").get<bool>();
    r.wall_time = j.value("wall_time", 0.0);
    r.seed = j.value("seed", std::uint64_t{0});
    r.diverged = j.value("diverged", false);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("record", e.what());
  }
  bool minimize = false;
  try {
    minimize = metric_minimized(r.metric_name);
  } catch (const UnknownOptionError&) {
    throw SchemaError("metric_name", "unknown metric '" + r.metric_name + "'");
  }
  if (r.minimize != minimize) throw SchemaError("minimize", "does not match metric_name");
  if (std::isnan(r.value) || r.value < 0 || (!minimize && r.value > 1)) {
    throw SchemaError("value", "out of range for " + r.metric_name);
  }
  return r;
}

FitnessRecord evaluate(const GraphTransformerModel& model, const ArchitectureEncoding& enc,
                       const Dataset& data, const std::string& metric_name) {
  FitnessRecord r;
  r.encoding = enc;
  r.metric_name = metric_name;
  r.minimize = metric_minimized(metric_name);
  r.value = evaluate_metric(model, data, metric_name, Split::kVal);
  return r;
}

GraphTransformerModel build_for_dataset(const ArchitectureEncoding& enc, const Dataset& data,
                                        const TrainConfig& cfg, const FitnessOptions& options,
                                        const OperationTable& table) {
  const ArchitectureSpec spec = decode(enc, table);
  const ModelScale scale = ModelScale::preset(options.scale_override.value_or(spec.scale));
  ModelIO io;
  io.task = data.task;
  io.feature_dim = data.feature_dim();
  io.output_dim = data.task == Task::kNodeClassification ? data.num_classes : 1;
  return build_model(spec, scale, cfg.seed, io, options.encoding);
}

FitnessRecord fitness(const ArchitectureEncoding& enc, const Dataset& data, const TrainConfig& cfg,
                      const FitnessOptions& options, const OperationTable& table) {
  const auto start = std::chrono::steady_clock::now();
  validate(enc, table);
  const std::string metric = options.metric_name.empty() ? default_metric(data) : options.metric_name;

  GraphTransformerModel model = build_for_dataset(enc, data, cfg, options, table);
  const TrainOutcome outcome = train(model, data, cfg);

  FitnessRecord r;
  if (outcome.diverged) {
    r.encoding = enc;
    r.metric_name = metric;
    r.minimize = metric_minimized(metric);
    r.value = worst_value(metric);
    r.diverged = true;
  } else {
    try {
      r = evaluate(model, enc, data, metric);
    } catch (const NonFiniteError&) {
      r.encoding = enc;
      r.metric_name = metric;
      r.minimize = metric_minimized(metric);
      r.value = worst_value(metric);
      r.diverged = true;
    }
  }
  r.seed = cfg.seed;
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  r.wall_time = std::max(elapsed.count(), 1e-9);
  return r;
}

}  // namespace egtas
