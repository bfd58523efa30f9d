#include "egtas_cli/config.hpp"

#include <fstream>
#include <set>

#include "egtas/error.hpp"

namespace egtas::cli {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw SchemaError(section, "expected an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw SchemaError(section + (section.empty() ? "" : ".") + it.key(), "unknown key");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(section + "." + key, e.what());
  }
}

}  // namespace

json to_json(const TrainConfig& t) {
  return {{"max_steps", t.max_steps},
          {"warmup_steps", t.warmup_steps},
          {"learning_rate", t.learning_rate},
          {"weight_decay", t.weight_decay},
          {"batch_size", t.batch_size},
          {"dropout", {{"attention", t.dropout.attention}, {"ffn", t.dropout.ffn}, {"gnn", t.dropout.gnn}}},
          {"seed", t.seed}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig t) {
  const std::string s = "train";
  reject_unknown(j, s, {"max_steps", "warmup_steps", "learning_rate", "weight_decay", "batch_size", "dropout", "seed"});
  read(j, "max_steps", t.max_steps, s);
  read(j, "warmup_steps", t.warmup_steps, s);
  read(j, "learning_rate", t.learning_rate, s);
  read(j, "weight_decay", t.weight_decay, s);
  read(j, "batch_size", t.batch_size, s);
  read(j, "seed", t.seed, s);
  if (j.contains("dropout")) {
    const json& d = j.at("dropout");
    reject_unknown(d, "train.dropout", {"attention", "ffn", "gnn"});
    read(d, "attention", t.dropout.attention, "train.dropout");
    read(d, "ffn", t.dropout.ffn, "train.dropout");
    read(d, "gnn", t.dropout.gnn, "train.dropout");
  }
  return t;
}

json to_json(const EncodingConfig& e) {
  return {{"k_le", e.k_le},
          {"k_svd", e.k_svd},
          {"mask_threshold", e.mask_threshold},
          {"gcnii_alpha", e.gcnii_alpha},
          {"max_distance_bucket", e.max_distance_bucket},
          {"max_degree", e.max_degree},
          {"max_common_neighbors", e.max_common_neighbors},
          {"pem_dim", e.pem_dim},
          {"gat_negative_slope", e.gat_negative_slope},
          {"gin_eps", e.gin_eps}};
}

EncodingConfig encoding_config_from_json(const json& s, EncodingConfig o) {
  reject_unknown(s, "encoding", {"k_le", "k_svd", "mask_threshold", "gcnii_alpha", "max_distance_bucket",
                                 "max_degree", "max_common_neighbors", "pem_dim", "gat_negative_slope",
                                 "gin_eps"});
  read(s, "k_le", o.k_le, "encoding");
  read(s, "k_svd", o.k_svd, "encoding");
  read(s, "mask_threshold", o.mask_threshold, "encoding");
  read(s, "gcnii_alpha", o.gcnii_alpha, "encoding");
  read(s, "max_distance_bucket", o.max_distance_bucket, "encoding");
  read(s, "max_degree", o.max_degree, "encoding");
  read(s, "max_common_neighbors", o.max_common_neighbors, "encoding");
  read(s, "pem_dim", o.pem_dim, "encoding");
  read(s, "gat_negative_slope", o.gat_negative_slope, "encoding");
  read(s, "gin_eps", o.gin_eps, "encoding");
  return o;
}

namespace {

struct SeedFlags {
  bool sbm = false, graph_set = false, sampling = false, retrain = false, search = false;
};

}  // namespace

RunConfig config_from_json(const json& j) {
  RunConfig c;
  c.retrain.max_steps = 600;
  c.retrain.warmup_steps = 60;
  reject_unknown(j, "", {"seed", "dataset", "sampling", "retrain", "surrogate", "search", "encoding", "evaluator", "comment"});
  read(j, "seed", c.seed, "");

  SeedFlags explicit_seed;
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    reject_unknown(d, "dataset", {"kind", "path", "sbm", "graph_set"});
    read(d, "kind", c.dataset.kind, "dataset");
    read(d, "path", c.dataset.path, "dataset");
    if (d.contains("sbm")) {
      const json& s = d["sbm"];
      reject_unknown(s, "dataset.sbm", {"communities", "nodes_per_community", "p_in", "p_out", "feature_dim",
                                        "feature_noise", "seed", "allow_unlearnable"});
      auto& o = c.dataset.sbm;
      read(s, "communities", o.communities, "dataset.sbm");
      read(s, "nodes_per_community", o.nodes_per_community, "dataset.sbm");
      read(s, "p_in", o.p_in, "dataset.sbm");
      read(s, "p_out", o.p_out, "dataset.sbm");
      read(s, "feature_dim", o.feature_dim, "dataset.sbm");
      read(s, "feature_noise", o.feature_noise, "dataset.sbm");
      read(s, "allow_unlearnable", o.allow_unlearnable, "dataset.sbm");
      explicit_seed.sbm = s.contains("seed");
      read(s, "seed", o.seed, "dataset.sbm");
    }
    if (d.contains("graph_set")) {
      const json& s = d["graph_set"];
      reject_unknown(s, "dataset.graph_set", {"num_graphs", "min_nodes", "max_nodes", "edge_probability",
                                              "triangle_density_threshold", "seed"});
      auto& o = c.dataset.graph_set;
      read(s, "num_graphs", o.num_graphs, "dataset.graph_set");
      read(s, "min_nodes", o.min_nodes, "dataset.graph_set");
      read(s, "max_nodes", o.max_nodes, "dataset.graph_set");
      read(s, "edge_probability", o.edge_probability, "dataset.graph_set");
      read(s, "triangle_density_threshold", o.triangle_density_threshold, "dataset.graph_set");
      explicit_seed.graph_set = s.contains("seed");
      read(s, "seed", o.seed, "dataset.graph_set");
    }
  }
  if (j.contains("sampling")) {
    const json& s = j["sampling"];
    reject_unknown(s, "sampling", {"num_samples", "metric_name", "scale_override", "train"});
    read(s, "num_samples", c.sampling.num_samples, "sampling");
    read(s, "metric_name", c.sampling.metric_name, "sampling");
    if (s.contains("scale_override")) {
      if (s["scale_override"].is_null()) c.sampling.scale_override.reset();
      else c.sampling.scale_override = s["scale_override"].get<std::string>();
    }
    if (s.contains("train")) {
      explicit_seed.sampling = s["train"].contains("seed");
      c.sampling.train = train_config_from_json(s["train"], c.sampling.train);
    }
  }
  if (j.contains("retrain")) {
    explicit_seed.retrain = j["retrain"].contains("seed");
    c.retrain = train_config_from_json(j["retrain"], c.retrain);
  }
  if (j.contains("surrogate")) {
    const json& s = j["surrogate"];
    reject_unknown(s, "surrogate", {"folds", "holdout_fraction", "kinds"});
    read(s, "folds", c.surrogate.folds, "surrogate");
    read(s, "holdout_fraction", c.surrogate.holdout_fraction, "surrogate");
    read(s, "kinds", c.surrogate.kinds, "surrogate");
  }
  if (j.contains("search")) {
    const json& s = j["search"];
    reject_unknown(s, "search", {"population_size", "generations", "crossover_prob", "mutation_prob",
                                 "mutation_eta", "seed", "elitism"});
    auto& o = c.search;
    read(s, "population_size", o.population_size, "search");
    read(s, "generations", o.generations, "search");
    read(s, "crossover_prob", o.crossover_prob, "search");
    read(s, "mutation_prob", o.mutation_prob, "search");
    read(s, "mutation_eta", o.mutation_eta, "search");
    read(s, "elitism", o.elitism, "search");
    explicit_seed.search = s.contains("seed");
    read(s, "seed", o.seed, "search");
  }
  if (j.contains("encoding")) c.encoding = encoding_config_from_json(j["encoding"], c.encoding);
  if (j.contains("evaluator")) {
    const json& s = j["evaluator"];
    reject_unknown(s, "evaluator", {"command", "workers", "timeout_factor", "timeout_floor"});
    read(s, "command", c.evaluator.command, "evaluator");
    read(s, "workers", c.evaluator.workers, "evaluator");
    read(s, "timeout_factor", c.evaluator.timeout_factor, "evaluator");
    read(s, "timeout_floor", c.evaluator.timeout_floor, "evaluator");
  }

  // Seeds absent from the file follow the master seed; remember which were explicit.
  if (!explicit_seed.sbm) c.dataset.sbm.seed = c.seed;
  if (!explicit_seed.graph_set) c.dataset.graph_set.seed = c.seed;
  if (!explicit_seed.sampling) c.sampling.train.seed = c.seed;
  if (!explicit_seed.retrain) c.retrain.seed = c.seed;
  if (!explicit_seed.search) c.search.seed = c.seed;
  return c;
}

void RunConfig::apply_seed(std::uint64_t master) {
  seed = master;
  dataset.sbm.seed = master;
  dataset.graph_set.seed = master;
  sampling.train.seed = master;
  retrain.seed = master;
  search.seed = master;
}

void RunConfig::validate() const {
  if (dataset.kind != "sbm" && dataset.kind != "graph_set") throw UnknownOptionError("dataset.kind", dataset.kind);
  dataset.sbm.validate();
  dataset.graph_set.validate();
  if (sampling.num_samples < 0) throw InvalidArgument("sampling.num_samples must be non-negative");
  if (!sampling.metric_name.empty()) metric_minimized(sampling.metric_name);
  if (sampling.scale_override) ModelScale::preset(*sampling.scale_override);
  sampling.train.validate();
  retrain.validate();
  if (retrain.max_steps < sampling.train.max_steps) {
    throw InvalidArgument("retrain.max_steps must be at least sampling.train.max_steps");
  }
  if (surrogate.folds < 2) throw InvalidArgument("surrogate.folds must be at least 2");
  if (surrogate.holdout_fraction < 0 || surrogate.holdout_fraction >= 1) {
    throw InvalidArgument("surrogate.holdout_fraction must lie in [0, 1)");
  }
  if (surrogate.kinds.empty()) throw InvalidArgument("surrogate.kinds is empty");
  for (const auto& k : surrogate.kinds) parse_kind(k);
  search.validate();
  if (evaluator.workers < 1) throw InvalidArgument("evaluator.workers must be positive");
  if (evaluator.timeout_factor <= 0 || evaluator.timeout_floor <= 0) {
    throw InvalidArgument("evaluator timeouts must be positive");
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw SchemaError("$", e.what());
  }
  return config_from_json(j);
}

json to_json(const RunConfig& c) {
  const auto& sbm = c.dataset.sbm;
  const auto& gs = c.dataset.graph_set;
  return {
      {"seed", c.seed},
      {"dataset",
       {{"kind", c.dataset.kind},
        {"path", c.dataset.path},
        {"sbm",
         {{"communities", sbm.communities},
          {"nodes_per_community", sbm.nodes_per_community},
          {"p_in", sbm.p_in},
          {"p_out", sbm.p_out},
          {"feature_dim", sbm.feature_dim},
          {"feature_noise", sbm.feature_noise},
          {"allow_unlearnable", sbm.allow_unlearnable},
          {"seed", sbm.seed}}},
        {"graph_set",
         {{"num_graphs", gs.num_graphs},
          {"min_nodes", gs.min_nodes},
          {"max_nodes", gs.max_nodes},
          {"edge_probability", gs.edge_probability},
          {"triangle_density_threshold", gs.triangle_density_threshold},
          {"seed", gs.seed}}}}},
      {"sampling",
       {{"num_samples", c.sampling.num_samples},
        {"metric_name", c.sampling.metric_name},
        {"scale_override", c.sampling.scale_override ? json(*c.sampling.scale_override) : json(nullptr)},
        {"train", to_json(c.sampling.train)}}},
      {"retrain", to_json(c.retrain)},
      {"surrogate",
       {{"folds", c.surrogate.folds}, {"holdout_fraction", c.surrogate.holdout_fraction}, {"kinds", c.surrogate.kinds}}},
      {"search",
       {{"population_size", c.search.population_size},
        {"generations", c.search.generations},
        {"crossover_prob", c.search.crossover_prob},
        {"mutation_prob", c.search.mutation_prob},
        {"mutation_eta", c.search.mutation_eta},
        {"elitism", c.search.elitism},
        {"seed", c.search.seed}}},
      {"encoding", to_json(c.encoding)},
      {"evaluator",
       {{"command", c.evaluator.command},
        {"workers", c.evaluator.workers},
        {"timeout_factor", c.evaluator.timeout_factor},
        {"timeout_floor", c.evaluator.timeout_floor}}}};
}

FitnessOptions fitness_options(const RunConfig& cfg) {
  FitnessOptions o;
  o.metric_name = cfg.sampling.metric_name;
  o.scale_override = cfg.sampling.scale_override;
  o.encoding = cfg.encoding;
  return o;
}

}  // namespace egtas::cli
