#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "egtas/graph.hpp"
#include "egtas/model.hpp"

namespace egtas {

/// Evaluation data: one labelled graph with split masks (node task) or a list of
/// labelled graphs with index splits (graph task).
struct Dataset {
  Task task = Task::kNodeClassification;
  std::vector<GraphInstance> graphs;
  std::vector<int> train, val, test;  // graph indices, graph task only
  int num_classes = 0;

  int feature_dim() const { return graphs.empty() ? 0 : graphs.front().feature_dim(); }
  /// Throws InvalidArgument if the splits or labels are inconsistent with the task.
  void validate() const;
};

struct SbmConfig {
  int communities = 3;
  int nodes_per_community = 20;
  double p_in = 0.3;
  double p_out = 0.02;
  int feature_dim = 8;
  double feature_noise = 0.5;
  std::uint64_t seed = 0;
  bool allow_unlearnable = false;  // permits p_out > p_in

  void validate() const;
};

struct GraphSetConfig {
  int num_graphs = 100;
  int min_nodes = 6;
  int max_nodes = 14;
  double edge_probability = 0.35;
  double triangle_density_threshold = 0.03;  // near the median density at p = 0.35
  std::uint64_t seed = 0;

  void validate() const;
};

/// Community graph; features are a noisy one-hot community indicator and masks are
/// a per-community 60/20/20 split.
GraphInstance generate_sbm(const SbmConfig& cfg);

/// Erdos-Renyi graphs labelled 1 iff triangles / C(n,3) exceeds the threshold.
std::vector<GraphInstance> generate_graph_set(const GraphSetConfig& cfg);

std::int64_t count_triangles(const GraphInstance& g);
int triangle_label(const GraphInstance& g, double threshold);

Dataset make_node_dataset(GraphInstance g);
/// Stratified 60/20/20 split of the graphs by label.
Dataset make_graph_dataset(std::vector<GraphInstance> graphs, std::uint64_t seed);

GraphInstance load_graph_json(const std::filesystem::path& path);
void save_graph_json(const GraphInstance& g, const std::filesystem::path& path);

/// A dataset file holds either a single graph object or {"graphs": [...]} with
/// optional "splits": {"train","val","test"}.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

}  // namespace egtas
