#include "egtas/datasets.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>

#include "egtas/error.hpp"
#include "egtas/rng.hpp"

namespace egtas {

using nlohmann::json;

void Dataset::validate() const {
  if (graphs.empty()) throw InvalidArgument("dataset has no graphs");
  for (const auto& g : graphs) g.validate();
  const int d = feature_dim();
  for (const auto& g : graphs)
    if (g.feature_dim() != d) throw InvalidArgument("graphs disagree on feature width");
  if (task == Task::kNodeClassification) {
    if (graphs.size() != 1) throw InvalidArgument("node task expects exactly one graph");
    const auto& g = graphs.front();
    if (!g.node_labels || !g.split_masks) throw InvalidArgument("node task needs labels and masks");
    for (int y : *g.node_labels)
      if (y < 0 || y >= num_classes) throw InvalidArgument("node label out of range");
  } else {
    for (const auto& g : graphs)
      if (!g.graph_label) throw InvalidArgument("graph task needs a label on every graph");
    for (const auto* split : {&train, &val, &test})
      for (int i : *split)
        if (i < 0 || i >= static_cast<int>(graphs.size())) throw InvalidArgument("split index out of range");
    if (train.empty() || val.empty()) throw InvalidArgument("graph task needs train and val graphs");
  }
}

void SbmConfig::validate() const {
  if (communities < 1 || nodes_per_community < 1) throw InvalidArgument("sbm: empty community");
  if (feature_dim < communities) throw InvalidArgument("sbm: feature_dim must cover the one-hot");
  if (p_in < 0 || p_in > 1 || p_out < 0 || p_out > 1) throw InvalidArgument("sbm: probability range");
  if (!allow_unlearnable && p_out > p_in) throw InvalidArgument("sbm: p_out > p_in");
  if (feature_noise < 0) throw InvalidArgument("sbm: negative noise");
}

void GraphSetConfig::validate() const {
  if (num_graphs < 1 || min_nodes < 1 || max_nodes < min_nodes) {
    throw InvalidArgument("graph set: bad size range");
  }
  if (edge_probability < 0 || edge_probability > 1) throw InvalidArgument("graph set: probability range");
}

namespace {

/// First 60% train, next 20% val, rest test, per group.
void split_group(std::vector<int> members, SeededRng& rng, std::vector<int>& train,
                 std::vector<int>& val, std::vector<int>& test) {
  std::shuffle(members.begin(), members.end(), rng.engine());
  const auto m = static_cast<int>(members.size());
  int n_train = static_cast<int>(std::lround(0.6 * m));
  int n_val = static_cast<int>(std::lround(0.2 * m));
  // every split gets a member whenever the group can cover all three
  if (m >= 3) {
    n_val = std::max(n_val, 1);
    n_train = std::clamp(n_train, 1, m - n_val - 1);
  }
  for (int i = 0; i < m; ++i) {
    if (i < n_train) train.push_back(members[i]);
    else if (i < n_train + n_val) val.push_back(members[i]);
    else test.push_back(members[i]);
  }
}

}  // namespace

GraphInstance generate_sbm(const SbmConfig& cfg) {
  cfg.validate();
  SeededRng rng(cfg.seed);
  GraphInstance g;
  g.n = cfg.communities * cfg.nodes_per_community;
  std::vector<int> labels(static_cast<std::size_t>(g.n));
  for (int i = 0; i < g.n; ++i) labels[i] = i / cfg.nodes_per_community;
  for (int i = 0; i < g.n; ++i)
    for (int j = i + 1; j < g.n; ++j)
      if (rng.bernoulli(labels[i] == labels[j] ? cfg.p_in : cfg.p_out)) g.edges.emplace_back(i, j);

  g.features = Matrix::Zero(g.n, cfg.feature_dim);
  for (int i = 0; i < g.n; ++i) {
    for (int c = 0; c < cfg.feature_dim; ++c) {
      const double noise = cfg.feature_noise > 0 ? rng.normal(0.0, cfg.feature_noise) : 0.0;
      g.features(i, c) = (c == labels[i] ? 1.0 : 0.0) + noise;
    }
  }

  SplitMasks masks{std::vector<bool>(g.n, false), std::vector<bool>(g.n, false),
                   std::vector<bool>(g.n, false)};
  for (int c = 0; c < cfg.communities; ++c) {
    std::vector<int> members(static_cast<std::size_t>(cfg.nodes_per_community));
    std::iota(members.begin(), members.end(), c * cfg.nodes_per_community);
    std::vector<int> tr, va, te;
    split_group(members, rng, tr, va, te);
    for (int i : tr) masks.train[i] = true;
    for (int i : va) masks.val[i] = true;
    for (int i : te) masks.test[i] = true;
  }
  g.node_labels = std::move(labels);
  g.split_masks = std::move(masks);
  return g;
}

std::int64_t count_triangles(const GraphInstance& g) {
  const auto adj = g.neighbors();
  std::vector<std::set<int>> sets(adj.size());
  for (std::size_t i = 0; i < adj.size(); ++i) sets[i].insert(adj[i].begin(), adj[i].end());
  std::int64_t count = 0;
  for (int u = 0; u < g.n; ++u)
    for (int v : adj[u])
      if (v > u)
        for (int w : adj[v])
          if (w > v && sets[u].count(w)) ++count;
  return count;
}

int triangle_label(const GraphInstance& g, double threshold) {
  if (g.n < 3) return 0;
  const double n = g.n;
  const double triples = n * (n - 1) * (n - 2) / 6.0;
  return static_cast<double>(count_triangles(g)) / triples > threshold ? 1 : 0;
}

std::vector<GraphInstance> generate_graph_set(const GraphSetConfig& cfg) {
  cfg.validate();
  SeededRng rng(cfg.seed);
  std::vector<GraphInstance> out;
  out.reserve(static_cast<std::size_t>(cfg.num_graphs));
  for (int k = 0; k < cfg.num_graphs; ++k) {
    GraphInstance g;
    g.n = cfg.min_nodes + rng.uniform_int(cfg.max_nodes - cfg.min_nodes + 1);
    for (int i = 0; i < g.n; ++i)
      for (int j = i + 1; j < g.n; ++j)
        if (rng.bernoulli(cfg.edge_probability)) g.edges.emplace_back(i, j);
    const auto deg = degree_vectors(g);
    g.features = Matrix::Zero(g.n, cfg.max_nodes);
    for (int i = 0; i < g.n; ++i) g.features(i, deg.in_deg[i]) = 1.0;
    g.graph_label = triangle_label(g, cfg.triangle_density_threshold);
    out.push_back(std::move(g));
  }
  return out;
}

Dataset make_node_dataset(GraphInstance g) {
  Dataset ds;
  ds.task = Task::kNodeClassification;
  if (!g.node_labels) throw InvalidArgument("node dataset needs labels");
  ds.num_classes = g.node_labels->empty() ? 0 : *std::max_element(g.node_labels->begin(), g.node_labels->end()) + 1;
  ds.graphs.push_back(std::move(g));
  ds.validate();
  return ds;
}

Dataset make_graph_dataset(std::vector<GraphInstance> graphs, std::uint64_t seed) {
  Dataset ds;
  ds.task = Task::kGraphClassification;
  std::map<double, std::vector<int>> by_label;
  for (int i = 0; i < static_cast<int>(graphs.size()); ++i) {
    if (!graphs[i].graph_label) throw InvalidArgument("graph dataset needs labels");
    by_label[*graphs[i].graph_label].push_back(i);
  }
  SeededRng rng(seed);
  for (auto& [label, members] : by_label) split_group(members, rng, ds.train, ds.val, ds.test);
  std::sort(ds.train.begin(), ds.train.end());
  std::sort(ds.val.begin(), ds.val.end());
  std::sort(ds.test.begin(), ds.test.end());
  ds.num_classes = static_cast<int>(by_label.size());
  ds.graphs = std::move(graphs);
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// JSON interchange

namespace {

const json& require(const json& obj, const std::string& key, const std::string& prefix) {
  if (!obj.is_object() || !obj.contains(key)) throw SchemaError(prefix + key, "missing field");
  return obj.at(key);
}

std::vector<bool> parse_mask(const json& arr, const std::string& path, int n) {
  if (!arr.is_array() || static_cast<int>(arr.size()) != n) {
    throw SchemaError(path, "expected an array of length n");
  }
  std::vector<bool> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (v.is_boolean()) out.push_back(v.get<bool>());
    else if (v.is_number()) out.push_back(v.get<double>() != 0.0);
    else throw SchemaError(path, "mask entries must be booleans or numbers");
  }
  return out;
}

GraphInstance graph_from_json(const json& doc, const std::string& prefix) {
  GraphInstance g;
  const json& n = require(doc, "n", prefix);
  if (!n.is_number_integer() || n.get<int>() < 0) throw SchemaError(prefix + "n", "expected a non-negative integer");
  g.n = n.get<int>();

  const json& edges = require(doc, "edges", prefix);
  if (!edges.is_array()) throw SchemaError(prefix + "edges", "expected an array");
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const std::string path = prefix + "edges[" + std::to_string(k) + "]";
    const json& e = edges[k];
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
      throw SchemaError(path, "expected [u, v]");
    }
    const int u = e[0].get<int>(), v = e[1].get<int>();
    if (u == v) throw SchemaError(path, "self-loop on node " + std::to_string(u));
    if (u < 0 || v < 0 || u >= g.n || v >= g.n) throw SchemaError(path, "endpoint out of range");
    g.edges.emplace_back(u, v);
  }

  const json& feats = require(doc, "features", prefix);
  if (!feats.is_array() || static_cast<int>(feats.size()) != g.n) {
    throw SchemaError(prefix + "features", "expected n rows");
  }
  const std::size_t d = g.n > 0 ? feats[0].size() : 0;
  g.features = Matrix::Zero(g.n, static_cast<Eigen::Index>(d));
  for (int i = 0; i < g.n; ++i) {
    const json& row = feats[i];
    if (!row.is_array() || row.size() != d) {
      throw SchemaError(prefix + "features[" + std::to_string(i) + "]", "ragged feature row");
    }
    for (std::size_t c = 0; c < d; ++c) {
      if (!row[c].is_number()) throw SchemaError(prefix + "features[" + std::to_string(i) + "]", "non-numeric");
      g.features(i, static_cast<Eigen::Index>(c)) = row[c].get<double>();
    }
  }

  if (doc.contains("node_labels") && !doc["node_labels"].is_null()) {
    const json& labels = doc["node_labels"];
    if (!labels.is_array() || static_cast<int>(labels.size()) != g.n) {
      throw SchemaError(prefix + "node_labels", "expected an array of length n");
    }
    std::vector<int> ys;
    for (const auto& y : labels) {
      if (!y.is_number_integer()) throw SchemaError(prefix + "node_labels", "expected integers");
      ys.push_back(y.get<int>());
    }
    g.node_labels = std::move(ys);
  }
  if (doc.contains("graph_label") && !doc["graph_label"].is_null()) {
    if (!doc["graph_label"].is_number()) throw SchemaError(prefix + "graph_label", "expected a number");
    g.graph_label = doc["graph_label"].get<double>();
  }
  if (doc.contains("masks") && !doc["masks"].is_null()) {
    const json& m = doc["masks"];
    const std::string mp = prefix + "masks.";
    SplitMasks masks{parse_mask(require(m, "train", mp), mp + "train", g.n),
                     parse_mask(require(m, "val", mp), mp + "val", g.n),
                     parse_mask(require(m, "test", mp), mp + "test", g.n)};
    for (int i = 0; i < g.n; ++i) {
      if (int(masks.train[i]) + int(masks.val[i]) + int(masks.test[i]) > 1) {
        throw SchemaError(prefix + "masks", "overlapping splits at node " + std::to_string(i));
      }
    }
    g.split_masks = std::move(masks);
  }
  return g;
}

json graph_to_json(const GraphInstance& g) {
  json doc;
  doc["n"] = g.n;
  doc["edges"] = json::array();
  for (auto [u, v] : g.edges) doc["edges"].push_back({u, v});
  doc["features"] = json::array();
  for (int i = 0; i < g.n; ++i) {
    std::vector<double> row(static_cast<std::size_t>(g.features.cols()));
    for (Eigen::Index c = 0; c < g.features.cols(); ++c) row[c] = g.features(i, c);
    doc["features"].push_back(row);
  }
  doc["node_labels"] = g.node_labels ? json(*g.node_labels) : json(nullptr);
  doc["graph_label"] = g.graph_label ? json(*g.graph_label) : json(nullptr);
  if (g.split_masks) {
    doc["masks"] = {{"train", g.split_masks->train},
                    {"val", g.split_masks->val},
                    {"test", g.split_masks->test}};
  } else {
    doc["masks"] = nullptr;
  }
  return doc;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("$", e.what());
  }
}

void write_json(const json& doc, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump() << '\n';
}

}  // namespace

GraphInstance load_graph_json(const std::filesystem::path& path) {
  return graph_from_json(read_json(path), "");
}

void save_graph_json(const GraphInstance& g, const std::filesystem::path& path) {
  write_json(graph_to_json(g), path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  const json doc = read_json(path);
  if (!doc.contains("graphs")) {
    Dataset ds = make_node_dataset(graph_from_json(doc, ""));
    return ds;
  }
  const json& arr = doc.at("graphs");
  if (!arr.is_array()) throw SchemaError("graphs", "expected an array");
  std::vector<GraphInstance> graphs;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    graphs.push_back(graph_from_json(arr[i], "graphs[" + std::to_string(i) + "]."));
  }
  if (!doc.contains("splits")) {
    return make_graph_dataset(std::move(graphs), doc.value("split_seed", std::uint64_t{0}));
  }
  Dataset ds;
  ds.task = Task::kGraphClassification;
  const json& s = doc.at("splits");
  ds.train = require(s, "train", "splits.").get<std::vector<int>>();
  ds.val = require(s, "val", "splits.").get<std::vector<int>>();
  ds.test = require(s, "test", "splits.").get<std::vector<int>>();
  std::set<double> labels;
  for (const auto& g : graphs)
    if (g.graph_label) labels.insert(*g.graph_label);
  ds.num_classes = static_cast<int>(labels.size());
  ds.graphs = std::move(graphs);
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  if (ds.task == Task::kNodeClassification) {
    save_graph_json(ds.graphs.at(0), path);
    return;
  }
  json doc;
  doc["graphs"] = json::array();
  for (const auto& g : ds.graphs) doc["graphs"].push_back(graph_to_json(g));
  doc["splits"] = {{"train", ds.train}, {"val", ds.val}, {"test", ds.test}};
  write_json(doc, path);
}

}  // namespace egtas
