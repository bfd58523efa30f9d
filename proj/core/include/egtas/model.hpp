#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "egtas/autodiff.hpp"
#include "egtas/graph.hpp"
#include "egtas/rng.hpp"
#include "egtas/search_space.hpp"

namespace egtas {

/// Size preset of a graph Transformer.
struct ModelScale {
  int layers = 0;
  int hidden_dim = 0;
  int heads = 0;
  int head_dim = 0;
  int ffn_dim = 0;

  /// "Mini", "Small", "Middle", "Large" or the test-sized "Desk".
  static ModelScale preset(const std::string& name);
  void validate() const;
  bool operator==(const ModelScale&) const = default;
};

enum class Topology { kVanilla, kJK, kResidual, kGCNII };
enum class Combination { kBefore, kAlternate, kParallel };
enum class GnnKind { kGCN, kSAGE, kGAT, kGATv2, kGIN, kNone };

/// Typed view of an ArchitectureSpec.
struct Architecture {
  Topology topology = Topology::kVanilla;
  Combination combination = Combination::kBefore;
  GnnKind gnn = GnnKind::kNone;
  bool le = false, svd = false, dc = false;
  bool pem = false, se = false, mask = false;
  std::string scale;

  static Architecture from_spec(const ArchitectureSpec& spec);
  bool has_gnn() const { return gnn != GnnKind::kNone; }
  bool has_bias() const { return pem || se || mask; }
};

/// Knobs of the graph-aware strategies.
struct EncodingConfig {
  int k_le = 4;
  int k_svd = 4;
  int mask_threshold = 2;
  double gcnii_alpha = 0.1;
  int max_distance_bucket = 8;
  int max_degree = 16;
  int max_common_neighbors = 8;
  int pem_dim = 4;
  double gat_negative_slope = 0.2;
  double gin_eps = 0.0;
};

inline constexpr double kMaskValue = -1e9;

enum class Task { kNodeClassification, kGraphClassification };

const char* task_name(Task task);
Task parse_task(const std::string& name);

/// Input/output widths fixed by the dataset.
struct ModelIO {
  Task task = Task::kNodeClassification;
  int feature_dim = 0;
  int output_dim = 1;  // classes for node classification, 1 for the graph readout
};

/// Named real tensors, ordered by name.
class ParameterSet {
 public:
  Matrix& operator[](const std::string& name) { return tensors_[name]; }
  const Matrix& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  std::size_t size() const { return tensors_.size(); }
  std::size_t num_scalars() const;
  bool all_finite() const;
  std::vector<std::string> names() const;
  /// Same names and shapes, all zeros.
  ParameterSet zeros_like() const;
  bool same_shapes(const ParameterSet& other) const;

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  bool operator==(const ParameterSet& other) const;

 private:
  std::map<std::string, Matrix> tensors_;
};

struct GraphTransformerModel {
  ArchitectureSpec spec;
  Architecture arch;
  ModelScale scale;
  EncodingConfig config;
  ModelIO io;
  ParameterSet params;

  /// Width of the concatenated [features | LE | SVD] input.
  int input_width() const;
};

/// Builds and initializes a model; parameter init is U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
/// seeded per tensor name so unrelated tensors never shift each other's values.
GraphTransformerModel build_model(const ArchitectureSpec& spec, const ModelScale& scale,
                                  std::uint64_t init_seed, const ModelIO& io,
                                  const EncodingConfig& config = {});

/// Graph-derived constants consumed by a forward pass.
struct GraphContext {
  int n = 0;
  Matrix features;
  Matrix le;   // n x k_le, zero-padded
  Matrix svd;  // n x 2*k_svd as [U sqrt(S) | V sqrt(S)], zero-padded
  std::vector<int> degree_bucket;
  DistanceMatrix distances;
  ad::IndexMatrix distance_bucket;  // SE / PEM index; unreachable gets its own bucket
  ad::IndexMatrix common_neighbor_bucket;
  Matrix mask_bias;           // 0 or kMaskValue
  Matrix gcn_norm;            // D^-1/2 (A+I) D^-1/2
  Matrix mean_aggregation;    // row-normalized A
  Matrix adjacency;
  Matrix neighborhood_bias;   // 0 on the closed neighborhood, kMaskValue elsewhere
};

GraphContext precompute(const GraphInstance& g, const GraphTransformerModel& model);

struct DropoutRates {
  double attention = 0.0;
  double ffn = 0.0;
  double gnn = 0.0;
};

struct ForwardOptions {
  bool training = false;
  DropoutRates dropout;
  SeededRng* rng = nullptr;  // required when training with non-zero dropout
};

struct ForwardTrace {
  std::vector<Matrix> block_inputs;
  std::vector<Matrix> block_outputs;
  std::vector<std::vector<Matrix>> attention;  // [block][head]
  Matrix final_representation;                 // X^L
  Matrix output;  // n x C logits, or 1 x 1 graph prediction
};

/// [features | LE | SVD] * W_in, plus degree embeddings when DC is enabled.
Matrix apply_positional_embeddings(const GraphTransformerModel& model, const GraphContext& ctx);

/// Sum of the enabled SE / PEM / Mask terms; zero matrix when none is enabled.
Matrix attention_bias(const GraphTransformerModel& model, const GraphContext& ctx);

struct BlockOutput {
  Matrix x;
  std::vector<Matrix> attention;
};

/// One MHA+FFN block with the shared bias inside every head's softmax.
BlockOutput transformer_block_forward(const GraphTransformerModel& model, int block,
                                      const Matrix& x, const Matrix& bias);

/// One aggregation round of the model's GNN block; throws if the block is None.
Matrix gnn_block_forward(const GraphTransformerModel& model, int block, const Matrix& x,
                         const GraphContext& ctx);

ForwardTrace assemble_forward(const GraphTransformerModel& model, const GraphContext& ctx,
                              const ForwardOptions& options = {});

struct LossTargets {
  Task task = Task::kNodeClassification;
  std::vector<int> labels;  // per node
  std::vector<int> rows;    // nodes that contribute to the loss
  double graph_target = 0.0;
};

struct LossAndGradients {
  double loss = 0.0;
  ParameterSet grads;
};

/// Node task: mean negative log-softmax over `rows`. Graph task: squared error of the
/// mean-pooled readout.
LossAndGradients loss_and_gradients(const GraphTransformerModel& model, const GraphContext& ctx,
                                    const LossTargets& targets, const ForwardOptions& options = {});

/// Loss only, same definition as above.
double loss_value(const GraphTransformerModel& model, const GraphContext& ctx,
                  const LossTargets& targets);

// Checkpoints are JSON: {"format_version": 1, "tensors": [{"name", "shape", "data"}]}.
inline constexpr int kCheckpointVersion = 1;
void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path);
ParameterSet load_checkpoint(const std::filesystem::path& path);

}  // namespace egtas
