#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "egtas/graph.hpp"
#include "egtas/rng.hpp"
#include "egtas/search_space.hpp"

namespace egtas {

struct FitnessRecord;

/// (encoding, metric value) pairs used to fit a predictor.
struct TrainingArchive {
  std::vector<ArchitectureEncoding> encodings;
  std::vector<double> values;
  std::string metric_name = "acc";
  bool minimize = false;

  std::size_t size() const { return encodings.size(); }
  void add(const ArchitectureEncoding& enc, double value);
  /// Throws InvalidArgument unless sizes agree, every encoding is valid and at least two
  /// encodings are distinct.
  void validate(const OperationTable& table = OperationTable::standard()) const;
  TrainingArchive subset(const std::vector<std::size_t>& rows) const;

  static TrainingArchive from_records(const std::vector<FitnessRecord>& records);
};

/// One-hot expansion of every gene; width is the sum of the table bounds.
Vector featurize(const ArchitectureEncoding& enc,
                 const OperationTable& table = OperationTable::standard());
int feature_width(const OperationTable& table = OperationTable::standard());

enum class SurrogateKind { kDecisionTree, kRandomForest, kGaussianProcess };

const char* kind_name(SurrogateKind kind);
SurrogateKind parse_kind(const std::string& name);

struct TreeParams {
  int max_depth = 8;  // negative means unbounded
  int min_leaf = 2;
};

struct ForestParams {
  int num_trees = 100;
  bool bootstrap = true;
  int max_features = -1;  // -1: floor(sqrt(F)); 0: all features
};

struct GpParams {
  std::vector<double> length_scales{0.5, 1.0, 2.0, 4.0};
  std::vector<double> noises{1e-6, 1e-4, 1e-2};
};

struct SurrogateOptions {
  TreeParams tree;
  ForestParams forest;
  GpParams gp;
};

/// CART regression tree with variance-reduction splits.
struct RegressionTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  std::vector<Node> nodes;

  double predict(const Vector& x) const;
  /// Features used by any internal node, ascending.
  std::vector<int> split_features() const;
  int depth() const;
};

struct GaussianProcessState {
  bool constant = false;
  double length_scale = 1.0;
  double noise = 1e-6;
  double y_mean = 0.0;
  double y_scale = 1.0;
  double log_marginal_likelihood = 0.0;
  Matrix x_train;  // rows are featurized encodings
  Vector alpha;    // (K + noise I)^-1 y_standardized
};

class SurrogateModel {
 public:
  SurrogateKind kind = SurrogateKind::kDecisionTree;
  std::string metric_name = "acc";
  bool minimize = false;
  std::vector<int> bounds;                // feature encoding rule
  std::vector<RegressionTree> trees;      // one for DT, many for RF
  GaussianProcessState gp;

  double predict(const ArchitectureEncoding& enc) const;
  double predict_features(const Vector& x) const;
  std::vector<double> predict_all(const std::vector<ArchitectureEncoding>& encs) const;

  nlohmann::json to_json() const;
  static SurrogateModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static SurrogateModel load(const std::filesystem::path& path);
};

inline constexpr int kSurrogateFormatVersion = 1;

SurrogateModel fit(SurrogateKind kind, const TrainingArchive& archive, SeededRng& rng,
                   const SurrogateOptions& options = {},
                   const OperationTable& table = OperationTable::standard());

/// A named entry of the selection menu.
struct SurrogateCandidate {
  std::string name;
  SurrogateKind kind = SurrogateKind::kDecisionTree;
  SurrogateOptions options;
};

/// Decision tree, random forest and Gaussian process with default settings.
std::vector<SurrogateCandidate> default_candidates();

struct CvScore {
  std::string name;
  SurrogateKind kind = SurrogateKind::kDecisionTree;
  std::vector<double> fold_mse;
  double mean_mse = 0.0;
  double sd_mse = 0.0;
};

struct SurrogateReport {
  std::vector<CvScore> scores;  // menu order
  std::string selected;
  int folds = 0;
  std::optional<double> holdout_ktau;
  std::optional<double> holdout_mse;
  std::size_t holdout_size = 0;

  nlohmann::json to_json() const;
};

struct Selection {
  SurrogateModel model;
  SurrogateReport report;
};

/// Seeded k-fold CV of every candidate; the lowest mean MSE wins (ties go to the
/// alphabetically first name) and is refit on the whole archive.
Selection select_best(const TrainingArchive& archive, int folds, SeededRng& rng,
                      const std::vector<SurrogateCandidate>& candidates = default_candidates(),
                      const OperationTable& table = OperationTable::standard());

/// Seeded split into (train, holdout) with round(fraction * n) holdout rows.
std::pair<TrainingArchive, TrainingArchive> split_holdout(const TrainingArchive& archive,
                                                          double fraction, std::uint64_t seed);

/// Fills the report's holdout fields from `model` on `holdout`.
void score_holdout(const SurrogateModel& model, const TrainingArchive& holdout,
                   SurrogateReport& report);

}  // namespace egtas
