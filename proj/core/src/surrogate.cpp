#include "egtas/surrogate.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "egtas/error.hpp"
#include "egtas/metrics.hpp"
#include "egtas/trainer.hpp"

namespace egtas {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Archive and features

void TrainingArchive::add(const ArchitectureEncoding& enc, double value) {
  encodings.push_back(enc);
  values.push_back(value);
}

void TrainingArchive::validate(const OperationTable& table) const {
  if (encodings.size() != values.size()) throw InvalidArgument("archive size mismatch");
  for (const auto& e : encodings) egtas::validate(e, table);
  for (double v : values)
    if (!std::isfinite(v)) throw InvalidArgument("archive holds a non-finite value");
  const std::set<ArchitectureEncoding> distinct(encodings.begin(), encodings.end());
  if (distinct.size() < 2) throw InvalidArgument("archive needs at least two distinct encodings");
}

TrainingArchive TrainingArchive::subset(const std::vector<std::size_t>& rows) const {
  TrainingArchive out;
  out.metric_name = metric_name;
  out.minimize = minimize;
  for (std::size_t r : rows) out.add(encodings.at(r), values.at(r));
  return out;
}

TrainingArchive TrainingArchive::from_records(const std::vector<FitnessRecord>& records) {
  TrainingArchive out;
  if (!records.empty()) {
    out.metric_name = records.front().metric_name;
    out.minimize = records.front().minimize;
  }
  for (const auto& r : records) {
    if (r.metric_name != out.metric_name) throw InvalidArgument("archive mixes metrics");
    out.add(r.encoding, r.value);
  }
  return out;
}

int feature_width(const OperationTable& table) {
  const auto b = table.bounds();
  return std::accumulate(b.begin(), b.end(), 0);
}

namespace {

Vector featurize_bounds(const ArchitectureEncoding& enc, const std::vector<int>& bounds) {
  const int width = std::accumulate(bounds.begin(), bounds.end(), 0);
  Vector x = Vector::Zero(width);
  int offset = 0;
  for (std::size_t g = 0; g < kNumGenes; ++g) {
    if (enc[g] < 0 || enc[g] >= bounds[g]) throw OutOfBoundsError(g, enc[g], bounds[g]);
    x(offset + enc[g]) = 1.0;
    offset += bounds[g];
  }
  return x;
}

std::vector<int> table_bounds(const OperationTable& table) {
  const auto b = table.bounds();
  return {b.begin(), b.end()};
}

Matrix feature_matrix(const TrainingArchive& archive, const std::vector<int>& bounds) {
  const int width = std::accumulate(bounds.begin(), bounds.end(), 0);
  Matrix x(static_cast<Eigen::Index>(archive.size()), width);
  for (std::size_t i = 0; i < archive.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) = featurize_bounds(archive.encodings[i], bounds).transpose();
  return x;
}

}  // namespace

Vector featurize(const ArchitectureEncoding& enc, const OperationTable& table) {
  return featurize_bounds(enc, table_bounds(table));
}

const char* kind_name(SurrogateKind kind) {
  switch (kind) {
    case SurrogateKind::kDecisionTree: return "decision_tree";
    case SurrogateKind::kRandomForest: return "random_forest";
    case SurrogateKind::kGaussianProcess: return "gaussian_process";
  }
  return "?";
}

SurrogateKind parse_kind(const std::string& name) {
  if (name == "decision_tree" || name == "DT") return SurrogateKind::kDecisionTree;
  if (name == "random_forest" || name == "RF") return SurrogateKind::kRandomForest;
  if (name == "gaussian_process" || name == "GP") return SurrogateKind::kGaussianProcess;
  throw UnknownOptionError("surrogate kind", name);
}

// ---------------------------------------------------------------------------
// CART

double RegressionTree::predict(const Vector& x) const {
  int i = 0;
  while (nodes[i].feature >= 0) i = x(nodes[i].feature) <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
  return nodes[i].value;
}

std::vector<int> RegressionTree::split_features() const {
  std::set<int> f;
  for (const auto& n : nodes)
    if (n.feature >= 0) f.insert(n.feature);
  return {f.begin(), f.end()};
}

int RegressionTree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, d[i]);
    if (nodes[i].feature >= 0) d[nodes[i].left] = d[nodes[i].right] = d[i] + 1;
  }
  return best;
}

namespace {

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const std::vector<double>& y, const TreeParams& params,
              int max_features, SeededRng& rng)
      : x_(x), y_(y), params_(params), max_features_(max_features), rng_(rng) {}

  RegressionTree build(std::vector<int> rows) {
    RegressionTree tree;
    grow(tree, std::move(rows), 0);
    return tree;
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = -std::numeric_limits<double>::infinity();
  };

  int grow(RegressionTree& tree, std::vector<int> rows, int depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double sum = 0.0;
    for (int r : rows) sum += y_[r];
    tree.nodes[id].value = sum / static_cast<double>(rows.size());

    const bool depth_left = params_.max_depth < 0 || depth < params_.max_depth;
    const bool pure = std::all_of(rows.begin(), rows.end(), [&](int r) { return y_[r] == y_[rows[0]]; });
    if (!depth_left || pure || static_cast<int>(rows.size()) < 2 * std::max(params_.min_leaf, 1)) return id;

    const Split s = best_split(rows);
    if (s.feature < 0) return id;

    std::vector<int> left, right;
    for (int r : rows) (x_(r, s.feature) <= s.threshold ? left : right).push_back(r);
    tree.nodes[id].feature = s.feature;
    tree.nodes[id].threshold = s.threshold;
    const int l = grow(tree, std::move(left), depth + 1);
    tree.nodes[id].left = l;
    const int r = grow(tree, std::move(right), depth + 1);
    tree.nodes[id].right = r;
    return id;
  }

  std::vector<int> candidate_features() {
    const int width = static_cast<int>(x_.cols());
    std::vector<int> all(static_cast<std::size_t>(width));
    std::iota(all.begin(), all.end(), 0);
    if (max_features_ <= 0 || max_features_ >= width) return all;
    for (int i = 0; i < max_features_; ++i) {
      const int j = i + rng_.uniform_int(width - i);
      std::swap(all[i], all[j]);
    }
    all.resize(static_cast<std::size_t>(max_features_));
    std::sort(all.begin(), all.end());
    return all;
  }

  Split best_split(const std::vector<int>& rows) {
    const int n = static_cast<int>(rows.size());
    const int min_leaf = std::max(params_.min_leaf, 1);
    double total = 0.0;
    for (int r : rows) total += y_[r];

    Split best;
    std::vector<int> order(rows);
    for (int f : candidate_features()) {
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return x_(a, f) < x_(b, f); });
      double left_sum = 0.0;
      for (int k = 1; k < n; ++k) {
        left_sum += y_[order[k - 1]];
        const double lo = x_(order[k - 1], f), hi = x_(order[k], f);
        if (lo == hi || k < min_leaf || n - k < min_leaf) continue;
        const double right_sum = total - left_sum;
        const double gain = left_sum * left_sum / k + right_sum * right_sum / (n - k) - total * total / n;
        if (gain > best.gain) {
          best.gain = gain;
          best.feature = f;
          best.threshold = 0.5 * (lo + hi);
        }
      }
    }
    return best;
  }

  const Matrix& x_;
  const std::vector<double>& y_;
  TreeParams params_;
  int max_features_;
  SeededRng& rng_;
};

// ---------------------------------------------------------------------------
// Gaussian process

Matrix rbf_kernel(const Matrix& a, const Matrix& b, double length_scale) {
  Matrix k(a.rows(), b.rows());
  const double inv = 1.0 / (2.0 * length_scale * length_scale);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) k(i, j) = std::exp(-(a.row(i) - b.row(j)).squaredNorm() * inv);
  return k;
}

/// Cholesky of K + noise I with growing jitter on failure.
Eigen::LLT<Matrix> robust_cholesky(const Matrix& k, double noise) {
  double jitter = 0.0;
  for (int attempt = 0; attempt < 12; ++attempt) {
    Matrix a = k;
    a.diagonal().array() += noise + jitter;
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() == Eigen::Success && (llt.matrixL().toDenseMatrix().diagonal().array() > 0).all()) return llt;
    jitter = jitter == 0.0 ? 1e-12 : jitter * 10.0;
  }
  throw NonFiniteError("kernel matrix is not positive definite");
}

GaussianProcessState fit_gp(const Matrix& x, const std::vector<double>& y, const GpParams& params) {
  if (params.length_scales.empty() || params.noises.empty()) throw InvalidArgument("empty GP grid");
  GaussianProcessState gp;
  const auto n = static_cast<Eigen::Index>(y.size());
  Vector yv = Eigen::Map<const Vector>(y.data(), n);
  gp.y_mean = yv.mean();
  const double sd = std::sqrt((yv.array() - gp.y_mean).square().mean());
  gp.x_train = x;
  if (!(sd > 1e-12 * std::max(1.0, std::abs(gp.y_mean)))) {
    gp.constant = true;
    gp.y_scale = 1.0;
    gp.alpha = Vector::Zero(n);
    return gp;
  }
  gp.y_scale = sd;
  const Vector z = (yv.array() - gp.y_mean) / sd;

  double best = -std::numeric_limits<double>::infinity();
  for (double ls : params.length_scales) {
    const Matrix k = rbf_kernel(x, x, ls);
    for (double noise : params.noises) {
      const auto llt = robust_cholesky(k, noise);
      const Vector alpha = llt.solve(z);
      const Matrix l = llt.matrixL();
      const double lml = -0.5 * z.dot(alpha) - l.diagonal().array().log().sum() -
                         0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
      if (std::isfinite(lml) && lml > best) {
        best = lml;
        gp.length_scale = ls;
        gp.noise = noise;
        gp.alpha = alpha;
        gp.log_marginal_likelihood = lml;
      }
    }
  }
  if (!std::isfinite(best)) throw NonFiniteError("GP likelihood is not finite on the grid");
  return gp;
}

int resolve_max_features(int requested, int width) {
  if (requested < 0) return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(width)))));
  return requested;
}

}  // namespace

// ---------------------------------------------------------------------------
// Model

double SurrogateModel::predict_features(const Vector& x) const {
  if (kind == SurrogateKind::kGaussianProcess) {
    if (gp.constant) return gp.y_mean;
    Vector k(gp.x_train.rows());
    const double inv = 1.0 / (2.0 * gp.length_scale * gp.length_scale);
    for (Eigen::Index i = 0; i < gp.x_train.rows(); ++i)
      k(i) = std::exp(-(gp.x_train.row(i).transpose() - x).squaredNorm() * inv);
    return gp.y_mean + gp.y_scale * k.dot(gp.alpha);
  }
  if (trees.empty()) throw InvalidArgument("surrogate is not fitted");
  double sum = 0.0;
  for (const auto& t : trees) sum += t.predict(x);
  return sum / static_cast<double>(trees.size());
}

double SurrogateModel::predict(const ArchitectureEncoding& enc) const {
  return predict_features(featurize_bounds(enc, bounds));
}

std::vector<double> SurrogateModel::predict_all(const std::vector<ArchitectureEncoding>& encs) const {
  std::vector<double> out;
  out.reserve(encs.size());
  for (const auto& e : encs) out.push_back(predict(e));
  return out;
}

json SurrogateModel::to_json() const {
  json j;
  j["format_version"] = kSurrogateFormatVersion;
  j["kind"] = kind_name(kind);
  j["metric_name"] = metric_name;
  j["minimize"] = minimize;
  j["feature_encoding"] = {{"rule", "one_hot"}, {"bounds", bounds}};
  if (kind == SurrogateKind::kGaussianProcess) {
    std::vector<std::vector<double>> xs;
    for (Eigen::Index i = 0; i < gp.x_train.rows(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(gp.x_train.cols()));
      for (Eigen::Index c = 0; c < gp.x_train.cols(); ++c) row[c] = gp.x_train(i, c);
      xs.push_back(std::move(row));
    }
    j["gp"] = {{"constant", gp.constant},
               {"length_scale", gp.length_scale},
               {"noise", gp.noise},
               {"y_mean", gp.y_mean},
               {"y_scale", gp.y_scale},
               {"log_marginal_likelihood", gp.log_marginal_likelihood},
               {"x_train", xs},
               {"alpha", std::vector<double>(gp.alpha.data(), gp.alpha.data() + gp.alpha.size())}};
  } else {
    j["trees"] = json::array();
    for (const auto& t : trees) {
      json nodes = json::array();
      for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
      j["trees"].push_back(nodes);
    }
  }
  return j;
}

SurrogateModel SurrogateModel::from_json(const json& j) {
  try {
    if (j.at("format_version").get<int>() != kSurrogateFormatVersion) {
      throw SchemaError("format_version", "unsupported surrogate format");
    }
    SurrogateModel m;
    m.kind = parse_kind(j.at("kind").get<std::string>());
    m.metric_name = j.at("metric_name").get<std::string>();
    m.minimize = j.at("minimize").get<bool>();
    if (j.at("feature_encoding").at("rule").get<std::string>() != "one_hot") {
      throw SchemaError("feature_encoding.rule", "unknown feature rule");
    }
    m.bounds = j.at("feature_encoding").at("bounds").get<std::vector<int>>();
    if (m.bounds.size() != kNumGenes) throw SchemaError("feature_encoding.bounds", "expected 6 bounds");
    if (m.kind == SurrogateKind::kGaussianProcess) {
      const json& g = j.at("gp");
      m.gp.constant = g.at("constant").get<bool>();
      m.gp.length_scale = g.at("length_scale").get<double>();
      m.gp.noise = g.at("noise").get<double>();
      m.gp.y_mean = g.at("y_mean").get<double>();
      m.gp.y_scale = g.at("y_scale").get<double>();
      m.gp.log_marginal_likelihood = g.value("log_marginal_likelihood", 0.0);
      const auto xs = g.at("x_train").get<std::vector<std::vector<double>>>();
      const auto alpha = g.at("alpha").get<std::vector<double>>();
      const auto width = static_cast<Eigen::Index>(std::accumulate(m.bounds.begin(), m.bounds.end(), 0));
      m.gp.x_train = Matrix::Zero(static_cast<Eigen::Index>(xs.size()), width);
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (static_cast<Eigen::Index>(xs[i].size()) != width) throw SchemaError("gp.x_train", "bad row width");
        for (Eigen::Index c = 0; c < width; ++c) m.gp.x_train(static_cast<Eigen::Index>(i), c) = xs[i][c];
      }
      if (alpha.size() != xs.size()) throw SchemaError("gp.alpha", "length mismatch");
      m.gp.alpha = Eigen::Map<const Vector>(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
    } else {
      for (const auto& t : j.at("trees")) {
        RegressionTree tree;
        for (const auto& n : t) {
          RegressionTree::Node node;
          node.feature = n.at(0).get<int>();
          node.threshold = n.at(1).get<double>();
          node.left = n.at(2).get<int>();
          node.right = n.at(3).get<int>();
          node.value = n.at(4).get<double>();
          tree.nodes.push_back(node);
        }
        if (tree.nodes.empty()) throw SchemaError("trees", "empty tree");
        m.trees.push_back(std::move(tree));
      }
      if (m.trees.empty()) throw SchemaError("trees", "no trees");
    }
    return m;
  } catch (const json::exception& e) {
    throw SchemaError("surrogate", e.what());
  }
}

void SurrogateModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump() << '\n';
}

SurrogateModel SurrogateModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("$", e.what());
  }
  return from_json(j);
}

SurrogateModel fit(SurrogateKind kind, const TrainingArchive& archive, SeededRng& rng,
                   const SurrogateOptions& options, const OperationTable& table) {
  archive.validate(table);
  SurrogateModel m;
  m.kind = kind;
  m.metric_name = archive.metric_name;
  m.minimize = archive.minimize;
  m.bounds = table_bounds(table);
  const Matrix x = feature_matrix(archive, m.bounds);
  const std::vector<double>& y = archive.values;
  const int n = static_cast<int>(archive.size());

  std::vector<int> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);

  switch (kind) {
    case SurrogateKind::kDecisionTree: {
      TreeBuilder builder(x, y, options.tree, 0, rng);
      m.trees.push_back(builder.build(all));
      break;
    }
    case SurrogateKind::kRandomForest: {
      if (options.forest.num_trees < 1) throw InvalidArgument("forest needs at least one tree");
      const int mf = resolve_max_features(options.forest.max_features, static_cast<int>(x.cols()));
      TreeBuilder builder(x, y, options.tree, mf, rng);
      for (int t = 0; t < options.forest.num_trees; ++t) {
        std::vector<int> rows = all;
        if (options.forest.bootstrap)
          for (auto& r : rows) r = rng.uniform_int(n);
        m.trees.push_back(builder.build(std::move(rows)));
      }
      break;
    }
    case SurrogateKind::kGaussianProcess:
      m.gp = fit_gp(x, y, options.gp);
      break;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Selection

std::vector<SurrogateCandidate> default_candidates() {
  return {{kind_name(SurrogateKind::kDecisionTree), SurrogateKind::kDecisionTree, {}},
          {kind_name(SurrogateKind::kRandomForest), SurrogateKind::kRandomForest, {}},
          {kind_name(SurrogateKind::kGaussianProcess), SurrogateKind::kGaussianProcess, {}}};
}

json SurrogateReport::to_json() const {
  json j;
  j["folds"] = folds;
  j["selected"] = selected;
  j["cv"] = json::array();
  for (const auto& s : scores) {
    j["cv"].push_back({{"name", s.name},
                       {"kind", kind_name(s.kind)},
                       {"fold_mse", s.fold_mse},
                       {"mean_mse", s.mean_mse},
                       {"sd_mse", s.sd_mse}});
  }
  j["holdout"] = {{"size", holdout_size},
                  {"ktau", holdout_ktau ? json(*holdout_ktau) : json(nullptr)},
                  {"mse", holdout_mse ? json(*holdout_mse) : json(nullptr)}};
  return j;
}

Selection select_best(const TrainingArchive& archive, int folds, SeededRng& rng,
                      const std::vector<SurrogateCandidate>& candidates, const OperationTable& table) {
  if (folds < 2) throw InvalidArgument("need at least two folds");
  if (archive.size() < static_cast<std::size_t>(folds)) throw InvalidArgument("archive smaller than fold count");
  if (candidates.empty()) throw InvalidArgument("empty surrogate menu");
  archive.validate(table);

  std::vector<std::size_t> perm(archive.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  const std::uint64_t base = rng.next_u64();

  Selection out;
  out.report.folds = folds;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const auto& cand = candidates[c];
    CvScore score;
    score.name = cand.name;
    score.kind = cand.kind;
    for (int k = 0; k < folds; ++k) {
      std::vector<std::size_t> train_rows, test_rows;
      for (std::size_t p = 0; p < perm.size(); ++p)
        (static_cast<int>(p % folds) == k ? test_rows : train_rows).push_back(perm[p]);
      const TrainingArchive train = archive.subset(train_rows);
      const TrainingArchive test = archive.subset(test_rows);
      SeededRng fold_rng(derive_seed(base, c * 1000 + static_cast<std::uint64_t>(k)));
      const SurrogateModel m = fit(cand.kind, train, fold_rng, cand.options, table);
      score.fold_mse.push_back(mean_squared_error(m.predict_all(test.encodings), test.values));
    }
    const double f = static_cast<double>(folds);
    score.mean_mse = std::accumulate(score.fold_mse.begin(), score.fold_mse.end(), 0.0) / f;
    double ss = 0.0;
    for (double v : score.fold_mse) ss += (v - score.mean_mse) * (v - score.mean_mse);
    score.sd_mse = std::sqrt(ss / (f - 1.0));
    out.report.scores.push_back(std::move(score));
  }

  std::size_t winner = 0;
  for (std::size_t c = 1; c < out.report.scores.size(); ++c) {
    const auto& s = out.report.scores[c];
    const auto& w = out.report.scores[winner];
    if (s.mean_mse < w.mean_mse || (s.mean_mse == w.mean_mse && s.name < w.name)) winner = c;
  }
  out.report.selected = candidates[winner].name;
  SeededRng refit_rng(derive_seed(base, hash_name("refit")));
  out.model = fit(candidates[winner].kind, archive, refit_rng, candidates[winner].options, table);
  return out;
}

std::pair<TrainingArchive, TrainingArchive> split_holdout(const TrainingArchive& archive,
                                                          double fraction, std::uint64_t seed) {
  if (fraction < 0 || fraction >= 1) throw InvalidArgument("holdout fraction must lie in [0, 1)");
  std::vector<std::size_t> perm(archive.size());
  std::iota(perm.begin(), perm.end(), 0);
  SeededRng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  const auto h = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(archive.size())));
  std::vector<std::size_t> hold(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(h));
  std::vector<std::size_t> rest(perm.begin() + static_cast<std::ptrdiff_t>(h), perm.end());
  std::sort(hold.begin(), hold.end());
  std::sort(rest.begin(), rest.end());
  return {archive.subset(rest), archive.subset(hold)};
}

void score_holdout(const SurrogateModel& model, const TrainingArchive& holdout, SurrogateReport& report) {
  report.holdout_size = holdout.size();
  if (holdout.size() < 2) return;
  const auto pred = model.predict_all(holdout.encodings);
  report.holdout_ktau = ktau(pred, holdout.values);
  report.holdout_mse = mean_squared_error(pred, holdout.values);
}

}  // namespace egtas
