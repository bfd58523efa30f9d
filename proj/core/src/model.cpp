#include "egtas/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>

#include "egtas/error.hpp"

namespace egtas {

using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// Scales, architecture parsing, parameter containers

ModelScale ModelScale::preset(const std::string& name) {
  if (name == "Mini") return {3, 64, 4, 5, 64};
  if (name == "Small") return {6, 80, 8, 10, 80};
  if (name == "Middle") return {12, 80, 8, 10, 80};
  if (name == "Large") return {12, 512, 32, 16, 512};
  if (name == "Desk") return {2, 8, 2, 4, 16};
  throw UnknownOptionError("scale", name);
}

void ModelScale::validate() const {
  if (layers <= 0 || hidden_dim <= 0 || heads <= 0 || head_dim <= 0 || ffn_dim <= 0) {
    throw InvalidArgument("model scale fields must all be positive");
  }
}

Architecture Architecture::from_spec(const ArchitectureSpec& spec) {
  Architecture a;
  if (spec.topology == "Vanilla") a.topology = Topology::kVanilla;
  else if (spec.topology == "JK") a.topology = Topology::kJK;
  else if (spec.topology == "Residual") a.topology = Topology::kResidual;
  else if (spec.topology == "GCNII") a.topology = Topology::kGCNII;
  else throw UnknownOptionError("topology", spec.topology);

  if (spec.combination == "Before") a.combination = Combination::kBefore;
  else if (spec.combination == "Alternate") a.combination = Combination::kAlternate;
  else if (spec.combination == "Parallel") a.combination = Combination::kParallel;
  else throw UnknownOptionError("combination", spec.combination);

  if (spec.gnn_block == "GCN") a.gnn = GnnKind::kGCN;
  else if (spec.gnn_block == "SAGE") a.gnn = GnnKind::kSAGE;
  else if (spec.gnn_block == "GAT") a.gnn = GnnKind::kGAT;
  else if (spec.gnn_block == "GATv2") a.gnn = GnnKind::kGATv2;
  else if (spec.gnn_block == "GIN") a.gnn = GnnKind::kGIN;
  else if (spec.gnn_block == "None") a.gnn = GnnKind::kNone;
  else throw UnknownOptionError("gnn_block", spec.gnn_block);

  for (const auto& op : spec.pe_set) {
    if (op == "LE") a.le = true;
    else if (op == "SVD") a.svd = true;
    else if (op == "DC") a.dc = true;
    else throw UnknownOptionError("pe_set", op);
  }
  for (const auto& op : spec.am_set) {
    if (op == "PEM") a.pem = true;
    else if (op == "SE") a.se = true;
    else if (op == "Mask") a.mask = true;
    else throw UnknownOptionError("am_set", op);
  }
  a.scale = spec.scale;
  return a;
}

const char* task_name(Task task) {
  return task == Task::kNodeClassification ? "node_classification" : "graph_classification";
}

Task parse_task(const std::string& name) {
  if (name == "node_classification" || name == "NC") return Task::kNodeClassification;
  if (name == "graph_classification" || name == "GC") return Task::kGraphClassification;
  throw UnknownOptionError("task", name);
}

const Matrix& ParameterSet::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw InvalidArgument("no parameter named '" + name + "'");
  return it->second;
}

std::size_t ParameterSet::num_scalars() const {
  std::size_t total = 0;
  for (const auto& [name, m] : tensors_) total += static_cast<std::size_t>(m.size());
  return total;
}

bool ParameterSet::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(),
                     [](const auto& kv) { return kv.second.allFinite(); });
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, m] : tensors_) out.push_back(name);
  return out;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& [name, m] : tensors_) out[name] = Matrix::Zero(m.rows(), m.cols());
  return out;
}

bool ParameterSet::same_shapes(const ParameterSet& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (const auto& [name, m] : tensors_) {
    auto it = other.tensors_.find(name);
    if (it == other.tensors_.end() || it->second.rows() != m.rows() ||
        it->second.cols() != m.cols()) {
      return false;
    }
  }
  return true;
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (!same_shapes(other)) return false;
  for (const auto& [name, m] : tensors_) {
    if (m != other.tensors_.at(name)) return false;
  }
  return true;
}

int GraphTransformerModel::input_width() const {
  return io.feature_dim + (arch.le ? config.k_le : 0) + (arch.svd ? 2 * config.k_svd : 0);
}

// ---------------------------------------------------------------------------
// Construction

namespace {

std::string block_name(int l, const char* suffix) { return "block" + std::to_string(l) + "." + suffix; }
std::string gnn_name(int l, const char* suffix) { return "gnn" + std::to_string(l) + "." + suffix; }

class Initializer {
 public:
  Initializer(ParameterSet& params, std::uint64_t seed) : params_(params), seed_(seed) {}

  void add(const std::string& name, int rows, int cols, int fan_in) {
    SeededRng rng(derive_seed(seed_, hash_name(name)));
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
    Matrix m(rows, cols);
    for (int j = 0; j < cols; ++j)
      for (int i = 0; i < rows; ++i) m(i, j) = rng.uniform(-bound, bound);
    params_[name] = std::move(m);
  }

 private:
  ParameterSet& params_;
  std::uint64_t seed_;
};

void add_gnn_params(Initializer& init, GnnKind kind, int l, int d) {
  switch (kind) {
    case GnnKind::kGCN:
      init.add(gnn_name(l, "weight"), d, d, d);
      break;
    case GnnKind::kSAGE:
      init.add(gnn_name(l, "weight"), 2 * d, d, 2 * d);
      init.add(gnn_name(l, "bias"), 1, d, 2 * d);
      break;
    case GnnKind::kGAT:
      init.add(gnn_name(l, "weight"), d, d, d);
      init.add(gnn_name(l, "att_src"), d, 1, d);
      init.add(gnn_name(l, "att_dst"), d, 1, d);
      init.add(gnn_name(l, "bias"), 1, d, d);
      break;
    case GnnKind::kGATv2:
      init.add(gnn_name(l, "weight_src"), d, d, d);
      init.add(gnn_name(l, "weight_dst"), d, d, d);
      init.add(gnn_name(l, "att"), d, 1, d);
      init.add(gnn_name(l, "bias"), 1, d, d);
      break;
    case GnnKind::kGIN:
      init.add(gnn_name(l, "mlp.w1"), d, d, d);
      init.add(gnn_name(l, "mlp.b1"), 1, d, d);
      init.add(gnn_name(l, "mlp.w2"), d, d, d);
      init.add(gnn_name(l, "mlp.b2"), 1, d, d);
      break;
    case GnnKind::kNone:
      break;
  }
}

}  // namespace

GraphTransformerModel build_model(const ArchitectureSpec& spec, const ModelScale& scale,
                                  std::uint64_t init_seed, const ModelIO& io,
                                  const EncodingConfig& config) {
  scale.validate();
  if (io.feature_dim <= 0 || io.output_dim <= 0) throw InvalidArgument("bad model io widths");
  if (io.task == Task::kGraphClassification && io.output_dim != 1) {
    throw InvalidArgument("graph readout has a single output");
  }
  if (config.k_le < 0 || config.k_svd < 0 || config.mask_threshold < 0 ||
      config.max_distance_bucket < 0 || config.max_degree < 0 || config.pem_dim <= 0) {
    throw InvalidArgument("bad encoding config");
  }
  GraphTransformerModel model;
  model.spec = spec;
  model.arch = Architecture::from_spec(spec);
  model.scale = scale;
  model.config = config;
  model.io = io;

  const int d = scale.hidden_dim;
  const int L = scale.layers;
  Initializer init(model.params, init_seed);

  init.add("input.weight", model.input_width(), d, model.input_width());
  if (model.arch.dc) {
    init.add("pe.degree_in", config.max_degree + 1, d, d);
    init.add("pe.degree_out", config.max_degree + 1, d, d);
  }
  const int distance_buckets = config.max_distance_bucket + 2;
  if (model.arch.se) init.add("bias.se", distance_buckets, 1, 1);
  if (model.arch.pem) {
    init.add("bias.pem.distance", distance_buckets, config.pem_dim, config.pem_dim);
    init.add("bias.pem.common", config.max_common_neighbors + 1, config.pem_dim, config.pem_dim);
    init.add("bias.pem.b", 2 * config.pem_dim, 1, 2 * config.pem_dim);
  }
  for (int l = 0; l < L; ++l) {
    for (int h = 0; h < scale.heads; ++h) {
      const std::string hs = std::to_string(h);
      init.add(block_name(l, ("attn.q" + hs).c_str()), d, scale.head_dim, d);
      init.add(block_name(l, ("attn.k" + hs).c_str()), d, scale.head_dim, d);
      init.add(block_name(l, ("attn.v" + hs).c_str()), d, scale.head_dim, d);
    }
    init.add(block_name(l, "attn.out"), scale.heads * scale.head_dim, d,
             scale.heads * scale.head_dim);
    init.add(block_name(l, "ffn.w1"), d, scale.ffn_dim, d);
    init.add(block_name(l, "ffn.b1"), 1, scale.ffn_dim, d);
    init.add(block_name(l, "ffn.w2"), scale.ffn_dim, d, scale.ffn_dim);
    init.add(block_name(l, "ffn.b2"), 1, d, scale.ffn_dim);
    add_gnn_params(init, model.arch.gnn, l, d);
  }
  // A single state is fused by identity.
  if (model.arch.topology == Topology::kJK && L > 1) init.add("jk.weight", L * d, d, L * d);
  init.add("head.weight", d, io.output_dim, d);
  init.add("head.bias", 1, io.output_dim, d);
  return model;
}

// ---------------------------------------------------------------------------
// Graph precomputation

GraphContext precompute(const GraphInstance& g, const GraphTransformerModel& model) {
  g.validate();
  if (g.feature_dim() != model.io.feature_dim) {
    throw InvalidArgument("graph feature width " + std::to_string(g.feature_dim()) +
                          " does not match model input " + std::to_string(model.io.feature_dim));
  }
  const EncodingConfig& cfg = model.config;
  GraphContext ctx;
  const int n = g.n;
  ctx.n = n;
  ctx.features = g.features;
  ctx.adjacency = g.adjacency();

  ctx.le = Matrix::Zero(n, cfg.k_le);
  if (model.arch.le && n > 0) {
    const int available = std::max(0, std::min(n - 1, n - count_nontrivial_components(g)));
    const int k = std::min(cfg.k_le, available);
    if (k > 0) ctx.le.leftCols(k) = normalized_laplacian_eig(g, k).vectors;
  }
  ctx.svd = Matrix::Zero(n, 2 * cfg.k_svd);
  if (model.arch.svd && n > 0) {
    const int k = std::min(cfg.k_svd, n);
    const SvdEmbedding e = adjacency_svd(g, k);
    ctx.svd.leftCols(k) = e.left;
    ctx.svd.middleCols(cfg.k_svd, k) = e.right;
  }

  const DegreeVectors deg = degree_vectors(g);
  ctx.degree_bucket.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ctx.degree_bucket[i] = std::min(deg.in_deg[i], cfg.max_degree);

  ctx.distances = bfs_all_pairs(g);
  const int unreachable_bucket = cfg.max_distance_bucket + 1;
  ctx.distance_bucket.resize(n, n);
  ctx.mask_bias = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const int dist = ctx.distances(i, j);
      const bool reachable = dist != DistanceMatrix::kUnreachable;
      ctx.distance_bucket(i, j) = reachable ? std::min(dist, cfg.max_distance_bucket)
                                            : unreachable_bucket;
      if (!reachable || dist > cfg.mask_threshold) ctx.mask_bias(i, j) = kMaskValue;
    }
    // a fully masked row attends only to itself
    if ((ctx.mask_bias.row(i).array() == kMaskValue).all()) ctx.mask_bias(i, i) = 0.0;
  }

  const Matrix common = ctx.adjacency * ctx.adjacency;
  ctx.common_neighbor_bucket.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      ctx.common_neighbor_bucket(i, j) =
          std::min(static_cast<int>(std::lround(common(i, j))), cfg.max_common_neighbors);

  const Matrix a_hat = ctx.adjacency + Matrix::Identity(n, n);
  Vector inv_sqrt(n);
  for (int i = 0; i < n; ++i) inv_sqrt(i) = 1.0 / std::sqrt(a_hat.row(i).sum());
  ctx.gcn_norm = inv_sqrt.asDiagonal() * a_hat * inv_sqrt.asDiagonal();

  ctx.mean_aggregation = ctx.adjacency;
  for (int i = 0; i < n; ++i) {
    const double deg_i = ctx.adjacency.row(i).sum();
    if (deg_i > 0) ctx.mean_aggregation.row(i) /= deg_i;
  }

  ctx.neighborhood_bias = Matrix::Constant(n, n, kMaskValue);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i == j || ctx.adjacency(i, j) != 0.0) ctx.neighborhood_bias(i, j) = 0.0;
  return ctx;
}

// ---------------------------------------------------------------------------
// Forward pass on a tape

namespace {

class ForwardBuilder {
 public:
  ForwardBuilder(Tape& tape, const GraphTransformerModel& model, const GraphContext* ctx,
                 bool with_grad, const ForwardOptions& options, ForwardTrace* trace)
      : tape_(tape), model_(model), ctx_(ctx), options_(options), trace_(trace) {
    for (const auto& [name, value] : model.params) {
      vars_[name] = with_grad ? tape.parameter(value) : tape.constant(value);
    }
  }

  const std::map<std::string, Var>& vars() const { return vars_; }
  Var p(const std::string& name) const { return vars_.at(name); }

  Var input_embedding() {
    std::vector<Var> parts{tape_.constant(ctx_->features)};
    if (model_.arch.le) parts.push_back(tape_.constant(ctx_->le));
    if (model_.arch.svd) parts.push_back(tape_.constant(ctx_->svd));
    Var x = parts.size() == 1 ? parts[0] : ad::concat_cols(tape_, parts);
    x = ad::matmul(tape_, x, p("input.weight"));
    if (model_.arch.dc) {
      x = ad::add(tape_, x, ad::gather_rows(tape_, p("pe.degree_in"), ctx_->degree_bucket));
      x = ad::add(tape_, x, ad::gather_rows(tape_, p("pe.degree_out"), ctx_->degree_bucket));
    }
    return x;
  }

  std::optional<Var> bias() {
    const Architecture& a = model_.arch;
    if (!a.has_bias()) return std::nullopt;
    std::optional<Var> total;
    auto accumulate = [&](Var term) { total = total ? ad::add(tape_, *total, term) : term; };
    if (a.se) accumulate(ad::gather_scalars(tape_, p("bias.se"), ctx_->distance_bucket));
    if (a.pem) {
      // psi_ij . b with psi_ij = [E_dist[bucket] | E_common[count]]
      const int k = model_.config.pem_dim;
      Var b = p("bias.pem.b");
      Var dist_score = ad::matmul(tape_, p("bias.pem.distance"), ad::slice_rows(tape_, b, 0, k));
      Var common_score = ad::matmul(tape_, p("bias.pem.common"), ad::slice_rows(tape_, b, k, k));
      accumulate(ad::add(tape_, ad::gather_scalars(tape_, dist_score, ctx_->distance_bucket),
                         ad::gather_scalars(tape_, common_score, ctx_->common_neighbor_bucket)));
    }
    if (a.mask) {
      if (total) total = ad::add_const(tape_, *total, ctx_->mask_bias);
      else total = tape_.constant(ctx_->mask_bias);
    }
    return total;
  }

  /// Eq. 1-2: multi-head attention plus the residual input.
  Var attention(int l, Var x, std::optional<Var> bias, std::vector<Matrix>* maps) {
    const ModelScale& s = model_.scale;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(s.hidden_dim));
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(s.heads));
    for (int h = 0; h < s.heads; ++h) {
      const std::string hs = std::to_string(h);
      Var q = ad::matmul(tape_, x, p(block_name(l, ("attn.q" + hs).c_str())));
      Var k = ad::matmul(tape_, x, p(block_name(l, ("attn.k" + hs).c_str())));
      Var v = ad::matmul(tape_, x, p(block_name(l, ("attn.v" + hs).c_str())));
      Var scores = ad::scale(tape_, ad::matmul_nt(tape_, q, k), inv_sqrt_d);
      if (bias) scores = ad::add(tape_, scores, *bias);
      Var probs = ad::softmax_rows(tape_, scores);
      if (maps) maps->push_back(tape_.value(probs));
      probs = dropout(probs, options_.dropout.attention);
      heads.push_back(ad::matmul(tape_, probs, v));
    }
    Var cat = heads.size() == 1 ? heads[0] : ad::concat_cols(tape_, heads);
    return ad::add(tape_, ad::matmul(tape_, cat, p(block_name(l, "attn.out"))), x);
  }

  /// Eq. 3: two-layer FFN with GELU.
  Var ffn(int l, Var o) {
    Var hidden = ad::gelu(tape_, ad::add_row(tape_, ad::matmul(tape_, o, p(block_name(l, "ffn.w1"))),
                                             p(block_name(l, "ffn.b1"))));
    hidden = dropout(hidden, options_.dropout.ffn);
    return ad::add_row(tape_, ad::matmul(tape_, hidden, p(block_name(l, "ffn.w2"))),
                       p(block_name(l, "ffn.b2")));
  }

  Var transformer(int l, Var x, std::optional<Var> bias, std::vector<Matrix>* maps) {
    return ffn(l, attention(l, x, bias, maps));
  }

  Var gnn(int l, Var x) {
    const EncodingConfig& cfg = model_.config;
    Var out{};
    switch (model_.arch.gnn) {
      case GnnKind::kGCN:
        out = ad::relu(tape_, ad::left_mul(tape_, ctx_->gcn_norm,
                                           ad::matmul(tape_, x, p(gnn_name(l, "weight")))));
        break;
      case GnnKind::kSAGE: {
        const Var parts[] = {x, ad::left_mul(tape_, ctx_->mean_aggregation, x)};
        Var cat = ad::concat_cols(tape_, parts);
        out = ad::relu(tape_, ad::add_row(tape_, ad::matmul(tape_, cat, p(gnn_name(l, "weight"))),
                                          p(gnn_name(l, "bias"))));
        break;
      }
      case GnnKind::kGAT: {
        Var h = ad::matmul(tape_, x, p(gnn_name(l, "weight")));
        Var self_score = ad::matmul(tape_, h, p(gnn_name(l, "att_dst")));
        Var nbr_score = ad::matmul(tape_, h, p(gnn_name(l, "att_src")));
        Var e = ad::leaky_relu(tape_, ad::outer_sum(tape_, self_score, nbr_score),
                               cfg.gat_negative_slope);
        Var alpha = ad::softmax_rows(tape_, ad::add_const(tape_, e, ctx_->neighborhood_bias));
        out = ad::relu(tape_, ad::add_row(tape_, ad::matmul(tape_, alpha, h), p(gnn_name(l, "bias"))));
        break;
      }
      case GnnKind::kGATv2: {
        Var src = ad::matmul(tape_, x, p(gnn_name(l, "weight_src")));
        Var dst = ad::matmul(tape_, x, p(gnn_name(l, "weight_dst")));
        Var e = ad::pairwise_leaky_score(tape_, dst, src, p(gnn_name(l, "att")),
                                         cfg.gat_negative_slope);
        Var alpha = ad::softmax_rows(tape_, ad::add_const(tape_, e, ctx_->neighborhood_bias));
        out = ad::relu(tape_, ad::add_row(tape_, ad::matmul(tape_, alpha, src), p(gnn_name(l, "bias"))));
        break;
      }
      case GnnKind::kGIN: {
        Var agg = ad::add(tape_, ad::scale(tape_, x, 1.0 + cfg.gin_eps),
                          ad::left_mul(tape_, ctx_->adjacency, x));
        Var hidden = ad::relu(tape_, ad::add_row(tape_, ad::matmul(tape_, agg, p(gnn_name(l, "mlp.w1"))),
                                                 p(gnn_name(l, "mlp.b1"))));
        out = ad::add_row(tape_, ad::matmul(tape_, hidden, p(gnn_name(l, "mlp.w2"))),
                          p(gnn_name(l, "mlp.b2")));
        break;
      }
      case GnnKind::kNone:
        throw InvalidArgument("gnn block requested for an architecture without one");
    }
    return dropout(out, options_.dropout.gnn);
  }

  /// f_l under the architecture's combination mode.
  Var block(int l, Var x, std::optional<Var> bias) {
    std::vector<Matrix>* maps = nullptr;
    if (trace_) {
      trace_->block_inputs.push_back(tape_.value(x));
      trace_->attention.emplace_back();
      maps = &trace_->attention.back();
    }
    Var out{};
    const Architecture& a = model_.arch;
    if (!a.has_gnn() || a.combination == Combination::kBefore) {
      out = transformer(l, x, bias, maps);
    } else if (a.combination == Combination::kAlternate) {
      out = transformer(l, gnn(l, x), bias, maps);
    } else {
      out = ffn(l, ad::add(tape_, attention(l, x, bias, maps), gnn(l, x)));
    }
    check_finite(out, l);
    if (trace_) trace_->block_outputs.push_back(tape_.value(out));
    return out;
  }

  /// Runs the topology and returns X^L.
  Var body() {
    const Architecture& a = model_.arch;
    const int L = model_.scale.layers;
    Var x0 = input_embedding();
    if (a.has_gnn() && a.combination == Combination::kBefore) {
      for (int l = 0; l < L; ++l) x0 = gnn(l, x0);
    }
    check_finite(x0, -1);
    std::optional<Var> b = bias();

    Var x = x0;
    switch (a.topology) {
      case Topology::kVanilla:
        for (int l = 0; l < L; ++l) x = block(l, x, b);
        break;
      case Topology::kJK: {
        std::vector<Var> states{x0};
        for (int l = 0; l + 1 < L; ++l) {
          x = block(l, x, b);
          states.push_back(x);
        }
        Var fused = states.size() == 1 ? states[0]
                                       : ad::matmul(tape_, ad::concat_cols(tape_, states), p("jk.weight"));
        x = block(L - 1, fused, b);
        break;
      }
      case Topology::kResidual: {
        std::optional<Var> prev;
        for (int l = 0; l < L; ++l) {
          Var in = prev ? ad::add(tape_, x, *prev) : x;
          prev = x;
          x = block(l, in, b);
        }
        break;
      }
      case Topology::kGCNII: {
        const double alpha = model_.config.gcnii_alpha;
        for (int l = 0; l < L; ++l) {
          x = ad::add(tape_, ad::scale(tape_, x0, alpha), ad::scale(tape_, block(l, x, b), 1.0 - alpha));
        }
        break;
      }
    }
    return x;
  }

  Var head(Var x, Task task) {
    Var pooled = task == Task::kNodeClassification ? x : ad::mean_rows(tape_, x);
    return ad::add_row(tape_, ad::matmul(tape_, pooled, p("head.weight")), p("head.bias"));
  }

 private:
  Var dropout(Var x, double rate) {
    if (!options_.training || rate <= 0.0) return x;
    if (!options_.rng) throw InvalidArgument("dropout requires an rng");
    const Matrix& v = tape_.value(x);
    Matrix keep(v.rows(), v.cols());
    const double scale = 1.0 / (1.0 - rate);
    for (Eigen::Index j = 0; j < keep.cols(); ++j)
      for (Eigen::Index i = 0; i < keep.rows(); ++i)
        keep(i, j) = options_.rng->bernoulli(rate) ? 0.0 : scale;
    return ad::mul_const(tape_, x, keep);
  }

  void check_finite(Var x, int block) const {
    if (!tape_.value(x).allFinite()) {
      throw NonFiniteError("non-finite activation after block " + std::to_string(block));
    }
  }

  Tape& tape_;
  const GraphTransformerModel& model_;
  const GraphContext* ctx_;
  ForwardOptions options_;
  ForwardTrace* trace_;
  std::map<std::string, Var> vars_;
};

Task task_of(const GraphTransformerModel& model) { return model.io.task; }

}  // namespace

Matrix apply_positional_embeddings(const GraphTransformerModel& model, const GraphContext& ctx) {
  Tape tape;
  ForwardBuilder fb(tape, model, &ctx, false, {}, nullptr);
  return tape.value(fb.input_embedding());
}

Matrix attention_bias(const GraphTransformerModel& model, const GraphContext& ctx) {
  Tape tape;
  ForwardBuilder fb(tape, model, &ctx, false, {}, nullptr);
  auto b = fb.bias();
  return b ? tape.value(*b) : Matrix::Zero(ctx.n, ctx.n);
}

BlockOutput transformer_block_forward(const GraphTransformerModel& model, int block,
                                      const Matrix& x, const Matrix& bias) {
  if (block < 0 || block >= model.scale.layers) throw InvalidArgument("block index out of range");
  Tape tape;
  ForwardBuilder fb(tape, model, nullptr, false, {}, nullptr);
  BlockOutput out;
  Var xv = tape.constant(x);
  Var y = fb.transformer(block, xv, tape.constant(bias), &out.attention);
  out.x = tape.value(y);
  if (!out.x.allFinite()) throw NonFiniteError("non-finite activation in transformer block");
  return out;
}

Matrix gnn_block_forward(const GraphTransformerModel& model, int block, const Matrix& x,
                         const GraphContext& ctx) {
  if (!model.arch.has_gnn()) throw InvalidArgument("architecture has no GNN block");
  if (block < 0 || block >= model.scale.layers) throw InvalidArgument("block index out of range");
  Tape tape;
  ForwardBuilder fb(tape, model, &ctx, false, {}, nullptr);
  return tape.value(fb.gnn(block, tape.constant(x)));
}

ForwardTrace assemble_forward(const GraphTransformerModel& model, const GraphContext& ctx,
                              const ForwardOptions& options) {
  Tape tape;
  ForwardTrace trace;
  ForwardBuilder fb(tape, model, &ctx, false, options, &trace);
  Var x = fb.body();
  trace.final_representation = tape.value(x);
  trace.output = tape.value(fb.head(x, task_of(model)));
  return trace;
}

namespace {

Var build_loss(Tape& tape, ForwardBuilder& fb, const LossTargets& targets) {
  Var out = fb.head(fb.body(), targets.task);
  Var loss{};
  if (targets.task == Task::kNodeClassification) {
    if (targets.rows.empty()) throw InvalidArgument("empty loss mask");
    loss = ad::cross_entropy(tape, out, targets.labels, targets.rows);
  } else {
    loss = ad::squared_error(tape, out, Matrix::Constant(1, 1, targets.graph_target));
  }
  if (!std::isfinite(tape.value(loss)(0, 0))) throw NonFiniteError("non-finite loss");
  return loss;
}

void check_task(const GraphTransformerModel& model, const LossTargets& targets) {
  if (targets.task != task_of(model)) {
    throw InvalidArgument("targets do not match the model's output head");
  }
}

}  // namespace

LossAndGradients loss_and_gradients(const GraphTransformerModel& model, const GraphContext& ctx,
                                    const LossTargets& targets, const ForwardOptions& options) {
  check_task(model, targets);
  Tape tape;
  ForwardBuilder fb(tape, model, &ctx, true, options, nullptr);
  Var loss = build_loss(tape, fb, targets);
  tape.backward(loss);
  LossAndGradients out;
  out.loss = tape.value(loss)(0, 0);
  for (const auto& [name, var] : fb.vars()) {
    const Matrix& g = tape.grad(var);
    const Matrix& v = model.params.at(name);
    out.grads[name] = g.size() == 0 ? Matrix::Zero(v.rows(), v.cols()) : g;
  }
  return out;
}

double loss_value(const GraphTransformerModel& model, const GraphContext& ctx,
                  const LossTargets& targets) {
  check_task(model, targets);
  Tape tape;
  ForwardBuilder fb(tape, model, &ctx, false, {}, nullptr);
  return tape.value(build_loss(tape, fb, targets))(0, 0);
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["format_version"] = kCheckpointVersion;
  doc["tensors"] = nlohmann::json::array();
  for (const auto& [name, m] : params) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    doc["tensors"].push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"data", data}});
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << doc.dump() << '\n';
}

ParameterSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("$", e.what());
  }
  if (!doc.contains("format_version") || doc["format_version"] != kCheckpointVersion) {
    throw SchemaError("format_version", "unsupported checkpoint version");
  }
  ParameterSet params;
  for (const auto& t : doc.at("tensors")) {
    const auto rows = t.at("shape").at(0).get<Eigen::Index>();
    const auto cols = t.at("shape").at(1).get<Eigen::Index>();
    const auto data = t.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw SchemaError("tensors." + t.at("name").get<std::string>(), "data/shape mismatch");
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = data[static_cast<std::size_t>(i * cols + j)];
    params[t.at("name").get<std::string>()] = std::move(m);
  }
  return params;
}

}  // namespace egtas
