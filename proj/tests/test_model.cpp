#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "egtas/error.hpp"
#include "egtas/model.hpp"
#include "gradcheck.hpp"
#include "graphs.hpp"

using namespace egtas;
using namespace egtas::testing;

namespace {

ArchitectureSpec spec(std::string topo, std::string comb, std::string gnn, std::vector<std::string> pe = {},
                      std::vector<std::string> am = {}) {
  return {std::move(topo), std::move(comb), std::move(gnn), std::move(pe), std::move(am), "Mini"};
}

GraphTransformerModel desk_model(const ArchitectureSpec& s, int feature_dim = 3, int classes = 3,
                                 std::uint64_t seed = 11, EncodingConfig cfg = {},
                                 Task task = Task::kNodeClassification) {
  ModelIO io{task, feature_dim, task == Task::kNodeClassification ? classes : 1};
  return build_model(s, ModelScale::preset("Desk"), seed, io, cfg);
}

GraphInstance six_node_graph() {
  return make_graph(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {1, 4}, {0, 2}});
}

LossTargets nc_targets(int n, int classes) {
  LossTargets t;
  t.task = Task::kNodeClassification;
  for (int i = 0; i < n; ++i) {
    t.labels.push_back(i % classes);
    t.rows.push_back(i);
  }
  return t;
}

void check_rows_stochastic(const ForwardTrace& trace) {
  for (const auto& block : trace.attention)
    for (const auto& a : block)
      for (Eigen::Index i = 0; i < a.rows(); ++i) CHECK(std::abs(a.row(i).sum() - 1.0) <= 1e-6);
}

}  // namespace

TEST_CASE("scale presets") {
  CHECK(ModelScale::preset("Mini") == ModelScale{3, 64, 4, 5, 64});
  CHECK(ModelScale::preset("Small") == ModelScale{6, 80, 8, 10, 80});
  CHECK(ModelScale::preset("Middle") == ModelScale{12, 80, 8, 10, 80});
  CHECK(ModelScale::preset("Large") == ModelScale{12, 512, 32, 16, 512});
  CHECK(ModelScale::preset("Desk") == ModelScale{2, 8, 2, 4, 16});
  CHECK_THROWS_AS(ModelScale::preset("Huge"), UnknownOptionError);
}

TEST_CASE("build_model is deterministic and omits absent parts") {
  const auto s = spec("Vanilla", "Before", "None");
  const auto a = desk_model(s), b = desk_model(s);
  CHECK(a.params == b.params);
  CHECK_FALSE(desk_model(s, 3, 3, 12).params == a.params);
  for (const auto& name : a.params.names()) CHECK(name.rfind("gnn", 0) != 0);
  CHECK(a.params.all_finite());

  const auto g = desk_model(spec("JK", "Alternate", "GAT", {"DC"}, {"SE", "PEM"}));
  CHECK(g.params.contains("gnn0.att_src"));
  CHECK(g.params.contains("jk.weight"));
  CHECK(g.params.contains("pe.degree_in"));
  CHECK(g.params.contains("bias.se"));
  CHECK(g.params.contains("bias.pem.b"));
  // uniform init bound 1/sqrt(fan_in)
  const Matrix& w = g.params.at("block0.ffn.w2");
  CHECK(w.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(16.0));
}

TEST_CASE("an unrelated tensor does not shift another tensor's init") {
  const auto plain = desk_model(spec("Vanilla", "Before", "None"));
  const auto with_gnn = desk_model(spec("Vanilla", "Before", "GCN"));
  CHECK(plain.params.at("block1.attn.q0") == with_gnn.params.at("block1.attn.q0"));
}

TEST_CASE("positional embeddings") {
  SUBCASE("empty pe set is a plain projection") {
    const auto m = desk_model(spec("Vanilla", "Before", "None"));
    const auto g = six_node_graph();
    const Matrix x0 = apply_positional_embeddings(m, precompute(g, m));
    CHECK((x0 - g.features * m.params.at("input.weight")).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("isolated node gets the degree-0 rows") {
    const auto m = desk_model(spec("Vanilla", "Before", "None", {"DC"}));
    const auto g = make_graph(4, {{0, 1}, {1, 2}});
    const Matrix x0 = apply_positional_embeddings(m, precompute(g, m));
    const Matrix expect = g.features.row(3) * m.params.at("input.weight") +
                          m.params.at("pe.degree_in").row(0) + m.params.at("pe.degree_out").row(0);
    CHECK((x0.row(3) - expect).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("all embeddings on an 8-node graph") {
    const auto m = desk_model(spec("Vanilla", "Before", "None", {"LE", "SVD", "DC"}));
    const auto g = random_graph(8, 0.4, 3);
    const Matrix x0 = apply_positional_embeddings(m, precompute(g, m));
    CHECK(x0.rows() == 8);
    CHECK(x0.cols() == 8);
    CHECK(x0.allFinite());
    CHECK(m.input_width() == 3 + 4 + 8);
  }
}

TEST_CASE("attention bias") {
  const auto g = path_graph(5);
  SUBCASE("empty am set is zero") {
    const auto m = desk_model(spec("Vanilla", "Before", "None"));
    const Matrix b = attention_bias(m, precompute(g, m));
    CHECK(b.rows() == 5);
    CHECK(b.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("mask at the diameter masks nothing") {
    EncodingConfig cfg;
    cfg.mask_threshold = 4;
    const auto m = desk_model(spec("Vanilla", "Before", "None", {}, {"Mask"}), 3, 3, 11, cfg);
    CHECK(attention_bias(m, precompute(g, m)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("mask at zero keeps only the diagonal") {
    EncodingConfig cfg;
    cfg.mask_threshold = 0;
    const auto m = desk_model(spec("Vanilla", "Before", "None", {}, {"Mask"}), 3, 3, 11, cfg);
    const Matrix b = attention_bias(m, precompute(g, m));
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) CHECK(b(i, j) == (i == j ? 0.0 : kMaskValue));
  }
  SUBCASE("unreachable pairs are masked and use their own bucket") {
    EncodingConfig cfg;
    cfg.mask_threshold = 8;
    const auto m = desk_model(spec("Vanilla", "Before", "None", {}, {"SE", "Mask"}), 3, 3, 11, cfg);
    const auto two = make_graph(4, {{0, 1}, {2, 3}});
    const auto ctx = precompute(two, m);
    CHECK(ctx.distance_bucket(0, 2) == cfg.max_distance_bucket + 1);
    const Matrix b = attention_bias(m, ctx);
    CHECK(b(0, 2) < -1e8);
    CHECK(b(0, 1) == doctest::Approx(m.params.at("bias.se")(1, 0)));
  }
  SUBCASE("distances beyond the cap share the last bucket") {
    EncodingConfig cfg;
    cfg.max_distance_bucket = 2;
    const auto m = desk_model(spec("Vanilla", "Before", "None", {}, {"SE"}), 3, 3, 11, cfg);
    const auto ctx = precompute(g, m);
    CHECK(ctx.distance_bucket(0, 4) == 2);
    CHECK(ctx.distance_bucket(0, 3) == 2);
  }
}

TEST_CASE("transformer block") {
  const auto m = desk_model(spec("Vanilla", "Before", "None"));
  SUBCASE("single node attends to itself") {
    const Matrix x = Matrix::Random(1, 8);
    const auto out = transformer_block_forward(m, 0, x, Matrix::Zero(1, 1));
    REQUIRE(out.attention.size() == 2);
    for (const auto& a : out.attention) CHECK(a(0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("rows sum to one with zero bias") {
    const Matrix x = Matrix::Random(7, 8);
    const auto out = transformer_block_forward(m, 1, x, Matrix::Zero(7, 7));
    for (const auto& a : out.attention)
      for (Eigen::Index i = 0; i < 7; ++i) CHECK(std::abs(a.row(i).sum() - 1.0) <= 1e-6);
    CHECK(out.x.rows() == 7);
    CHECK(out.x.cols() == 8);
  }
  SUBCASE("masked pair gets negligible weight") {
    const Matrix x = Matrix::Random(4, 8) * 3.0;
    Matrix bias = Matrix::Zero(4, 4);
    bias(0, 3) = bias(3, 0) = kMaskValue;
    const auto out = transformer_block_forward(m, 0, x, bias);
    for (const auto& a : out.attention) {
      CHECK(a(0, 3) < 1e-12);
      CHECK(a(3, 0) < 1e-12);
    }
  }
}

TEST_CASE("gnn blocks") {
  SUBCASE("GCN without edges is act(XW)") {
    const auto m = desk_model(spec("Vanilla", "Alternate", "GCN"));
    const auto g = make_graph(4, {});
    const Matrix x = Matrix::Random(4, 8);
    const Matrix out = gnn_block_forward(m, 0, x, precompute(g, m));
    const Matrix expect = (x * m.params.at("gnn0.weight")).cwiseMax(0.0);
    CHECK((out - expect).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("GIN on an isolated node is the MLP") {
    const auto m = desk_model(spec("Vanilla", "Alternate", "GIN"));
    const auto g = make_graph(3, {{0, 1}});
    const Matrix x = Matrix::Random(3, 8);
    const Matrix out = gnn_block_forward(m, 1, x, precompute(g, m));
    const auto& p = m.params;
    const Matrix h = ((x.row(2) * p.at("gnn1.mlp.w1")) + p.at("gnn1.mlp.b1")).cwiseMax(0.0);
    const Matrix expect = h * p.at("gnn1.mlp.w2") + p.at("gnn1.mlp.b2");
    CHECK((out.row(2) - expect).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("GAT weights sum to one over the closed neighborhood") {
    // identical rows: any convex combination returns the row itself
    for (const char* kind : {"GAT", "GATv2"}) {
      const auto m = desk_model(spec("Vanilla", "Alternate", kind));
      const auto g = random_graph(6, 0.5, 9);
      Matrix x(6, 8);
      x.rowwise() = Eigen::RowVectorXd::Random(8);
      const Matrix out = gnn_block_forward(m, 0, x, precompute(g, m));
      const std::string w = std::string(kind) == "GAT" ? "gnn0.weight" : "gnn0.weight_src";
      const Matrix expect = ((x.row(0) * m.params.at(w)) + m.params.at("gnn0.bias")).cwiseMax(0.0);
      for (int i = 0; i < 6; ++i) CHECK((out.row(i) - expect).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  SUBCASE("None has no gnn block") {
    const auto m = desk_model(spec("Vanilla", "Alternate", "None"));
    const auto g = path_graph(3);
    CHECK_THROWS_AS(gnn_block_forward(m, 0, Matrix::Zero(3, 8), precompute(g, m)), InvalidArgument);
  }
}

TEST_CASE("GCNII with alpha 0 equals Vanilla") {
  EncodingConfig cfg;
  cfg.gcnii_alpha = 0.0;
  const auto g = random_graph(9, 0.4, 5);
  for (const char* comb : {"Before", "Alternate", "Parallel"}) {
    const auto v = desk_model(spec("Vanilla", comb, "SAGE", {"LE"}, {"SE"}), 3, 3, 4, cfg);
    const auto c = desk_model(spec("GCNII", comb, "SAGE", {"LE"}, {"SE"}), 3, 3, 4, cfg);
    const Matrix a = assemble_forward(v, precompute(g, v)).output;
    const Matrix b = assemble_forward(c, precompute(g, c)).output;
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("one block: Vanilla, JK and Residual see the same inputs") {
  const ModelScale one{1, 8, 2, 4, 16};
  const ModelIO io{Task::kNodeClassification, 3, 3};
  const auto g = random_graph(7, 0.5, 2);
  std::vector<std::vector<Matrix>> inputs;
  for (const char* topo : {"Vanilla", "JK", "Residual"}) {
    const auto m = build_model(spec(topo, "Alternate", "GCN"), one, 3, io);
    inputs.push_back(assemble_forward(m, precompute(g, m)).block_inputs);
  }
  REQUIRE(inputs[0].size() == 1);
  CHECK(inputs[0][0] == inputs[1][0]);
  CHECK(inputs[0][0] == inputs[2][0]);
}

TEST_CASE("topology wiring") {
  const auto g = random_graph(6, 0.5, 8);
  SUBCASE("Residual adds the previous block input") {
    const auto m = desk_model(spec("Residual", "Before", "None"));
    const auto t = assemble_forward(m, precompute(g, m));
    REQUIRE(t.block_inputs.size() == 2);
    CHECK((t.block_inputs[1] - (t.block_outputs[0] + t.block_inputs[0])).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("JK fuses all earlier states into the last block") {
    const auto m = desk_model(spec("JK", "Before", "None"));
    const auto t = assemble_forward(m, precompute(g, m));
    Matrix cat(6, 16);
    cat << t.block_inputs[0], t.block_outputs[0];
    CHECK((t.block_inputs[1] - cat * m.params.at("jk.weight")).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("GCNII mixes in the initial representation") {
    const auto m = desk_model(spec("GCNII", "Before", "None"));
    const auto t = assemble_forward(m, precompute(g, m));
    const Matrix x0 = t.block_inputs[0];
    CHECK((t.block_inputs[1] - (0.1 * x0 + 0.9 * t.block_outputs[0])).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("Before runs the gnn stack ahead of the first block") {
    const auto m = desk_model(spec("Vanilla", "Before", "GCN"));
    const auto ctx = precompute(g, m);
    const auto t = assemble_forward(m, ctx);
    Matrix x = apply_positional_embeddings(m, ctx);
    for (int l = 0; l < 2; ++l) x = gnn_block_forward(m, l, x, ctx);
    CHECK((t.block_inputs[0] - x).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("Parallel sums attention and gnn before the FFN") {
    const auto m = desk_model(spec("Vanilla", "Parallel", "GIN"));
    const auto ctx = precompute(g, m);
    const auto t = assemble_forward(m, ctx);
    CHECK(t.block_inputs.size() == 2);
    CHECK(t.output.allFinite());
  }
}

TEST_CASE("attention rows are stochastic across architectures") {
  const auto g = random_graph(8, 0.35, 21);
  for (const char* topo : {"Vanilla", "JK", "Residual", "GCNII"})
    for (const char* comb : {"Before", "Alternate", "Parallel"}) {
      const auto m = desk_model(spec(topo, comb, "GATv2", {"LE", "SVD", "DC"}, {"PEM", "SE", "Mask"}));
      check_rows_stochastic(assemble_forward(m, precompute(g, m)));
    }
}

TEST_CASE("permutation equivariance") {
  const auto g = random_graph(7, 0.45, 31);
  std::vector<int> perm{3, 0, 6, 1, 5, 2, 4};  // new index of old node i
  GraphInstance h;
  h.n = g.n;
  h.features = Matrix(g.n, g.feature_dim());
  for (int i = 0; i < g.n; ++i) h.features.row(perm[i]) = g.features.row(i);
  for (auto [u, v] : g.edges) h.edges.emplace_back(perm[u], perm[v]);
  for (const char* gnn : {"GCN", "SAGE", "GAT", "GATv2", "GIN", "None"}) {
    const auto m = desk_model(spec("Residual", "Alternate", gnn, {"DC"}, {"PEM", "SE", "Mask"}));
    const Matrix a = assemble_forward(m, precompute(g, m)).final_representation;
    const Matrix b = assemble_forward(m, precompute(h, m)).final_representation;
    for (int i = 0; i < g.n; ++i) CHECK((a.row(i) - b.row(perm[i])).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("losses") {
  const auto g = six_node_graph();
  SUBCASE("uniform logits give ln C") {
    for (int classes : {2, 3, 5}) {
      auto m = desk_model(spec("Vanilla", "Alternate", "GCN"), 3, classes);
      m.params["head.weight"].setZero();
      m.params["head.bias"].setZero();
      const double loss = loss_value(m, precompute(g, m), nc_targets(6, classes));
      CHECK(std::abs(loss - std::log(static_cast<double>(classes))) <= 1e-9);
    }
  }
  SUBCASE("graph loss vanishes at the target") {
    const auto m = desk_model(spec("JK", "Parallel", "SAGE"), 3, 1, 11, {}, Task::kGraphClassification);
    const auto ctx = precompute(g, m);
    LossTargets t;
    t.task = Task::kGraphClassification;
    t.graph_target = assemble_forward(m, ctx).output(0, 0);
    const auto lg = loss_and_gradients(m, ctx, t);
    CHECK(lg.loss == 0.0);
    CHECK(lg.grads.at("head.weight").cwiseAbs().maxCoeff() == 0.0);
    CHECK(lg.grads.at("head.bias").cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("empty mask and wrong task are rejected") {
    const auto m = desk_model(spec("Vanilla", "Before", "None"));
    LossTargets t = nc_targets(6, 3);
    t.rows.clear();
    CHECK_THROWS_AS(loss_value(m, precompute(g, m), t), InvalidArgument);
    t = nc_targets(6, 3);
    t.task = Task::kGraphClassification;
    CHECK_THROWS_AS(loss_value(m, precompute(g, m), t), InvalidArgument);
  }
}

TEST_CASE("gradients match central differences on a tiny model") {
  const auto g = six_node_graph();
  for (const auto& s : {spec("Vanilla", "Alternate", "GCN", {"LE", "DC"}, {"SE", "Mask"}),
                        spec("JK", "Parallel", "GATv2", {"SVD"}, {"PEM"}),
                        spec("GCNII", "Before", "GIN", {"DC"}, {"PEM", "SE"})}) {
    const auto m = desk_model(s);
    const auto r = gradient_check(m, precompute(g, m), nc_targets(6, 3), 1e-4);
    CHECK_MESSAGE(r.worst_rel_error <= 1e-4, r.worst_param);
    CHECK(r.coords == m.params.num_scalars());
  }
  SUBCASE("graph readout") {
    const auto m = desk_model(spec("Residual", "Alternate", "SAGE", {"DC"}, {"SE"}), 3, 1, 5, {},
                              Task::kGraphClassification);
    LossTargets t;
    t.task = Task::kGraphClassification;
    t.graph_target = 1.0;
    const auto r = gradient_check(m, precompute(g, m), t, 1e-4);
    CHECK_MESSAGE(r.worst_rel_error <= 1e-4, r.worst_param);
  }
}

TEST_CASE("dropout only acts in training mode") {
  const auto g = six_node_graph();
  const auto m = desk_model(spec("Vanilla", "Parallel", "GAT"));
  const auto ctx = precompute(g, m);
  ForwardOptions opts;
  opts.training = true;
  opts.dropout = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(assemble_forward(m, ctx, opts), InvalidArgument);
  SeededRng r1(1), r2(1), r3(2);
  opts.rng = &r1;
  const Matrix a = assemble_forward(m, ctx, opts).output;
  opts.rng = &r2;
  const Matrix b = assemble_forward(m, ctx, opts).output;
  opts.rng = &r3;
  const Matrix c = assemble_forward(m, ctx, opts).output;
  CHECK(a == b);
  CHECK_FALSE(a == c);
  ForwardOptions eval;
  eval.dropout = {0.5, 0.5, 0.5};
  CHECK(assemble_forward(m, ctx, eval).output == assemble_forward(m, ctx).output);
}

TEST_CASE("non-finite parameters raise") {
  auto m = desk_model(spec("Vanilla", "Before", "None"));
  m.params["block0.ffn.b2"](0, 0) = std::nan("");
  const auto g = six_node_graph();
  CHECK_THROWS_AS(assemble_forward(m, precompute(g, m)), NonFiniteError);
}

TEST_CASE("feature width mismatch is rejected") {
  const auto m = desk_model(spec("Vanilla", "Before", "None"), 4);
  CHECK_THROWS_AS(precompute(six_node_graph(), m), InvalidArgument);
}

TEST_CASE("checkpoint round trip") {
  const auto m = desk_model(spec("JK", "Alternate", "GATv2", {"LE", "DC"}, {"PEM", "SE"}));
  const auto path = std::filesystem::temp_directory_path() / "egtas_ckpt_test.json";
  save_checkpoint(m.params, path);
  const ParameterSet back = load_checkpoint(path);
  CHECK(back == m.params);
  {
    std::ofstream out(path);
    out << R"({"format_version": 99, "tensors": []})";
  }
  CHECK_THROWS_AS(load_checkpoint(path), SchemaError);
  std::filesystem::remove(path);
}
