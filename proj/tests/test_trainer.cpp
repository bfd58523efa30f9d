#include <doctest.h>

#include <cfloat>
#include <cmath>

#include "egtas/datasets.hpp"
#include "egtas/error.hpp"
#include "egtas/trainer.hpp"

using namespace egtas;

namespace {

Dataset sbm(std::uint64_t seed = 3) {
  SbmConfig cfg;
  cfg.seed = seed;
  return make_node_dataset(generate_sbm(cfg));
}

Dataset triangles(std::uint64_t seed = 3) {
  GraphSetConfig cfg;
  cfg.num_graphs = 30;
  cfg.seed = seed;
  return make_graph_dataset(generate_graph_set(cfg), seed);
}

GraphTransformerModel model_for(const Dataset& data, const ArchitectureSpec& spec, std::uint64_t seed = 1) {
  ModelIO io{data.task, data.feature_dim(), data.task == Task::kNodeClassification ? data.num_classes : 1};
  return build_model(spec, ModelScale::preset("Desk"), seed, io);
}

const ArchitectureSpec kSpec{"Vanilla", "Alternate", "GCN", {"DC"}, {"SE"}, "Mini"};

TrainConfig short_cfg(int steps = 20) {
  TrainConfig cfg;
  cfg.max_steps = steps;
  cfg.warmup_steps = steps / 4;
  return cfg;
}

}  // namespace

TEST_CASE("warm-up schedule is exactly piecewise linear") {
  TrainConfig cfg;
  cfg.learning_rate = 0.04;
  cfg.warmup_steps = 8;
  cfg.max_steps = 20;
  for (int s = 1; s <= 20; ++s) {
    const double expect = s <= 8 ? 0.04 * s / 8.0 : 0.04;
    CHECK(learning_rate_at(cfg, s) == expect);
  }
  cfg.warmup_steps = 0;
  CHECK(learning_rate_at(cfg, 1) == 0.04);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.warmup_steps = cfg.max_steps + 1;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.dropout.ffn = 1.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.learning_rate = -1;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("AdamW") {
  ParameterSet p;
  p["w"] = Matrix::Constant(2, 2, 0.5);
  SUBCASE("zero gradients leave parameters unchanged") {
    AdamW opt(p, 0.0);
    const ParameterSet before = p;
    for (int i = 0; i < 5; ++i) opt.step(p, p.zeros_like(), 0.1);
    CHECK(p == before);
    CHECK(opt.steps_taken() == 5);
  }
  SUBCASE("first step matches the closed form") {
    AdamW opt(p, 0.01);
    ParameterSet g = p.zeros_like();
    g["w"] << 2.0, -0.5, 0.0, 1e-3;
    opt.step(p, g, 0.1);
    // bias-corrected moments equal g and g^2 after one step
    for (int i = 0; i < 4; ++i) {
      const double gi = g.at("w").data()[i];
      const double expect = 0.5 - 0.1 * (gi / (std::abs(gi) + 1e-8) + 0.01 * 0.5);
      CHECK(p.at("w").data()[i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("shape mismatch") {
    AdamW opt(p, 0.0);
    ParameterSet g;
    g["w"] = Matrix::Zero(3, 2);
    CHECK_THROWS_AS(opt.step(p, g, 0.1), InvalidArgument);
  }
}

TEST_CASE("zero learning rate keeps the initial parameters") {
  const Dataset data = sbm();
  auto model = model_for(data, kSpec);
  const ParameterSet init = model.params;
  TrainConfig cfg = short_cfg(10);
  cfg.learning_rate = 0.0;
  const auto out = train(model, data, cfg);
  CHECK_FALSE(out.diverged);
  CHECK(out.steps == 10);
  CHECK(model.params == init);
}

TEST_CASE("desk model on the SBM dataset drops below ln C") {
  const Dataset data = sbm();
  auto model = model_for(data, kSpec);
  TrainConfig cfg;
  cfg.max_steps = 300;
  cfg.warmup_steps = 30;
  train(model, data, cfg);
  CHECK(dataset_loss(model, data, Split::kTrain) < std::log(static_cast<double>(data.num_classes)));
}

TEST_CASE("graph-task training runs mini-batches") {
  const Dataset data = triangles();
  auto model = model_for(data, {"Residual", "Parallel", "GIN", {"DC"}, {"PEM"}, "Mini"});
  const double before = dataset_loss(model, data, Split::kTrain);
  TrainConfig cfg = short_cfg(60);
  cfg.learning_rate = 5e-3;
  const auto out = train(model, data, cfg);
  CHECK_FALSE(out.diverged);
  CHECK(dataset_loss(model, data, Split::kTrain) < before);
}

TEST_CASE("evaluate acc equals argmax-and-count") {
  const Dataset data = sbm(9);
  auto model = model_for(data, kSpec);
  train(model, data, short_cfg(40));
  const auto& g = data.graphs.front();
  const Matrix logits = assemble_forward(model, precompute(g, model)).output;
  for (Split split : {Split::kTrain, Split::kVal, Split::kTest}) {
    const auto& mask = split == Split::kTrain ? g.split_masks->train
                       : split == Split::kVal ? g.split_masks->val
                                              : g.split_masks->test;
    int hit = 0, total = 0;
    for (int i = 0; i < g.n; ++i) {
      if (!mask[i]) continue;
      int best = 0;
      for (int c = 1; c < logits.cols(); ++c)
        if (logits(i, c) > logits(i, best)) best = c;
      hit += best == (*g.node_labels)[i];
      ++total;
    }
    CHECK(evaluate_metric(model, data, "acc", split) == static_cast<double>(hit) / total);
  }
  CHECK_THROWS_AS(evaluate_metric(model, data, "auc"), InvalidArgument);
  CHECK_THROWS_AS(evaluate_metric(model, data, "f1"), UnknownOptionError);
}

TEST_CASE("graph-task metrics") {
  const Dataset data = triangles(5);
  auto model = model_for(data, kSpec);
  train(model, data, short_cfg(20));
  const double acc = evaluate_metric(model, data, "acc");
  const double auc = evaluate_metric(model, data, "auc");
  const double mae = evaluate_metric(model, data, "mae");
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK(auc >= 0.0);
  CHECK(auc <= 1.0);
  CHECK(mae >= 0.0);
  CHECK(default_metric(data) == "acc");
}

TEST_CASE("fitness") {
  const Dataset data = sbm();
  const ArchitectureEncoding enc{0, 1, 0, 3, 1, 0};
  FitnessOptions opts;
  opts.scale_override = "Desk";
  const TrainConfig cfg = short_cfg(30);
  SUBCASE("deterministic") {
    const auto a = fitness(enc, data, cfg, opts);
    const auto b = fitness(enc, data, cfg, opts);
    CHECK(a.value == b.value);
    CHECK(a.wall_time > 0);
    CHECK(a.metric_name == "acc");
    CHECK_FALSE(a.minimize);
    CHECK_FALSE(a.diverged);
    CHECK(a.value >= 0.0);
    CHECK(a.value <= 1.0);
  }
  SUBCASE("divergence yields the worst value") {
    TrainConfig wild = cfg;
    wild.learning_rate = 1e300;
    wild.warmup_steps = 0;
    const auto r = fitness(enc, data, wild, opts);
    CHECK(r.diverged);
    CHECK(r.value == 0.0);
    CHECK(r.wall_time > 0);
    FitnessOptions mae = opts;
    mae.metric_name = "mae";
    const auto m = fitness(enc, data, wild, mae);
    CHECK(m.diverged);
    CHECK(m.value == DBL_MAX);
    CHECK(m.minimize);
  }
  SUBCASE("invalid encoding") {
    CHECK_THROWS_AS(fitness({4, 0, 0, 0, 0, 0}, data, cfg, opts), OutOfBoundsError);
  }
}

TEST_CASE("fitness record json") {
  FitnessRecord r;
  r.encoding = {1, 2, 3, 4, 5, 3};
  r.value = 0.75;
  r.wall_time = 1.5;
  r.seed = 42;
  const auto back = fitness_record_from_json(to_json(r));
  CHECK(back.encoding == r.encoding);
  CHECK(back.value == r.value);
  CHECK(back.seed == 42);
  CHECK_FALSE(back.minimize);
  nlohmann::json bad = to_json(r);
  bad["metric_name"] = "f1";
  CHECK_THROWS_AS(fitness_record_from_json(bad), SchemaError);
  bad = to_json(r);
  bad["value"] = 1.5;
  CHECK_THROWS_AS(fitness_record_from_json(bad), SchemaError);
  bad = to_json(r);
  bad["minimize"] = true;
  CHECK_THROWS_AS(fitness_record_from_json(bad), SchemaError);
  bad = to_json(r);
  bad.erase("value");
  CHECK_THROWS_AS(fitness_record_from_json(bad), SchemaError);
}
