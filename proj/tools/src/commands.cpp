#include "egtas_cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "egtas/datasets.hpp"
#include "egtas/evo_search.hpp"
#include "egtas/metrics.hpp"
#include "egtas/surrogate.hpp"
#include "egtas_cli/evaluator.hpp"

namespace egtas::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

fs::path input_path(const std::string& override_path, const CommonArgs& args, const char* name) {
  return override_path.empty() ? args.out_dir / name : fs::path(override_path);
}

fs::path dataset_path(const CommonArgs& args, const RunConfig& cfg) {
  if (!args.dataset.empty()) return args.dataset;
  if (!cfg.dataset.path.empty()) return cfg.dataset.path;
  return args.out_dir / artifact::kDataset;
}

json table_json(const OperationTable& t) {
  return {{"topology", t.topology_options},    {"combination", t.combination_options},
          {"gnn_block", t.gnn_options},        {"pe_set", t.pe_options},
          {"am_set", t.am_options},            {"scale", t.scale_options}};
}

json spec_json(const ArchitectureSpec& s) {
  return {{"topology", s.topology}, {"combination", s.combination}, {"gnn_block", s.gnn_block},
          {"pe_set", s.pe_set},     {"am_set", s.am_set},           {"scale", s.scale}};
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string(), e.what());
  }
}

/// Merges one command's entry into the run manifest.
void record_manifest(const CommonArgs& args, const RunConfig& cfg, const std::string& command,
                     const std::string& started, const std::map<std::string, fs::path>& artifacts) {
  const fs::path path = args.out_dir / artifact::kManifest;
  json m = fs::exists(path) ? read_json_file(path) : json::object();
  m["tool_version"] = kToolVersion;
  m["seed"] = cfg.seed;
  m["config"] = to_json(cfg);
  m["operation_table"] = table_json(OperationTable::standard());
  json entry;
  entry["started"] = started;
  entry["finished"] = utc_now();
  entry["config_path"] = args.config_path;
  entry["artifacts"] = json::object();
  for (const auto& [k, p] : artifacts) entry["artifacts"][k] = fs::absolute(p).string();
  m["commands"][command] = entry;
  write_json_file(path, m);
}

void ensure_out_dir(const CommonArgs& args) {
  std::error_code ec;
  fs::create_directories(args.out_dir, ec);
  if (ec) throw Error("cannot create " + args.out_dir.string() + ": " + ec.message());
}

std::vector<SurrogateCandidate> menu(const RunConfig& cfg) {
  std::vector<SurrogateCandidate> out;
  for (const auto& k : cfg.surrogate.kinds) out.push_back({k, parse_kind(k), {}});
  return out;
}

}  // namespace

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg;
  try {
    cfg = args.config_path.empty() ? config_from_json(json::object()) : load_config(args.config_path);
    if (args.seed) cfg.apply_seed(*args.seed);
    if (args.workers) cfg.evaluator.workers = *args.workers;
    if (args.evaluator_cmd) cfg.evaluator.command = *args.evaluator_cmd;
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Archive files

std::vector<ArchiveEntry> read_archive(const fs::path& path) {
  std::vector<ArchiveEntry> out;
  if (!fs::exists(path)) return out;
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < content.size()) {
    const std::size_t nl = content.find('\n', pos);
    const bool terminated = nl != std::string::npos;
    const std::string line = content.substr(pos, terminated ? nl - pos : std::string::npos);
    pos = terminated ? nl + 1 : content.size();
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ArchiveEntry e;
      if (!j.contains("id")) throw SchemaError("id", "missing field");
      e.id = j.at("id").get<std::int64_t>();
      e.record = fitness_record_from_json(j);
      out.push_back(e);
    } catch (const std::exception& ex) {
      if (!terminated) break;  // interrupted final write
      throw SchemaError(path.string() + ":" + std::to_string(line_no), ex.what());
    }
  }
  std::sort(out.begin(), out.end(), [](const ArchiveEntry& a, const ArchiveEntry& b) { return a.id < b.id; });
  return out;
}

void append_archive(const fs::path& path, const ArchiveEntry& entry) {
  // Repair a cut-off last line before appending so every record stays on its own line.
  if (fs::exists(path) && fs::file_size(path) > 0) {
    std::ifstream in(path, std::ios::binary);
    in.seekg(-1, std::ios::end);
    char last = '\n';
    in.get(last);
    if (last != '\n') {
      const auto kept = read_archive(path);
      std::ofstream rewrite(path, std::ios::trunc);
      for (const auto& k : kept) {
        json j = to_json(k.record);
        j["id"] = k.id;
        rewrite << j.dump() << '\n';
      }
    }
  }
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot append to " + path.string());
  json j = to_json(entry.record);
  j["id"] = entry.id;
  out << j.dump() << '\n';
}

TrainingArchive to_training_archive(const std::vector<ArchiveEntry>& entries) {
  std::vector<FitnessRecord> records;
  for (const auto& e : entries) {
    // Diverged mae runs carry an unbounded sentinel that would swamp any regressor.
    if (e.record.diverged && e.record.minimize) continue;
    records.push_back(e.record);
  }
  return TrainingArchive::from_records(records);
}

std::vector<ArchitectureEncoding> sample_plan(const RunConfig& cfg, int count) {
  SeededRng rng(derive_seed(cfg.seed, hash_name("sample")));
  std::vector<ArchitectureEncoding> out;
  for (int i = 0; i < count; ++i) out.push_back(sample_uniform(OperationTable::standard(), rng));
  return out;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_gen_dataset(const CommonArgs& args, std::ostream& log) {
  const std::string started = utc_now();
  const RunConfig cfg = resolve_config(args);
  ensure_out_dir(args);
  const fs::path out = args.out_dir / artifact::kDataset;
  Dataset ds;
  if (cfg.dataset.kind == "sbm") {
    ds = make_node_dataset(generate_sbm(cfg.dataset.sbm));
  } else {
    ds = make_graph_dataset(generate_graph_set(cfg.dataset.graph_set), cfg.dataset.graph_set.seed);
  }
  save_dataset(ds, out);
  log << "wrote " << out.string() << " (" << ds.graphs.size() << " graph(s), task " << task_name(ds.task) << ")\n";
  record_manifest(args, cfg, "gen-dataset", started, {{"dataset", out}});
}

int cmd_sample(const CommonArgs& args, std::ostream& log) {
  const std::string started = utc_now();
  const RunConfig cfg = resolve_config(args);
  ensure_out_dir(args);
  const fs::path data_file = dataset_path(args, cfg);
  const Dataset data = load_dataset(data_file);
  const fs::path archive_file = input_path(args.archive, args, artifact::kArchive);

  std::set<std::int64_t> done;
  for (const auto& e : read_archive(archive_file)) done.insert(e.id);
  const auto plan = sample_plan(cfg, cfg.sampling.num_samples);
  std::vector<std::int64_t> todo;
  for (int i = 0; i < cfg.sampling.num_samples; ++i)
    if (!done.count(i)) todo.push_back(i);
  log << "sampling " << todo.size() << " of " << plan.size() << " architectures (" << done.size()
      << " already archived)\n";

  const FitnessOptions options = fitness_options(cfg);
  std::mutex append_mutex;
  bool worker_failed = false;
  std::string failure;

  if (cfg.evaluator.command.empty()) {
    std::atomic<std::size_t> next{0};
    auto work = [&] {
      for (std::size_t k = next++; k < todo.size(); k = next++) {
        const std::int64_t id = todo[k];
        const FitnessRecord rec = fitness(plan[id], data, cfg.sampling.train, options);
        std::lock_guard lock(append_mutex);
        append_archive(archive_file, {id, rec});
      }
    };
    const int n = std::min<int>(cfg.evaluator.workers, static_cast<int>(todo.size()));
    if (n <= 1) {
      work();
    } else {
      std::vector<std::jthread> pool;
      for (int w = 0; w < n; ++w) pool.emplace_back(work);
    }
  } else {
    std::vector<EvaluatorRequest> requests;
    for (std::int64_t id : todo) {
      EvaluatorRequest r;
      r.id = id;
      r.encoding = plan[id];
      r.max_steps = cfg.sampling.train.max_steps;
      r.seed = cfg.sampling.train.seed;
      r.dataset_path = fs::absolute(data_file).string();
      r.task = task_name(data.task);
      r.train = cfg.sampling.train;
      r.metric_name = options.metric_name.empty() ? default_metric(data) : options.metric_name;
      r.scale_override = options.scale_override;
      r.encoding_config = options.encoding;
      requests.push_back(r);
    }
    // Split the requests round-robin over the configured number of worker processes.
    const int n = std::max(1, std::min<int>(cfg.evaluator.workers, static_cast<int>(requests.size())));
    std::vector<std::vector<EvaluatorRequest>> shards(static_cast<std::size_t>(n));
    for (std::size_t k = 0; k < requests.size(); ++k) shards[k % n].push_back(requests[k]);
    ExternalOptions ext{cfg.evaluator.timeout_factor, cfg.evaluator.timeout_floor};
    auto run_shard = [&](const std::vector<EvaluatorRequest>& shard) {
      const ExternalResult res = external_evaluate(cfg.evaluator.command, shard, ext);
      std::lock_guard lock(append_mutex);
      if (res.worker_failed) {
        worker_failed = true;
        failure = res.failure;
      }
      for (std::size_t k = 0; k < shard.size(); ++k) {
        const auto& resp = res.responses[k];
        FitnessRecord rec;
        rec.encoding = shard[k].encoding;
        rec.metric_name = resp.metric_name;
        rec.value = resp.value;
        rec.minimize = resp.minimize;
        rec.wall_time = resp.wall_time;
        rec.seed = shard[k].seed;
        rec.diverged = resp.diverged;
        append_archive(archive_file, {resp.id, rec});
      }
    };
    if (n == 1) {
      run_shard(shards[0]);
    } else {
      std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
      {
        std::vector<std::jthread> pool;
        for (int w = 0; w < n; ++w)
          pool.emplace_back([&, w] {
            try {
              run_shard(shards[w]);
            } catch (...) {
              errors[w] = std::current_exception();
            }
          });
      }
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
  }

  record_manifest(args, cfg, "sample", started, {{"archive", archive_file}, {"dataset", data_file}});
  log << "archive " << archive_file.string() << " now holds " << read_archive(archive_file).size() << " records\n";
  if (worker_failed) throw EvaluationFailure("external evaluator failed: " + failure);
  return static_cast<int>(todo.size());
}

void cmd_fit_surrogate(const CommonArgs& args, std::ostream& log) {
  const std::string started = utc_now();
  const RunConfig cfg = resolve_config(args);
  ensure_out_dir(args);
  const fs::path archive_file = input_path(args.archive, args, artifact::kArchive);
  if (!fs::exists(archive_file)) throw Error("archive not found: " + archive_file.string());
  const TrainingArchive archive = to_training_archive(read_archive(archive_file));

  const auto [train, holdout] = split_holdout(archive, cfg.surrogate.holdout_fraction,
                                              derive_seed(cfg.seed, hash_name("holdout")));
  const auto candidates = menu(cfg);
  SeededRng rng(derive_seed(cfg.seed, hash_name("surrogate")));
  Selection sel = select_best(train, cfg.surrogate.folds, rng, candidates);
  score_holdout(sel.model, holdout, sel.report);

  SurrogateModel final_model = sel.model;
  if (holdout.size() > 0) {
    const auto it = std::find_if(candidates.begin(), candidates.end(),
                                 [&](const SurrogateCandidate& c) { return c.name == sel.report.selected; });
    SeededRng refit(derive_seed(cfg.seed, hash_name("surrogate-refit")));
    final_model = fit(it->kind, archive, refit, it->options);
  }

  const fs::path model_file = args.out_dir / artifact::kSurrogate;
  const fs::path report_file = args.out_dir / artifact::kSurrogateReport;
  final_model.save(model_file);
  json report = sel.report.to_json();
  report["archive_size"] = archive.size();
  report["final_model_training_size"] = archive.size();
  write_json_file(report_file, report);

  for (const auto& s : sel.report.scores) {
    log << std::left << std::setw(18) << s.name << " cv mse " << s.mean_mse << " +/- " << s.sd_mse << '\n';
  }
  log << "selected " << sel.report.selected << '\n';
  record_manifest(args, cfg, "fit-surrogate", started,
                  {{"archive", archive_file}, {"surrogate", model_file}, {"surrogate_report", report_file}});
}

std::string describe(const ArchitectureSpec& spec) {
  std::ostringstream os;
  os << "topology:    " << spec.topology << '\n'
     << "combination: " << spec.combination << '\n'
     << "gnn block:   " << spec.gnn_block << '\n'
     << "pe set:      " << format_subset(spec.pe_set) << '\n'
     << "am set:      " << format_subset(spec.am_set) << '\n'
     << "scale:       " << spec.scale << '\n';
  return os.str();
}

void cmd_search(const CommonArgs& args, std::ostream& out, std::ostream& log) {
  const std::string started = utc_now();
  const RunConfig cfg = resolve_config(args);
  ensure_out_dir(args);
  const fs::path model_file = input_path(args.surrogate, args, artifact::kSurrogate);
  const SurrogateModel surrogate = SurrogateModel::load(model_file);
  const OperationTable& table = OperationTable::standard();

  const SearchResult res = run_search(cfg.search, table, surrogate);
  const fs::path history_file = args.out_dir / artifact::kHistory;
  {
    std::ofstream h(history_file, std::ios::trunc);
    if (!h) throw Error("cannot write " + history_file.string());
    for (const auto& g : res.history) h << to_json(g).dump() << '\n';
  }

  const fs::path data_file = dataset_path(args, cfg);
  const Dataset data = load_dataset(data_file);
  const FitnessOptions options = fitness_options(cfg);
  FitnessRecord retrained;
  if (cfg.evaluator.command.empty()) {
    retrained = retrain_best(res.best.encoding, data, cfg.retrain, cfg.sampling.train, options);
  } else {
    EvaluatorRequest r;
    r.id = 0;
    r.encoding = res.best.encoding;
    r.max_steps = cfg.retrain.max_steps;
    r.seed = cfg.retrain.seed;
    r.dataset_path = fs::absolute(data_file).string();
    r.task = task_name(data.task);
    r.train = cfg.retrain;
    r.metric_name = options.metric_name.empty() ? default_metric(data) : options.metric_name;
    r.scale_override = options.scale_override;
    r.encoding_config = options.encoding;
    const ExternalResult ext =
        external_evaluate(cfg.evaluator.command, {r}, {cfg.evaluator.timeout_factor, cfg.evaluator.timeout_floor});
    if (ext.worker_failed) throw EvaluationFailure("retraining failed: " + ext.failure);
    const auto& resp = ext.responses.front();
    retrained.encoding = res.best.encoding;
    retrained.metric_name = resp.metric_name;
    retrained.value = resp.value;
    retrained.minimize = resp.minimize;
    retrained.wall_time = resp.wall_time;
    retrained.seed = cfg.retrain.seed;
    retrained.diverged = resp.diverged;
  }

  const ArchitectureSpec spec = decode(res.best.encoding, table);
  json result = {{"encoding", res.best.encoding.genes},
                 {"spec", spec_json(spec)},
                 {"predicted", res.best.predicted},
                 {"predicted_metric", surrogate.metric_name},
                 {"generations", static_cast<int>(res.history.size())},
                 {"retrained", to_json(retrained)}};
  const fs::path result_file = args.out_dir / artifact::kResult;
  write_json_file(result_file, result);

  out << "best encoding " << to_string(res.best.encoding) << '\n' << describe(spec);
  out << "predicted " << surrogate.metric_name << ": " << res.best.predicted << '\n';
  out << "retrained " << retrained.metric_name << ": " << retrained.value
      << (retrained.diverged ? " (diverged)" : "") << '\n';
  log << "wrote " << history_file.string() << " and " << result_file.string() << '\n';
  record_manifest(args, cfg, "search", started,
                  {{"surrogate", model_file}, {"history", history_file}, {"result", result_file}, {"dataset", data_file}});
}

void cmd_report(const CommonArgs& args, std::ostream& out, std::ostream& log) {
  const std::string started = utc_now();
  const RunConfig cfg = resolve_config(args);
  ensure_out_dir(args);
  const fs::path history_file = input_path(args.history, args, artifact::kHistory);
  const fs::path archive_file = input_path(args.archive, args, artifact::kArchive);

  std::vector<GenerationSummary> history;
  if (fs::exists(history_file)) {
    std::ifstream in(history_file);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const json j = json::parse(line);
        GenerationSummary g;
        g.generation = j.at("generation").get<int>();
        g.best_pred = j.at("best_pred").get<double>();
        g.mean_pred = j.at("mean_pred").get<double>();
        const auto genes = j.at("best_encoding").get<std::vector<int>>();
        if (genes.size() != kNumGenes) throw SchemaError("best_encoding", "expected 6 genes");
        std::copy(genes.begin(), genes.end(), g.best.genes.begin());
        history.push_back(g);
      } catch (const std::exception& e) {
        throw SchemaError(history_file.string() + ":" + std::to_string(line_no), e.what());
      }
    }
  }

  json report;
  const fs::path csv_file = args.out_dir / artifact::kConvergence;
  {
    std::ofstream csv(csv_file, std::ios::trunc);
    if (!csv) throw Error("cannot write " + csv_file.string());
    csv << "generation,best_pred,mean_pred\n";
    csv << std::setprecision(17);
    for (const auto& g : history) csv << g.generation << ',' << g.best_pred << ',' << g.mean_pred << '\n';
  }
  report["generations"] = json::array();
  for (const auto& g : history) report["generations"].push_back(to_json(g));

  if (history.empty()) {
    out << "no generations\n";
    report["notice"] = "no generations";
  } else {
    out << "generation  best_pred  mean_pred\n";
    for (const auto& g : history) {
      out << std::setw(10) << g.generation << "  " << std::setw(9) << g.best_pred << "  " << std::setw(9)
          << g.mean_pred << '\n';
    }
    const ArchitectureSpec spec = decode(history.back().best, OperationTable::standard());
    out << "best architecture " << to_string(history.back().best) << '\n' << describe(spec);
    report["best"] = {{"encoding", history.back().best.genes}, {"spec", spec_json(spec)}};
  }

  if (fs::exists(archive_file)) {
    const TrainingArchive archive = to_training_archive(read_archive(archive_file));
    const auto [train, holdout] = split_holdout(archive, cfg.surrogate.holdout_fraction,
                                                derive_seed(cfg.seed, hash_name("holdout")));
    SeededRng rng(derive_seed(cfg.seed, hash_name("surrogate")));
    const Selection sel = select_best(train, cfg.surrogate.folds, rng, menu(cfg));
    json s = {{"selected", sel.report.selected}, {"holdout_size", holdout.size()}};
    if (holdout.size() >= 2) {
      const auto pred = sel.model.predict_all(holdout.encodings);
      const double kt = ktau(pred, holdout.values);
      const double mse = mean_squared_error(pred, holdout.values);
      s["ktau"] = kt;
      s["mse"] = mse;
      out << "surrogate " << sel.report.selected << " holdout ktau " << kt << " mse " << mse << " (n=" << holdout.size()
          << ")\n";
    } else {
      s["ktau"] = nullptr;
      s["mse"] = nullptr;
      out << "surrogate holdout too small for ktau\n";
    }
    report["surrogate"] = s;
  } else {
    log << "no archive at " << archive_file.string() << "; surrogate section skipped\n";
  }

  const fs::path report_file = args.out_dir / artifact::kReport;
  write_json_file(report_file, report);
  record_manifest(args, cfg, "report", started,
                  {{"report", report_file}, {"convergence", csv_file}, {"history", history_file}});
}

}  // namespace egtas::cli
