#include <CLI11.hpp>
#include <iostream>

#include "egtas/error.hpp"
#include "egtas_cli/commands.hpp"
#include "egtas_cli/evaluator.hpp"

using namespace egtas;
using namespace egtas::cli;

namespace {

void add_common(CLI::App* sub, CommonArgs& args, std::uint64_t& seed, int& workers, std::string& evaluator,
                std::string& out) {
  sub->add_option("--config", args.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--seed", seed, "master seed; overrides every seed in the config");
  sub->add_option("--out", out, "run directory for outputs (default: current directory)");
  sub->add_option("--workers", workers, "concurrent evaluations")->check(CLI::PositiveNumber);
  sub->add_option("--evaluator-cmd", evaluator, "external worker command (newline-delimited JSON)");
}

int run(int argc, char** argv) {
  CLI::App app{"Surrogate-assisted evolutionary search over graph Transformer architectures"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  CommonArgs args;
  std::uint64_t seed = 0;
  int workers = 0;
  std::string evaluator, out;

  auto* gen = app.add_subcommand("gen-dataset", "generate the synthetic benchmark dataset");
  auto* sample = app.add_subcommand("sample", "train and score randomly sampled architectures");
  auto* fitc = app.add_subcommand("fit-surrogate", "fit and select the performance predictor");
  auto* search = app.add_subcommand("search", "evolutionary search on the surrogate, then retrain the best");
  auto* report = app.add_subcommand("report", "summarize a search run");
  auto* worker = app.add_subcommand("worker", "serve evaluation requests on stdin/stdout");
  for (auto* sub : {gen, sample, fitc, search, report}) add_common(sub, args, seed, workers, evaluator, out);
  for (auto* sub : {sample, search}) sub->add_option("--dataset", args.dataset, "dataset file");
  for (auto* sub : {sample, fitc, report}) sub->add_option("--archive", args.archive, "sample archive (JSONL)");
  search->add_option("--surrogate", args.surrogate, "fitted surrogate file");
  report->add_option("--history", args.history, "search history (JSONL)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (auto* sub : {gen, sample, fitc, search, report}) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed")) args.seed = seed;
    if (sub->count("--workers")) args.workers = workers;
    if (sub->count("--evaluator-cmd")) args.evaluator_cmd = evaluator;
    if (sub->count("--out")) args.out_dir = out;
  }

  try {
    if (gen->parsed()) cmd_gen_dataset(args, std::cerr);
    else if (sample->parsed()) cmd_sample(args, std::cerr);
    else if (fitc->parsed()) cmd_fit_surrogate(args, std::cerr);
    else if (search->parsed()) cmd_search(args, std::cout, std::cerr);
    else if (report->parsed()) cmd_report(args, std::cout, std::cerr);
    else if (worker->parsed()) return serve_worker(std::cin, std::cout);
    return kExitOk;
  } catch (const UsageError& e) {
    std::cerr << "egtas: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ProtocolError& e) {
    std::cerr << "egtas: " << e.what() << '\n';
    return kExitEvaluation;
  } catch (const EvaluationFailure& e) {
    std::cerr << "egtas: " << e.what() << '\n';
    return kExitEvaluation;
  } catch (const NonFiniteError& e) {
    std::cerr << "egtas: " << e.what() << '\n';
    return kExitEvaluation;
  } catch (const Error& e) {
    std::cerr << "egtas: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "egtas: internal error: " << e.what() << '\n';
    return kExitEvaluation;
  }
}
