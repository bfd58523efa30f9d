#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "egtas/error.hpp"
#include "egtas/trainer.hpp"
#include "egtas_cli/config.hpp"

namespace egtas::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitEvaluation = 3 };

/// Bad flags or configuration.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// An evaluation could not be completed (worker crash, timeout, protocol violation).
class EvaluationFailure : public Error {
 public:
  using Error::Error;
};

struct CommonArgs {
  std::string config_path;  // empty: built-in defaults
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir = ".";
  std::optional<int> workers;
  std::optional<std::string> evaluator_cmd;
  // Input overrides; default to the fixed artifact names inside out_dir.
  std::string dataset;
  std::string archive;
  std::string surrogate;
  std::string history;
};

/// Fixed artifact names inside a run directory.
namespace artifact {
inline constexpr const char* kDataset = "dataset.json";
inline constexpr const char* kArchive = "archive.jsonl";
inline constexpr const char* kSurrogate = "surrogate.json";
inline constexpr const char* kSurrogateReport = "surrogate_report.json";
inline constexpr const char* kHistory = "history.jsonl";
inline constexpr const char* kResult = "result.json";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kConvergence = "convergence.csv";
inline constexpr const char* kManifest = "manifest.json";
}  // namespace artifact

RunConfig resolve_config(const CommonArgs& args);

struct ArchiveEntry {
  std::int64_t id = 0;
  FitnessRecord record;
};

/// Reads a JSONL archive; a trailing line cut off mid-write is dropped.
std::vector<ArchiveEntry> read_archive(const std::filesystem::path& path);
void append_archive(const std::filesystem::path& path, const ArchiveEntry& entry);
TrainingArchive to_training_archive(const std::vector<ArchiveEntry>& entries);

/// The i-th planned sample encoding for a run; id i always maps to the same encoding.
std::vector<ArchitectureEncoding> sample_plan(const RunConfig& cfg, int count);

void cmd_gen_dataset(const CommonArgs& args, std::ostream& log);
/// Returns the number of newly written records.
int cmd_sample(const CommonArgs& args, std::ostream& log);
void cmd_fit_surrogate(const CommonArgs& args, std::ostream& log);
void cmd_search(const CommonArgs& args, std::ostream& out, std::ostream& log);
void cmd_report(const CommonArgs& args, std::ostream& out, std::ostream& log);

/// Multi-line operation listing of an architecture.
std::string describe(const ArchitectureSpec& spec);

}  // namespace egtas::cli
