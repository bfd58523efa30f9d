#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "egtas/error.hpp"
#include "egtas/search_space.hpp"
#include "egtas/trainer.hpp"

namespace egtas::cli {

/// A worker wrote something that is not a valid response.
class ProtocolError : public Error {
 public:
  ProtocolError(const std::string& what, std::string line)
      : Error(what + ": " + line), line_(std::move(line)) {}
  const std::string& line() const { return line_; }

 private:
  std::string line_;
};

struct EvaluatorRequest {
  std::int64_t id = 0;
  ArchitectureEncoding encoding;
  int max_steps = 0;
  std::uint64_t seed = 0;
  std::string dataset_path;
  std::string task;
  // Extensions understood by the bundled worker; other workers ignore them.
  std::optional<TrainConfig> train;
  std::string metric_name;
  std::optional<std::string> scale_override;
  std::optional<EncodingConfig> encoding_config;
};

struct EvaluatorResponse {
  std::int64_t id = 0;
  double value = 0.0;
  std::string metric_name;
  bool minimize = false;
  bool diverged = false;
  double wall_time = 0.0;
};

nlohmann::json to_json(const EvaluatorRequest& r);
EvaluatorRequest request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvaluatorResponse& r);
/// Throws ProtocolError carrying `line` when a required field is missing or mistyped.
EvaluatorResponse parse_response(const std::string& line);

struct ExternalOptions {
  double timeout_factor = 10.0;
  double timeout_floor = 60.0;  // seconds; also the budget before any response arrives
};

struct ExternalResult {
  std::vector<EvaluatorResponse> responses;  // request order
  bool worker_failed = false;                // crash, early exit or timeout
  std::string failure;
};

/// Runs `command` through /bin/sh, streams requests as JSON lines and collects the
/// responses by id. Requests left unanswered when the worker dies or times out come back
/// diverged with the metric's worst value.
ExternalResult external_evaluate(const std::string& command, const std::vector<EvaluatorRequest>& requests,
                                 const ExternalOptions& options = {});

/// Serves requests from `in` until EOF with the in-process trainer.
int serve_worker(std::istream& in, std::ostream& out);

/// Handles a single request in-process.
EvaluatorResponse evaluate_request(const EvaluatorRequest& req);

}  // namespace egtas::cli
