#include "egtas_cli/evaluator.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <iostream>
#include <map>

#include "egtas/datasets.hpp"
#include "egtas_cli/config.hpp"

namespace egtas::cli {

using nlohmann::json;

json to_json(const EvaluatorRequest& r) {
  json j = {{"id", r.id},
            {"encoding", r.encoding.genes},
            {"budget", {{"max_steps", r.max_steps}, {"seed", r.seed}}},
            {"dataset_path", r.dataset_path},
            {"task", r.task}};
  if (r.train) j["train"] = to_json(*r.train);
  if (!r.metric_name.empty()) j["metric_name"] = r.metric_name;
  if (r.scale_override) j["scale_override"] = *r.scale_override;
  if (r.encoding_config) j["encoding_config"] = to_json(*r.encoding_config);
  return j;
}

EvaluatorRequest request_from_json(const json& j) {
  EvaluatorRequest r;
  try {
    r.id = j.at("id").get<std::int64_t>();
    const auto genes = j.at("encoding").get<std::vector<int>>();
    if (genes.size() != kNumGenes) throw SchemaError("encoding", "expected 6 genes");
    std::copy(genes.begin(), genes.end(), r.encoding.genes.begin());
    r.max_steps = j.at("budget").at("max_steps").get<int>();
    r.seed = j.at("budget").at("seed").get<std::uint64_t>();
    r.dataset_path = j.at("dataset_path").get<std::string>();
    r.task = j.at("task").get<std::string>();
    if (j.contains("train")) r.train = train_config_from_json(j["train"]);
    r.metric_name = j.value("metric_name", std::string());
    if (j.contains("scale_override") && !j["scale_override"].is_null()) {
      r.scale_override = j["scale_override"].get<std::string>();
    }
    if (j.contains("encoding_config")) r.encoding_config = encoding_config_from_json(j["encoding_config"]);
  } catch (const json::exception& e) {
    throw SchemaError("request", e.what());
  }
  return r;
}

json to_json(const EvaluatorResponse& r) {
  return {{"id", r.id},           {"value", r.value},       {"metric_name", r.metric_name},
          {"minimize", r.minimize}, {"diverged", r.diverged}, {"wall_time", r.wall_time}};
}

EvaluatorResponse parse_response(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error&) {
    throw ProtocolError("malformed response", line);
  }
  EvaluatorResponse r;
  try {
    r.id = j.at("id").get<std::int64_t>();
    r.value = j.at("value").get<double>();
    r.metric_name = j.at("metric_name").get<std::string>();
    r.minimize = j.at("minimize").get<bool>();
    r.diverged = j.value("diverged", false);
    r.wall_time = j.value("wall_time", 0.0);
  } catch (const json::exception&) {
    throw ProtocolError("response is missing a required field", line);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Subprocess plumbing

namespace {

class Worker {
 public:
  explicit Worker(const std::string& command) {
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) throw Error(std::string("pipe: ") + std::strerror(errno));
    pid_ = fork();
    if (pid_ < 0) throw Error(std::string("fork: ") + std::strerror(errno));
    if (pid_ == 0) {
      setpgid(0, 0);  // own group so a timeout can take down the whole pipeline
      dup2(in_pipe[0], STDIN_FILENO);
      dup2(out_pipe[1], STDOUT_FILENO);
      close(in_pipe[0]);
      close(in_pipe[1]);
      close(out_pipe[0]);
      close(out_pipe[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    setpgid(pid_, pid_);
    close(in_pipe[0]);
    close(out_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    fcntl(to_child_, F_SETFL, fcntl(to_child_, F_GETFL) | O_NONBLOCK);
    fcntl(from_child_, F_SETFL, fcntl(from_child_, F_GETFL) | O_NONBLOCK);
  }

  ~Worker() {
    close_input();
    if (from_child_ >= 0) close(from_child_);
    kill_and_reap();
  }

  Worker(const Worker&) = delete;
  Worker& operator=(const Worker&) = delete;

  void close_input() {
    if (to_child_ >= 0) close(to_child_);
    to_child_ = -1;
  }

  void kill_and_reap() {
    if (pid_ > 0) {
      ::kill(-pid_, SIGKILL);
      waitpid(pid_, nullptr, 0);
      pid_ = -1;
    }
  }

  int to_child() const { return to_child_; }
  int from_child() const { return from_child_; }

 private:
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

ExternalResult external_evaluate(const std::string& command, const std::vector<EvaluatorRequest>& requests,
                                 const ExternalOptions& options) {
  using clock = std::chrono::steady_clock;
  ExternalResult result;
  std::map<std::int64_t, std::size_t> slot;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (!slot.emplace(requests[i].id, i).second) throw InvalidArgument("duplicate request id");
  }
  std::vector<std::optional<EvaluatorResponse>> answered(requests.size());
  if (requests.empty()) return result;

  // A worker that exits early must not take us down with it.
  struct sigaction ignore {};
  ignore.sa_handler = SIG_IGN;
  struct sigaction previous {};
  sigaction(SIGPIPE, &ignore, &previous);

  std::string outbox;
  for (const auto& r : requests) outbox += to_json(r).dump() + "\n";
  std::size_t written = 0;

  std::string inbox;
  std::size_t remaining = requests.size();
  std::vector<double> durations;
  auto last_progress = clock::now();

  try {
    Worker worker(command);
    while (remaining > 0) {
      const double budget = durations.empty()
                                ? options.timeout_floor
                                : std::max(options.timeout_floor, options.timeout_factor * median(durations));
      const double waited = std::chrono::duration<double>(clock::now() - last_progress).count();
      if (waited >= budget) {
        result.worker_failed = true;
        result.failure = "worker timed out";
        break;
      }

      pollfd fds[2];
      int nfds = 0;
      fds[nfds++] = {worker.from_child(), POLLIN, 0};
      const bool writing = worker.to_child() >= 0 && written < outbox.size();
      if (writing) fds[nfds++] = {worker.to_child(), POLLOUT, 0};
      const int wait_ms = static_cast<int>(std::min(1000.0, (budget - waited) * 1000.0)) + 1;
      const int rc = poll(fds, static_cast<nfds_t>(nfds), wait_ms);
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw Error(std::string("poll: ") + std::strerror(errno));
      }

      if (writing && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
        const ssize_t n = write(worker.to_child(), outbox.data() + written, outbox.size() - written);
        if (n > 0) {
          written += static_cast<std::size_t>(n);
          if (written == outbox.size()) worker.close_input();
        } else if (n < 0 && errno != EAGAIN && errno != EINTR) {
          worker.close_input();  // reader gone; responses may still be buffered
        }
      } else if (!writing && worker.to_child() >= 0) {
        worker.close_input();
      }

      if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
        char buf[4096];
        const ssize_t n = read(worker.from_child(), buf, sizeof buf);
        if (n == 0) {
          result.worker_failed = true;
          result.failure = "worker exited before answering every request";
          break;
        }
        if (n < 0) {
          if (errno == EAGAIN || errno == EINTR) continue;
          throw Error(std::string("read: ") + std::strerror(errno));
        }
        inbox.append(buf, static_cast<std::size_t>(n));
        std::size_t nl;
        while ((nl = inbox.find('\n')) != std::string::npos) {
          const std::string line = inbox.substr(0, nl);
          inbox.erase(0, nl + 1);
          if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
          const EvaluatorResponse resp = parse_response(line);
          const auto it = slot.find(resp.id);
          if (it == slot.end()) throw ProtocolError("response for an unknown id", line);
          if (answered[it->second]) throw ProtocolError("duplicate response", line);
          answered[it->second] = resp;
          --remaining;
          const auto now = clock::now();
          durations.push_back(std::chrono::duration<double>(now - last_progress).count());
          last_progress = now;
        }
      }
    }
  } catch (...) {
    sigaction(SIGPIPE, &previous, nullptr);
    throw;
  }
  sigaction(SIGPIPE, &previous, nullptr);

  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (answered[i]) {
      result.responses.push_back(*answered[i]);
      continue;
    }
    EvaluatorResponse r;
    r.id = requests[i].id;
    r.metric_name = requests[i].metric_name.empty() ? "acc" : requests[i].metric_name;
    r.minimize = metric_minimized(r.metric_name);
    r.value = worst_value(r.metric_name);
    r.diverged = true;
    result.responses.push_back(r);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Bundled worker

EvaluatorResponse evaluate_request(const EvaluatorRequest& req) {
  const Dataset data = load_dataset(req.dataset_path);
  if (parse_task(req.task) != data.task) throw InvalidArgument("request task does not match the dataset");
  TrainConfig cfg = req.train.value_or(TrainConfig{});
  cfg.max_steps = req.max_steps;
  cfg.seed = req.seed;
  if (cfg.warmup_steps > cfg.max_steps) cfg.warmup_steps = cfg.max_steps;
  FitnessOptions options;
  options.metric_name = req.metric_name;
  options.scale_override = req.scale_override;
  options.encoding = req.encoding_config.value_or(EncodingConfig{});
  const FitnessRecord rec = fitness(req.encoding, data, cfg, options);
  EvaluatorResponse r;
  r.id = req.id;
  r.value = rec.value;
  r.metric_name = rec.metric_name;
  r.minimize = rec.minimize;
  r.diverged = rec.diverged;
  r.wall_time = rec.wall_time;
  return r;
}

int serve_worker(std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      std::cerr << "worker: malformed request: " << e.what() << '\n';
      return 2;
    }
    out << to_json(evaluate_request(request_from_json(j))).dump() << '\n' << std::flush;
  }
  return 0;
}

}  // namespace egtas::cli
