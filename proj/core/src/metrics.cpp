#include "egtas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "egtas/error.hpp"

namespace egtas {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw InvalidArgument(std::string(what) + ": length mismatch");
  if (a == 0) throw InvalidArgument(std::string(what) + ": empty input");
}

}  // namespace

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  require_same_length(predicted.size(), truth.size(), "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  require_same_length(scores.size(), labels.size(), "roc_auc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw InvalidArgument("roc_auc: labels must be 0/1");
    if (labels[i] == 1) {
      pos += 1;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) throw InvalidArgument("roc_auc: both classes are required");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

double mean_absolute_error(std::span<const double> predicted, std::span<const double> truth) {
  require_same_length(predicted.size(), truth.size(), "mae");
  double s = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += std::abs(predicted[i] - truth[i]);
  return s / static_cast<double>(truth.size());
}

double mean_squared_error(std::span<const double> predicted, std::span<const double> truth) {
  require_same_length(predicted.size(), truth.size(), "mse");
  double s = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = predicted[i] - truth[i];
    s += d * d;
  }
  return s / static_cast<double>(truth.size());
}

double ktau(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) throw InvalidArgument("ktau: length mismatch");
  if (predicted.size() < 2) throw InvalidArgument("ktau: needs at least two points");
  const std::size_t n = predicted.size();
  double concordant = 0, discordant = 0, ties_pred = 0, ties_truth = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dp = predicted[i] - predicted[j];
      const double dt = truth[i] - truth[j];
      if (dp == 0 && dt == 0) continue;
      if (dp == 0) {
        ties_pred += 1;
      } else if (dt == 0) {
        ties_truth += 1;
      } else if ((dp > 0) == (dt > 0)) {
        concordant += 1;
      } else {
        discordant += 1;
      }
    }
  }
  const double denom =
      std::sqrt((concordant + discordant + ties_pred) * (concordant + discordant + ties_truth));
  return denom == 0 ? 0.0 : (concordant - discordant) / denom;
}

}  // namespace egtas
