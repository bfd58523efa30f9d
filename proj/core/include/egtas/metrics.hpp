#pragma once

#include <span>
#include <vector>

namespace egtas {

/// Fraction of positions where prediction equals truth.
double accuracy(std::span<const int> predicted, std::span<const int> truth);

/// Area under the ROC curve from the rank statistic (ties get average ranks).
/// Labels are 0/1; throws if either class is absent.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

double mean_absolute_error(std::span<const double> predicted, std::span<const double> truth);
double mean_squared_error(std::span<const double> predicted, std::span<const double> truth);

/// Kendall tau-b rank correlation. Returns 0 when either side is constant.
double ktau(std::span<const double> predicted, std::span<const double> truth);

}  // namespace egtas
