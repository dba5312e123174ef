#pragma once

#include <span>

#include "attnflow/tensor.hpp"

namespace attnflow {

/// Area under the ROC curve with anomalous scores as the positive class:
/// P(anomalous > flawless) + 0.5 P(tie), via midranks of the pooled scores.
/// MetricError for empty inputs or a NaN (the message names the index).
double auroc(std::span<const Real> scores_flawless, std::span<const Real> scores_anomalous);

}  // namespace attnflow
