#include "attnflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "attnflow/error.hpp"

namespace attnflow {

namespace {

void check_scores(std::span<const Real> scores, const char* which) {
  if (scores.empty()) {
    throw MetricError(std::string("auroc: no ") + which + " scores");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) {
      throw MetricError(std::string("auroc: NaN in ") + which + " scores at index " +
                        std::to_string(i));
    }
    if (!std::isfinite(scores[i])) {
      throw MetricError(std::string("auroc: non-finite ") + which + " score at index " +
                        std::to_string(i));
    }
  }
}

}  // namespace

double auroc(std::span<const Real> scores_flawless, std::span<const Real> scores_anomalous) {
  check_scores(scores_flawless, "flawless");
  check_scores(scores_anomalous, "anomalous");
  const std::size_t nf = scores_flawless.size();
  const std::size_t na = scores_anomalous.size();
  const std::size_t n = nf + na;

  std::vector<Real> pooled(n);
  std::copy(scores_flawless.begin(), scores_flawless.end(), pooled.begin());
  std::copy(scores_anomalous.begin(), scores_anomalous.end(), pooled.begin() + nf);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });

  // Twice the midrank keeps everything integral.
  double rank_sum_x2 = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double midrank_x2 = static_cast<double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      if (order[k] >= nf) rank_sum_x2 += midrank_x2;
    }
    i = j + 1;
  }
  const double u_x2 = rank_sum_x2 - static_cast<double>(na) * static_cast<double>(na + 1);
  return u_x2 / (2.0 * static_cast<double>(na) * static_cast<double>(nf));
}

}  // namespace attnflow
