#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aminet/error.hpp"

namespace aminet {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// A score predicts positive only when strictly above `threshold`.
inline ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels,
                                 double threshold = 0.5) {
  if (scores.size() != labels.size()) {
    throw ContractError("confusion: " + std::to_string(scores.size()) + " scores for " +
                        std::to_string(labels.size()) + " labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] > threshold;
    if (labels[i]) {
      predicted ? ++c.tp : ++c.fn;
    } else {
      predicted ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

struct PrecisionRecallF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Zero denominators yield 0 rather than an error.
inline PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& c) {
  PrecisionRecallF1 r;
  if (c.tp + c.fp) r.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn) r.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (r.precision + r.recall > 0.0) {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  }
  return r;
}

inline double accuracy(const ConfusionCounts& c) {
  if (c.total() == 0) throw ContractError("accuracy of an empty evaluation");
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

/// Mann-Whitney AUC with average ranks for ties. Empty when only one class is
/// present.
inline std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ContractError("auc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Ranks are kept doubled so tie averages stay integral.
  std::uint64_t positives = 0, doubled_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const std::uint64_t doubled_rank = (i + 1) + (j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]]) {
        ++positives;
        doubled_rank_sum += doubled_rank;
      }
    }
    i = j + 1;
  }
  const std::uint64_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  // 2 * (R_pos - P(P+1)/2) counts each winning pair twice and each tie once.
  const std::uint64_t doubled_wins = doubled_rank_sum - positives * (positives + 1);
  return static_cast<double>(doubled_wins) / 2.0 /
         (static_cast<double>(positives) * static_cast<double>(negatives));
}

struct MetricReport {
  std::optional<double> auc;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline MetricReport evaluate(std::span<const double> scores, std::span<const int> labels,
                             double threshold = 0.5) {
  const ConfusionCounts c = confusion(scores, labels, threshold);
  const PrecisionRecallF1 prf = precision_recall_f1(c);
  return {auc(scores, labels), accuracy(c), prf.precision, prf.recall, prf.f1};
}

/// Column-wise mean; AUC averages only the reports where it is defined.
inline MetricReport mean_report(std::span<const MetricReport> reports) {
  if (reports.empty()) throw ContractError("mean of no metric reports");
  MetricReport m;
  double auc_sum = 0.0;
  std::size_t auc_count = 0;
  for (const auto& r : reports) {
    if (r.auc) {
      auc_sum += *r.auc;
      ++auc_count;
    }
    m.accuracy += r.accuracy;
    m.precision += r.precision;
    m.recall += r.recall;
    m.f1 += r.f1;
  }
  const double n = static_cast<double>(reports.size());
  if (auc_count) m.auc = auc_sum / static_cast<double>(auc_count);
  m.accuracy /= n;
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  return m;
}

}  // namespace aminet
