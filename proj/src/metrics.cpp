#include "milforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "milforge/error.hpp"

namespace milforge::metrics {

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw AlignmentError("auc: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = scores.size();
  std::int64_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw MetricError("auc: labels must be 0 or 1");
    n_pos += l;
  }
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw MetricError("auc: undefined with a single class present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the mid-rank (1-based) keeps everything in integers.
  std::int64_t rank2_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const auto rank2 = static_cast<std::int64_t>(i + 1 + j + 1);
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) rank2_pos += rank2;
    }
    i = j + 1;
  }
  const std::int64_t u2 = rank2_pos - n_pos * (n_pos + 1);  // 2 * Mann-Whitney U
  return static_cast<double>(u2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double macro_auc(const ad::Matrix& probs, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw MetricError("macro_auc: row count does not match label count");
  }
  if (probs.cols() == 2) {
    std::vector<double> s(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) s[i] = probs(static_cast<Eigen::Index>(i), 1);
    return auc(s, labels);
  }
  double total = 0.0;
  int used = 0;
  for (Eigen::Index c = 0; c < probs.cols(); ++c) {
    std::vector<double> s(labels.size());
    std::vector<int> bin(labels.size());
    int pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      s[i] = probs(static_cast<Eigen::Index>(i), c);
      bin[i] = labels[i] == c ? 1 : 0;
      pos += bin[i];
    }
    if (pos == 0 || pos == static_cast<int>(labels.size())) continue;
    total += auc(s, bin);
    ++used;
  }
  if (used == 0) throw MetricError("macro_auc: no class has both positives and negatives");
  return total / used;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (predicted.size() != labels.size() || labels.empty()) {
    throw MetricError("accuracy: empty or mismatched inputs");
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

std::vector<std::vector<int>> confusion_matrix(const std::vector<int>& predicted,
                                               const std::vector<int>& labels, int n_classes) {
  std::vector<std::vector<int>> m(static_cast<std::size_t>(n_classes),
                                  std::vector<int>(static_cast<std::size_t>(n_classes), 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes || predicted[i] < 0 || predicted[i] >= n_classes) {
      throw MetricError("confusion_matrix: class id out of range");
    }
    ++m[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predicted[i])];
  }
  return m;
}

Summary summarize(const std::vector<double>& values) {
  if (values.size() < 2) {
    throw AggregationError("aggregation needs at least 2 reports, got " +
                           std::to_string(values.size()));
  }
  Summary s;
  s.n = static_cast<int>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / s.n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = std::sqrt(ss / (s.n - 1));
  return s;
}

}  // namespace milforge::metrics
