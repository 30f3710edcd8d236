#pragma once

#include <vector>

#include "milforge/autodiff.hpp"

namespace milforge::metrics {

// P(score_pos > score_neg) + 0.5 P(tie) over all positive/negative pairs,
// computed from mid-ranks. labels are 0/1. Throws MetricError when only one
// class is present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Macro one-vs-rest AUC over classes that have both positives and negatives.
// probs is N x M. With M == 2 this is the plain AUC of column 1.
double macro_auc(const ad::Matrix& probs, const std::vector<int>& labels);

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels);

// counts[true][predicted]
std::vector<std::vector<int>> confusion_matrix(const std::vector<int>& predicted,
                                               const std::vector<int>& labels, int n_classes);

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation (n - 1)
  int n = 0;
};

// Needs at least two values.
Summary summarize(const std::vector<double>& values);

}  // namespace milforge::metrics
