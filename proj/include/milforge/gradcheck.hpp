#pragma once

// Central finite-difference gradient checking.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "milforge/autodiff.hpp"

namespace milforge::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  Eigen::Index worst_entry = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true gradient
// is ~0 from being judged on pure roundoff.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `loss` evaluates the scalar objective at the current parameter values. Every
// entry of every parameter is perturbed by +-h and restored afterwards.
inline GradCheckResult check_gradients(const std::function<double()>& loss,
                                       const std::vector<Matrix*>& params,
                                       const std::vector<Matrix>& analytic, double h = 1e-6) {
  GradCheckResult r;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& m = *params[p];
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double orig = m.data()[i];
      m.data()[i] = orig + h;
      const double up = loss();
      m.data()[i] = orig - h;
      const double down = loss();
      m.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p].data()[i];
      const double err = relative_error(a, numeric);
      ++r.entries_checked;
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst_param = p;
        r.worst_entry = i;
        r.worst_analytic = a;
        r.worst_numeric = numeric;
      }
    }
  }
  return r;
}

}  // namespace milforge::ad
