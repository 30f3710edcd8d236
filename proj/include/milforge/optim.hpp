#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "milforge/autodiff.hpp"
#include "milforge/error.hpp"

namespace milforge::ad {

struct AdamConfig {
  double lr = 2e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay and bias correction.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg_.lr > 0)) throw ParameterError("adam: learning rate must be positive");
    if (cfg_.weight_decay < 0) throw ParameterError("adam: weight decay must be non-negative");
  }

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return step_; }
  const std::vector<Mat<Scalar>>& first_moments() const { return m_; }
  const std::vector<Mat<Scalar>>& second_moments() const { return v_; }

  // Updates `params` in place. Moment buffers are created lazily on the first
  // call and their shapes are checked on every later one.
  void step(const std::vector<Mat<Scalar>*>& params, const std::vector<const Mat<Scalar>*>& grads) {
    if (params.size() != grads.size()) {
      throw ShapeError("adam: " + std::to_string(params.size()) + " parameters but " +
                       std::to_string(grads.size()) + " gradients");
    }
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.push_back(Mat<Scalar>::Zero(p->rows(), p->cols()));
        v_.push_back(Mat<Scalar>::Zero(p->rows(), p->cols()));
      }
    }
    if (m_.size() != params.size()) {
      throw ShapeError("adam: parameter count changed between steps");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->rows() != grads[i]->rows() || params[i]->cols() != grads[i]->cols() ||
          params[i]->rows() != m_[i].rows() || params[i]->cols() != m_[i].cols()) {
        throw ShapeError("adam: parameter " + std::to_string(i) + " is " + shape_str(*params[i]) +
                         " but gradient is " + shape_str(*grads[i]));
      }
    }

    ++step_;
    const Scalar b1 = Scalar(cfg_.beta1), b2 = Scalar(cfg_.beta2);
    const Scalar bc1 = Scalar(1) - std::pow(b1, Scalar(step_));
    const Scalar bc2 = Scalar(1) - std::pow(b2, Scalar(step_));
    const Scalar lr = Scalar(cfg_.lr);
    const Scalar decay = Scalar(1) - lr * Scalar(cfg_.weight_decay);
    const Scalar eps = Scalar(cfg_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      const auto& g = *grads[i];
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseAbs2();
      p *= decay;
      p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps);
    }
  }

 private:
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  std::vector<Mat<Scalar>> m_;
  std::vector<Mat<Scalar>> v_;
};

}  // namespace milforge::ad
