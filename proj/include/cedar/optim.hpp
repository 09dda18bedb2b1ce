#pragma once

#include <cmath>

#include "cedar/linalg.hpp"

namespace cedar {

/// Adam on a flat parameter block. Callers map matrices/vectors onto one
/// contiguous block and step it as a whole.
class Adam {
 public:
  Adam(Index n, double lr, double beta1, double beta2, double eps)
      : lr_(lr),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps),
        m_(Eigen::ArrayXd::Zero(n)),
        v_(Eigen::ArrayXd::Zero(n)) {}

  void step(Eigen::Ref<Eigen::ArrayXd> param, const Eigen::ArrayXd& grad) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.square();
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    param -= lr_ * (m_ / bc1) / ((v_ / bc2).sqrt() + eps_);
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  Eigen::ArrayXd m_, v_;
  long t_ = 0;
};

}  // namespace cedar
