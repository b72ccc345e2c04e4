#pragma once

#include <cmath>
#include <vector>

#include "reidkit/harness/config.hpp"
#include "reidkit/net.hpp"

namespace reidkit::harness {

/// Adam with L2 weight decay folded into the gradient. Frozen parameters
/// are skipped.
template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(const OptimConfig& cfg, std::vector<nn::Param<T>*> params) : cfg_(cfg) {
    for (auto* p : params) {
      if (!p->trainable) continue;
      params_.push_back(p);
      m_.push_back(nn::Vec<T>::Zero(p->value.size()));
      v_.push_back(nn::Vec<T>::Zero(p->value.size()));
    }
  }

  void step(double lr) {
    ++t_;
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T c1 = static_cast<T>(1 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const T c2 = static_cast<T>(1 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    const T wd = static_cast<T>(cfg_.weight_decay), eps = static_cast<T>(cfg_.eps), a = static_cast<T>(lr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      nn::Vec<T> g = p.grad + wd * p.value;
      m_[i] = b1 * m_[i] + (1 - b1) * g;
      v_[i] = b2 * v_[i] + (1 - b2) * g.cwiseProduct(g);
      p.value.array() -= a * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->grad.setZero();
  }

  const std::vector<nn::Param<T>*>& params() const { return params_; }
  std::vector<nn::Vec<T>>& first_moments() { return m_; }
  std::vector<nn::Vec<T>>& second_moments() { return v_; }
  long long& steps() { return t_; }

 private:
  OptimConfig cfg_;
  std::vector<nn::Param<T>*> params_;
  std::vector<nn::Vec<T>> m_, v_;
  long long t_ = 0;
};

}  // namespace reidkit::harness
