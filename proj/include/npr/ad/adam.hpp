#pragma once

#include "npr/ad/tensor.hpp"

namespace npr::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // lr schedule: effective lr = lr * factor^floor(counter / interval).
  double decay_factor = 1.0;
  long decay_interval = 0;  // 0 disables decay
};

// Adam with a step- or externally-(epoch-)driven lr decay schedule.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor<T>> params, AdamConfig cfg, bool external_schedule = false)
      : params_(std::move(params)), cfg_(cfg), external_(external_schedule) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].values().size(), T(0));
      v_[i].assign(params_[i].values().size(), T(0));
    }
  }

  long step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<Tensor<T>>& params() const { return params_; }
  std::vector<std::vector<T>>& moments1() { return m_; }
  std::vector<std::vector<T>>& moments2() { return v_; }

  // For epoch-driven schedules: the trainer advances the counter itself.
  void set_schedule_counter(long c) { schedule_ = c; }

  double effective_lr() const {
    long counter = external_ ? schedule_ : std::max<long>(step_ - 1, 0);
    if (cfg_.decay_interval <= 0 || cfg_.decay_factor == 1.0) return cfg_.lr;
    long k = counter / cfg_.decay_interval;
    return cfg_.lr * std::pow(cfg_.decay_factor, double(k));
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++step_;
    double lr = effective_lr_for_step(step_);
    T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
    T bc1 = T(1) - T(std::pow(cfg_.beta1, double(step_)));
    T bc2 = T(1) - T(std::pow(cfg_.beta2, double(step_)));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto node = params_[i].node();
      if (node->grad.size() != node->value.size())
        throw std::invalid_argument("adam: missing gradient for parameter " + std::to_string(i));
      auto& val = node->value;
      auto& g = node->grad;
      auto& m = m_[i];
      auto& v = v_[i];
      for (size_t j = 0; j < val.size(); ++j) {
        m[j] = b1 * m[j] + (T(1) - b1) * g[j];
        v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
        T mhat = m[j] / bc1;
        T vhat = v[j] / bc2;
        val[j] -= T(lr) * mhat / (std::sqrt(vhat) + T(cfg_.eps));
      }
    }
  }

 private:
  double effective_lr_for_step(long step) const {
    long counter = external_ ? schedule_ : step - 1;
    if (cfg_.decay_interval <= 0 || cfg_.decay_factor == 1.0) return cfg_.lr;
    long k = counter / cfg_.decay_interval;
    return cfg_.lr * std::pow(cfg_.decay_factor, double(k));
  }

  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  AdamConfig cfg_;
  bool external_ = false;
  long step_ = 0;
  long schedule_ = 0;
};

}  // namespace npr::ad
