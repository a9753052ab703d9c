#pragma once

#include "goodpoint/model.hpp"

namespace goodpoint {

struct AdamWConfig {
  double learning_rate = 5e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Decoupled-weight-decay adaptive-moment optimizer:
//   theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)
template <class T>
class AdamW {
 public:
  AdamW(const Network<T>& net, const AdamWConfig& cfg)
      : cfg_(cfg), m_(zeros_like(net)), v_(zeros_like(net)) {}

  // One update with the given learning rate (the schedule owns the rate).
  void step(Network<T>& params, const Network<T>& grads, double lr);

  long long steps_taken() const { return t_; }

  Network<T>& first_moment() { return m_; }
  Network<T>& second_moment() { return v_; }
  void set_steps_taken(long long t) { t_ = t; }

 private:
  AdamWConfig cfg_;
  Network<T> m_, v_;
  long long t_ = 0;
};

// Closed-form learning-rate schedule: constant for the first epochs_constant
// epochs, then multiplied by decay_factor once per epoch.
double scheduled_learning_rate(double base, int epoch, int epochs_constant, double decay_factor);

}  // namespace goodpoint
