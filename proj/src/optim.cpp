#include "goodpoint/optim.hpp"

#include <cmath>

namespace goodpoint {

template <class T>
void AdamW<T>::step(Network<T>& params, const Network<T>& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  const T beta1 = T(cfg_.beta1), beta2 = T(cfg_.beta2);
  const T one_m_b1 = T(1.0 - cfg_.beta1), one_m_b2 = T(1.0 - cfg_.beta2);
  const T eps = T(cfg_.epsilon);
  const T step_size = T(lr / bc1);
  const T inv_sqrt_bc2 = T(1.0 / std::sqrt(bc2));
  const T decay = T(1.0 - lr * cfg_.weight_decay);

  auto ps = layer_refs(params);
  auto gs = layer_refs(const_cast<Network<T>&>(grads));
  auto ms = layer_refs(m_);
  auto vs = layer_refs(v_);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto update = [&](auto& theta, const auto& g, auto& m, auto& v) {
      m = beta1 * m + one_m_b1 * g;
      v = (beta2 * v.array() + one_m_b2 * g.array().square()).matrix();
      theta = decay * theta -
              step_size * (m.array() / (v.array().sqrt() * inv_sqrt_bc2 + eps)).matrix();
    };
    update(ps[i].second->weight, gs[i].second->weight, ms[i].second->weight, vs[i].second->weight);
    update(ps[i].second->bias, gs[i].second->bias, ms[i].second->bias, vs[i].second->bias);
  }
}

double scheduled_learning_rate(double base, int epoch, int epochs_constant, double decay_factor) {
  if (epoch <= epochs_constant) return base;
  return base * std::pow(decay_factor, double(epoch - epochs_constant));
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace goodpoint
