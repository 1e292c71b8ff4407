#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "scn/errors.hpp"
#include "scn/layers.hpp"

namespace scn {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction over every parameter of one store.
template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  Adam(const ParamStore<Scalar>& store, AdamConfig config) : config_(config) {
    if (!(config.learning_rate > 0.0) || !(config.beta1 >= 0.0 && config.beta1 < 1.0) ||
        !(config.beta2 >= 0.0 && config.beta2 < 1.0) || !(config.epsilon > 0.0)) {
      throw InvalidArgument("invalid Adam hyperparameters");
    }
    m_ = store.zero_gradients();
    v_ = store.zero_gradients();
  }

  void step(ParamStore<Scalar>& store, const Gradients<Scalar>& grads) {
    if (grads.size() != store.values.size() || m_.size() != store.values.size()) {
      throw InvalidArgument("Adam: gradient layout does not match the parameter store");
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    const Scalar b1 = static_cast<Scalar>(config_.beta1);
    const Scalar b2 = static_cast<Scalar>(config_.beta2);
    const Scalar step_size = static_cast<Scalar>(config_.learning_rate / c1);
    const Scalar inv_sqrt_c2 = static_cast<Scalar>(1.0 / std::sqrt(c2));
    const Scalar eps = static_cast<Scalar>(config_.epsilon);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (grads[i].rows() != store.values[i].rows() || grads[i].cols() != store.values[i].cols()) {
        throw InvalidArgument("Adam: gradient shape mismatch for " + store.names[i]);
      }
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * grads[i];
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * grads[i].cwiseProduct(grads[i]);
      store.values[i].array() -=
          step_size * m_[i].array() / ((v_[i].array().sqrt() * inv_sqrt_c2) + eps);
    }
  }

  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<Mat<Scalar>> m_, v_;
  std::int64_t steps_ = 0;
};

}  // namespace scn
