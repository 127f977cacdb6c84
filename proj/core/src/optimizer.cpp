#include "flop/optimizer.hpp"

#include <cmath>
#include <string>

#include "flop/error.hpp"

namespace flop {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

void validate(const OptimizerConfig& c) {
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) {
    throw ConfigError("optimizer learning rate must be positive");
  }
  if (!(c.weight_decay >= 0.0)) {
    throw ConfigError("optimizer weight decay must be non-negative");
  }
  if (c.kind == OptimizerKind::kAdam) {
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0)) {
      throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(c.epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
  }
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
  validate(config_);
}

void Optimizer::reset() {
  steps_ = 0;
  m_.clear();
  v_.clear();
}

void Optimizer::step(ParamSet& params, const ParamSet& grads) {
  if (params.size() != grads.size()) {
    throw ProtocolError("optimizer: " + std::to_string(grads.size()) +
                        " gradients for " + std::to_string(params.size()) +
                        " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != grads[i].name ||
        params[i].tensor.shape() != grads[i].tensor.shape()) {
      throw ProtocolError("optimizer: gradient '" + grads[i].name + "' " +
                          shape_string(grads[i].tensor.shape()) +
                          " does not align with parameter '" + params[i].name +
                          "' " + shape_string(params[i].tensor.shape()));
    }
  }

  const double lr = config_.learning_rate;
  const double wd = config_.weight_decay;
  ++steps_;

  if (config_.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto theta = params[i].tensor.data();
      const auto g = grads[i].tensor.data();
      for (std::size_t j = 0; j < theta.size(); ++j) {
        theta[j] -= lr * (g[j] + wd * theta[j]);
      }
    }
    return;
  }

  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.shape());
      v_.emplace_back(p.tensor.shape());
    }
  } else {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (m_[i].shape() != params[i].tensor.shape()) {
        throw ProtocolError("optimizer: moment shape changed for '" +
                            params[i].name + "'");
      }
    }
  }

  const double b1 = config_.beta1, b2 = config_.beta2;
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(b1, t);
  const double correction2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].tensor.data();
    const auto g = grads[i].tensor.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = g[j] + wd * theta[j];
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      theta[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

}  // namespace flop
