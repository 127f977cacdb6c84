#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "flop/model.hpp"

namespace flop {

enum class OptimizerKind { kSgd, kAdam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 0.01;
  /// L2 coefficient; weight_decay * theta is added to the gradient.
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

void validate(const OptimizerConfig& config);

/// Plain SGD or bias-corrected Adam over a whole ParamSet (shared and private
/// entries alike). Adam moments are created on the first step.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  /// `grads` must list the same names and shapes as `params`, in order.
  void step(ParamSet& params, const ParamSet& grads);

  /// Drops moments and the step counter.
  void reset();

  const OptimizerConfig& config() const noexcept { return config_; }
  std::uint64_t steps() const noexcept { return steps_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

 private:
  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace flop
