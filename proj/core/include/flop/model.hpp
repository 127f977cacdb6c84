#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flop/rng.hpp"
#include "flop/tape.hpp"
#include "flop/tensor.hpp"

namespace flop {

enum class ParamTag { kShared, kPrivate };

std::string_view to_string(ParamTag tag);

struct Param {
  std::string name;
  Tensor tensor;
  ParamTag tag = ParamTag::kShared;
};

/// Ordered, uniquely named parameter tensors. The order is the layer order of
/// the architecture, so two sets built from the same spec line up entry by
/// entry.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::vector<Param> params);

  void add(Param p);

  std::size_t size() const noexcept { return params_.size(); }
  bool empty() const noexcept { return params_.empty(); }

  const Param& operator[](std::size_t i) const { return params_[i]; }
  Param& operator[](std::size_t i) { return params_[i]; }

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  /// nullptr when absent.
  const Param* find(std::string_view name) const;

  std::vector<std::string> names() const;
  std::size_t scalar_count() const;

  /// Same names, shapes and tags in the same order.
  bool same_layout(const ParamSet& other) const;

 private:
  std::vector<Param> params_;
};

/// Order-sensitive checksum over names and tensor bits.
std::uint64_t checksum(const ParamSet& params);

/// Copies of the Shared / Private entries, order preserved.
ParamSet shared_view(const ParamSet& params);
ParamSet private_view(const ParamSet& params);

/// Returns `params` with every Shared tensor taken from `new_shared`, which
/// must hold exactly the Shared names and shapes. Private tensors are copied
/// through untouched.
ParamSet replace_shared(const ParamSet& params, const ParamSet& new_shared);

/// In-place form of replace_shared.
void assign_shared(ParamSet& params, const ParamSet& new_shared);

enum class LayerKind { kConv, kLinear };

struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  std::size_t outputs = 0;  // output channels or units
  std::size_t kernel = 0;   // conv only
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool relu = true;
  std::size_t pool = 0;  // max-pool window (and stride) after activation; 0 = none
};

struct ModelSpec {
  std::string name;
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t classes = 10;
  std::vector<LayerSpec> layers;

  std::size_t layer_count() const { return layers.size(); }
};

/// Layers [0, boundary) are Shared, [boundary, layer_count) Private.
/// boundary == layer_count shares the whole model.
struct SplitSpec {
  std::size_t boundary = 0;

  static SplitSpec share_all(const ModelSpec& spec) {
    return SplitSpec{spec.layer_count()};
  }
  static SplitSpec before_last(const ModelSpec& spec) {
    return SplitSpec{spec.layer_count() == 0 ? 0 : spec.layer_count() - 1};
  }
};

/// conv(16, 5x5) relu pool2, conv(32, 5x5) relu pool2, linear(classes).
ModelSpec small_cnn(std::size_t channels = 1, std::size_t height = 28,
                    std::size_t width = 28, std::size_t classes = 10);

/// Four 3x3 padded conv layers (16, 16, 32, 32; pool after the 2nd and 4th)
/// followed by one linear layer.
ModelSpec cifar_cnn(std::size_t classes = 10);

/// Throws ConfigError unless the layers compose and end in a linear layer
/// producing `classes` outputs.
void validate(const ModelSpec& spec);

struct ParamShape {
  std::string name;
  Shape shape;
  std::size_t layer = 0;
};

/// Parameter names and shapes in canonical order.
std::vector<ParamShape> param_shapes(const ModelSpec& spec);

/// He-normal weights (std = sqrt(2 / fan_in)) drawn in canonical order, zero
/// biases, tags from `split`.
ParamSet build_model(const ModelSpec& spec, const SplitSpec& split, Rng& rng);

/// Deterministic B x classes logits.
Tensor forward(const ParamSet& params, const ModelSpec& spec,
               const Tensor& batch);

/// Records the forward pass on `tape`. `param_vars` receives one leaf per
/// parameter, in ParamSet order.
Var record_forward(Tape& tape, const ParamSet& params, const ModelSpec& spec,
                   const Tensor& batch, std::vector<Var>& param_vars);

}  // namespace flop
