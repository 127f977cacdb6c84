#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "flop/tensor.hpp"

namespace flop {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Reverse-mode recorder for the handful of layers the models use.
///
/// Each operation evaluates eagerly and appends a node holding its value and
/// the closure that propagates its gradient. `backward` walks the nodes in
/// reverse insertion order, which is a valid topological order because nodes
/// only reference earlier nodes. A tape is single-threaded; use one per
/// client.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = true);

  Var matmul(Var a, Var b);
  /// x: B x N, bias: N.
  Var add_row_bias(Var x, Var bias);
  Var conv2d(Var input, Var kernels, Var bias, std::size_t stride,
             std::size_t padding);
  Var maxpool2d(Var input, std::size_t window, std::size_t stride);
  Var relu(Var x);
  /// B x ... -> B x (rest).
  Var flatten(Var x);
  /// Mean softmax cross-entropy; produces a 1-element tensor.
  Var softmax_xent(Var logits, std::span<const int> labels);
  Var sum(Var x);

  const Tensor& value(Var v) const;

  /// Probabilities saved by the most recent softmax_xent node feeding `loss`.
  const Tensor& probs(Var loss) const;

  /// Seeds `root` with `upstream` (or 1 for a single-element root) and
  /// accumulates gradients into every node that requires them.
  void backward(Var root, std::optional<Tensor> upstream = std::nullopt);

  /// Gradient of the last backward root with respect to `v`.
  const Tensor& grad(Var v) const;

  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&, Node&)> backward;
    Tensor saved;  // op-specific (softmax probabilities)
  };

  Var push(Tensor value, bool requires_grad,
           std::function<void(Tape&, Node&)> backward);
  Node& node(Var v);
  const Node& node(Var v) const;
  void accumulate(Var v, const Tensor& g);

  std::vector<Node> nodes_;
  bool has_gradients_ = false;
};

}  // namespace flop
