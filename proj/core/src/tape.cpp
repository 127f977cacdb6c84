#include "flop/tape.hpp"

#include <string>

#include "flop/error.hpp"
#include "flop/gemm.hpp"
#include "flop/ops.hpp"

namespace flop {

Var Tape::push(Tensor value, bool requires_grad,
               std::function<void(Tape&, Node&)> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  has_gradients_ = false;
  return Var{nodes_.size() - 1};
}

Tape::Node& Tape::node(Var v) {
  if (v.id >= nodes_.size()) {
    throw StateError("variable " + std::to_string(v.id) +
                     " was not recorded on this tape");
  }
  return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) {
    throw StateError("variable " + std::to_string(v.id) +
                     " was not recorded on this tape");
  }
  return nodes_[v.id];
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = g.reshaped(n.value.shape());
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, [](Tape&, Node&) {});
}

Var Tape::matmul(Var a, Var b) {
  Tensor out = ops::matmul(value(a), value(b));
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg, [a, b](Tape& t, Node& self) {
    const Tensor& av = t.nodes_[a.id].value;
    const Tensor& bv = t.nodes_[b.id].value;
    const std::size_t r = av.dim(0), k = av.dim(1), c = bv.dim(1);
    if (t.requires_grad(a)) {
      // dA = dC * B^T
      std::vector<double> bt(c * k);
      kernels::transpose(k, c, bv.data().data(), bt.data());
      Tensor da({r, k});
      kernels::gemm_accumulate(r, k, c, self.grad.data().data(), c, bt.data(),
                               k, da.data().data(), k);
      t.accumulate(a, da);
    }
    if (t.requires_grad(b)) {
      // dB = A^T * dC
      std::vector<double> at(k * r);
      kernels::transpose(r, k, av.data().data(), at.data());
      Tensor db({k, c});
      kernels::gemm_accumulate(k, c, r, at.data(), r, self.grad.data().data(),
                               c, db.data().data(), c);
      t.accumulate(b, db);
    }
  });
}

Var Tape::add_row_bias(Var x, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(bias);
  if (xv.rank() != 2 || bv.rank() != 1 || bv.dim(0) != xv.dim(1)) {
    throw DimensionError("add_row_bias: cannot add " + shape_string(bv.shape()) +
                         " to rows of " + shape_string(xv.shape()));
  }
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor out = xv;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  const bool rg = requires_grad(x) || requires_grad(bias);
  return push(std::move(out), rg, [x, bias, rows, cols](Tape& t, Node& self) {
    t.accumulate(x, self.grad);
    if (t.requires_grad(bias)) {
      Tensor db({cols});
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) db[c] += self.grad[r * cols + c];
      t.accumulate(bias, db);
    }
  });
}

Var Tape::conv2d(Var input, Var kernels, Var bias, std::size_t stride,
                 std::size_t padding) {
  Tensor out = ops::conv2d(value(input), value(kernels), value(bias), stride,
                           padding);
  const bool rg =
      requires_grad(input) || requires_grad(kernels) || requires_grad(bias);
  return push(std::move(out), rg,
              [input, kernels, bias, stride, padding](Tape& t, Node& self) {
                ops::ConvGrads g = ops::conv2d_backward(
                    t.nodes_[input.id].value, t.nodes_[kernels.id].value,
                    self.grad, stride, padding, t.requires_grad(input));
                if (t.requires_grad(input)) t.accumulate(input, g.input);
                t.accumulate(kernels, g.kernels);
                t.accumulate(bias, g.bias);
              });
}

Var Tape::maxpool2d(Var input, std::size_t window, std::size_t stride) {
  ops::PoolResult pooled = ops::maxpool2d(value(input), window, stride);
  return push(std::move(pooled.output), requires_grad(input),
              [input, argmax = std::move(pooled.argmax)](Tape& t, Node& self) {
                t.accumulate(input, ops::maxpool2d_backward(
                                        t.nodes_[input.id].value.shape(),
                                        argmax, self.grad));
              });
}

Var Tape::relu(Var x) {
  Tensor out = ops::relu(value(x));
  return push(std::move(out), requires_grad(x), [x](Tape& t, Node& self) {
    const Tensor& xv = t.nodes_[x.id].value;
    Tensor g(xv.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = xv[i] > 0.0 ? self.grad[i] : 0.0;
    }
    t.accumulate(x, g);
  });
}

Var Tape::flatten(Var x) {
  const Tensor& xv = value(x);
  const std::size_t batch = xv.dim(0);
  Tensor out = xv.reshaped({batch, xv.size() / batch});
  return push(std::move(out), requires_grad(x),
              [x](Tape& t, Node& self) { t.accumulate(x, self.grad); });
}

Var Tape::softmax_xent(Var logits, std::span<const int> labels) {
  ops::XentResult r = ops::softmax_xent(value(logits), labels);
  std::vector<int> owned(labels.begin(), labels.end());
  Var v = push(Tensor({1}, r.loss), requires_grad(logits),
               [logits, labels = std::move(owned)](Tape& t, Node& self) {
                 const Tensor& p = self.saved;
                 const std::size_t batch = p.dim(0), classes = p.dim(1);
                 const double scale = self.grad[0] / static_cast<double>(batch);
                 Tensor g(p.shape());
                 for (std::size_t b = 0; b < batch; ++b) {
                   for (std::size_t c = 0; c < classes; ++c) {
                     const double onehot =
                         static_cast<std::size_t>(labels[b]) == c ? 1.0 : 0.0;
                     g[b * classes + c] = (p[b * classes + c] - onehot) * scale;
                   }
                 }
                 t.accumulate(logits, g);
               });
  nodes_[v.id].saved = std::move(r.probs);
  return v;
}

Var Tape::sum(Var x) {
  const Tensor& xv = value(x);
  double s = 0.0;
  for (double e : xv.data()) s += e;
  return push(Tensor({1}, s), requires_grad(x), [x](Tape& t, Node& self) {
    t.accumulate(x, Tensor(t.nodes_[x.id].value.shape(), self.grad[0]));
  });
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::probs(Var loss) const {
  const Node& n = node(loss);
  if (n.saved.empty()) {
    throw StateError("variable " + std::to_string(loss.id) +
                     " is not a softmax_xent node");
  }
  return n.saved;
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

void Tape::backward(Var root, std::optional<Tensor> upstream) {
  if (nodes_.empty()) throw StateError("backward called on an empty tape");
  Node& r = node(root);
  Tensor seed;
  if (upstream) {
    if (upstream->shape() != r.value.shape()) {
      throw DimensionError("backward: upstream gradient " +
                           shape_string(upstream->shape()) +
                           " does not match root " +
                           shape_string(r.value.shape()));
    }
    seed = std::move(*upstream);
  } else {
    if (r.value.size() != 1) {
      throw StateError("backward without upstream gradient needs a scalar root");
    }
    seed = Tensor(r.value.shape(), 1.0);
  }
  for (Node& n : nodes_) n.grad = Tensor();
  if (r.requires_grad) r.grad = std::move(seed);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    n.backward(*this, n);
  }
  for (Node& n : nodes_) {
    if (n.requires_grad && n.grad.empty()) n.grad = Tensor(n.value.shape());
  }
  has_gradients_ = true;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!has_gradients_) {
    throw StateError("gradient requested before backward");
  }
  if (!n.requires_grad) {
    throw StateError("variable " + std::to_string(v.id) +
                     " does not require a gradient");
  }
  return n.grad;
}

void Tape::clear() {
  nodes_.clear();
  has_gradients_ = false;
}

}  // namespace flop
