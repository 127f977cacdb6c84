#include "flop/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "flop/error.hpp"
#include "flop/gemm.hpp"

namespace flop::ops {

namespace {

struct ImageBatch {
  std::size_t batch, channels, height, width;
  bool batched;
};

ImageBatch image_batch(const Tensor& t, const char* op) {
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2), false};
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), true};
  throw DimensionError(std::string(op) + ": expected CxHxW or BxCxHxW, got " +
                       shape_string(t.shape()));
}

// Samples per batched GEMM, keeping the column buffer near 16 MiB.
std::size_t group_size(std::size_t batch, std::size_t per_sample) {
  constexpr std::size_t kBudget = std::size_t{1} << 14;  // doubles
  return std::clamp<std::size_t>(kBudget / std::max<std::size_t>(per_sample, 1), 1, batch);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) +
                         " by " + shape_string(b.shape()));
  }
  const std::size_t r = a.dim(0), k = a.dim(1), c = b.dim(1);
  Tensor out({r, c});
  kernels::gemm_accumulate(r, c, k, a.data().data(), k, b.data().data(), c,
                           out.data().data(), c);
  return out;
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel,
                               std::size_t stride, std::size_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

void im2col(const double* image, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t kernel, std::size_t stride,
            std::size_t padding, double* cols, std::size_t ld) {
  const std::size_t out_h = conv_output_extent(height, kernel, stride, padding);
  const std::size_t out_w = conv_output_extent(width, kernel, stride, padding);
  const std::size_t positions = ld == 0 ? out_h * out_w : ld;
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = image + c * height * width;
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx, ++row) {
        double* dst = cols + row * positions;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                   static_cast<std::ptrdiff_t>(padding);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(height)) {
            std::fill_n(dst + oy * out_w, out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(y) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t x =
                static_cast<std::ptrdiff_t>(ox * stride + kx) -
                static_cast<std::ptrdiff_t>(padding);
            dst[oy * out_w + ox] =
                (x < 0 || x >= static_cast<std::ptrdiff_t>(width)) ? 0.0 : src[x];
          }
        }
      }
    }
  }
}

void col2im(const double* cols, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t kernel, std::size_t stride,
            std::size_t padding, double* image, std::size_t ld) {
  const std::size_t out_h = conv_output_extent(height, kernel, stride, padding);
  const std::size_t out_w = conv_output_extent(width, kernel, stride, padding);
  const std::size_t positions = ld == 0 ? out_h * out_w : ld;
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = image + c * height * width;
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx, ++row) {
        const double* src = cols + row * positions;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                   static_cast<std::ptrdiff_t>(padding);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(height)) continue;
          double* dst = plane + static_cast<std::size_t>(y) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t x =
                static_cast<std::ptrdiff_t>(ox * stride + kx) -
                static_cast<std::ptrdiff_t>(padding);
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(width)) continue;
            dst[x] += src[oy * out_w + ox];
          }
        }
      }
    }
  }
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
              std::size_t stride, std::size_t padding) {
  const ImageBatch in = image_batch(input, "conv2d");
  if (kernels.rank() != 4 || kernels.dim(1) != in.channels ||
      kernels.dim(2) != kernels.dim(3)) {
    throw DimensionError("conv2d: kernels " + shape_string(kernels.shape()) +
                         " incompatible with input " +
                         shape_string(input.shape()));
  }
  const std::size_t out_c = kernels.dim(0);
  const std::size_t k = kernels.dim(2);
  if (bias.rank() != 1 || bias.dim(0) != out_c) {
    throw DimensionError("conv2d: bias " + shape_string(bias.shape()) +
                         " does not match " + std::to_string(out_c) +
                         " output channels");
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  if (k > in.height + 2 * padding || k > in.width + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_string(kernels.shape()) +
                         " larger than padded input " +
                         shape_string(input.shape()));
  }
  const std::size_t out_h = conv_output_extent(in.height, k, stride, padding);
  const std::size_t out_w = conv_output_extent(in.width, k, stride, padding);
  const std::size_t positions = out_h * out_w;
  const std::size_t patch = in.channels * k * k;

  Shape out_shape = in.batched ? Shape{in.batch, out_c, out_h, out_w}
                               : Shape{out_c, out_h, out_w};
  Tensor out(out_shape);
  const std::size_t in_stride = in.channels * in.height * in.width;
  const std::size_t group = group_size(in.batch, patch * positions);
  thread_local std::vector<double> cols, y;
  cols.resize(patch * group * positions);
  y.resize(out_c * group * positions);
  for (std::size_t b0 = 0; b0 < in.batch; b0 += group) {
    const std::size_t g = std::min(group, in.batch - b0);
    const std::size_t ld = g * positions;
    for (std::size_t s = 0; s < g; ++s) {
      im2col(input.data().data() + (b0 + s) * in_stride, in.channels, in.height,
             in.width, k, stride, padding, cols.data() + s * positions, ld);
    }
    std::fill_n(y.begin(), out_c * ld, 0.0);
    kernels::gemm_accumulate(out_c, ld, patch, kernels.data().data(), patch,
                             cols.data(), ld, y.data(), ld);
    for (std::size_t s = 0; s < g; ++s) {
      double* dst = out.data().data() + (b0 + s) * out_c * positions;
      for (std::size_t c = 0; c < out_c; ++c) {
        const double bv = bias[c];
        const double* src = y.data() + c * ld + s * positions;
        for (std::size_t p = 0; p < positions; ++p) dst[c * positions + p] = src[p] + bv;
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernels,
                          const Tensor& grad_output, std::size_t stride,
                          std::size_t padding, bool need_input_grad) {
  const ImageBatch in = image_batch(input, "conv2d_backward");
  const std::size_t out_c = kernels.dim(0);
  const std::size_t k = kernels.dim(2);
  const std::size_t out_h = conv_output_extent(in.height, k, stride, padding);
  const std::size_t out_w = conv_output_extent(in.width, k, stride, padding);
  const std::size_t positions = out_h * out_w;
  const std::size_t patch = in.channels * k * k;
  if (grad_output.size() != in.batch * out_c * positions) {
    throw DimensionError("conv2d_backward: upstream gradient " +
                         shape_string(grad_output.shape()) +
                         " does not match output size");
  }

  ConvGrads grads;
  grads.kernels = Tensor(kernels.shape());
  grads.bias = Tensor({out_c});
  if (need_input_grad) grads.input = Tensor(input.shape());

  const std::size_t in_stride = in.channels * in.height * in.width;
  const std::size_t group = group_size(in.batch, patch * positions);
  thread_local std::vector<double> cols, dy, dcols;
  cols.resize(patch * group * positions);
  dy.resize(out_c * group * positions);
  if (need_input_grad) dcols.resize(cols.size());

  // Kernel gradient sums over samples then positions, in order, so stacking
  // a group's samples along k matches the per-sample accumulation exactly.
  for (std::size_t b0 = 0; b0 < in.batch; b0 += group) {
    const std::size_t g = std::min(group, in.batch - b0);
    const std::size_t ld = g * positions;
    for (std::size_t s = 0; s < g; ++s) {
      const double* dout = grad_output.data().data() + (b0 + s) * out_c * positions;
      im2col(input.data().data() + (b0 + s) * in_stride, in.channels, in.height,
             in.width, k, stride, padding, cols.data() + s * positions, ld);
      for (std::size_t c = 0; c < out_c; ++c) {
        std::copy_n(dout + c * positions, positions, dy.data() + c * ld + s * positions);
        double acc = grads.bias[c];
        for (std::size_t p = 0; p < positions; ++p) acc += dout[c * positions + p];
        grads.bias[c] = acc;
      }
    }
    kernels::gemm_accumulate_nt(out_c, patch, ld, dy.data(), ld, cols.data(), ld,
                                grads.kernels.data().data(), patch);
    if (need_input_grad) {
      std::fill_n(dcols.begin(), patch * ld, 0.0);
      kernels::gemm_accumulate_tn(patch, ld, out_c, kernels.data().data(), patch,
                                  dy.data(), ld, dcols.data(), ld);
      for (std::size_t s = 0; s < g; ++s) {
        col2im(dcols.data() + s * positions, in.channels, in.height, in.width, k,
               stride, padding, grads.input.data().data() + (b0 + s) * in_stride, ld);
      }
    }
  }
  return grads;
}

PoolResult maxpool2d(const Tensor& input, std::size_t window,
                     std::size_t stride) {
  const ImageBatch in = image_batch(input, "maxpool2d");
  if (window == 0 || stride == 0) {
    throw DimensionError("maxpool2d: window and stride must be >= 1");
  }
  if (window > in.height || window > in.width) {
    throw DimensionError("maxpool2d: window " + std::to_string(window) +
                         " exceeds input " + shape_string(input.shape()));
  }
  const std::size_t out_h = conv_output_extent(in.height, window, stride, 0);
  const std::size_t out_w = conv_output_extent(in.width, window, stride, 0);
  Shape out_shape = in.batched ? Shape{in.batch, in.channels, out_h, out_w}
                               : Shape{in.channels, out_h, out_w};
  PoolResult result{Tensor(out_shape), {}};
  result.argmax.resize(result.output.size());

  const auto x = input.data();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < in.batch * in.channels; ++plane) {
    const std::size_t base = plane * in.height * in.width;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox, ++o) {
        std::size_t best = base + (oy * stride) * in.width + ox * stride;
        double best_v = x[best];
        for (std::size_t wy = 0; wy < window; ++wy) {
          for (std::size_t wx = 0; wx < window; ++wx) {
            const std::size_t idx =
                base + (oy * stride + wy) * in.width + ox * stride + wx;
            if (x[idx] > best_v) {
              best_v = x[idx];
              best = idx;
            }
          }
        }
        result.output[o] = best_v;
        result.argmax[o] = best;
      }
    }
  }
  return result;
}

Tensor maxpool2d_backward(const Shape& input_shape,
                          std::span<const std::size_t> argmax,
                          const Tensor& grad_output) {
  if (argmax.size() != grad_output.size()) {
    throw DimensionError("maxpool2d_backward: argmax/gradient size mismatch");
  }
  Tensor grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += grad_output[i];
  return grad;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    out[i] = input[i] > 0.0 ? input[i] : 0.0;
  }
  return out;
}

XentResult softmax_xent(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw DimensionError("softmax_xent: logits must be BxK, got " +
                         shape_string(logits.shape()));
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("softmax_xent: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(batch));
  }
  XentResult result{0.0, Tensor(logits.shape())};
  double total = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw LabelError("softmax_xent: label " + std::to_string(label) +
                       " outside [0, " + std::to_string(classes) + ")");
    }
    const double* z = logits.data().data() + r * classes;
    double* p = result.probs.data().data() + r * classes;
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) zmax = std::max(zmax, z[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      p[c] = std::exp(z[c] - zmax);
      denom += p[c];
    }
    for (std::size_t c = 0; c < classes; ++c) p[c] /= denom;
    total += std::log(denom) - (z[label] - zmax);
  }
  result.loss = total / static_cast<double>(batch);
  return result;
}

}  // namespace flop::ops
