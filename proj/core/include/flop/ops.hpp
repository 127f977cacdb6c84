#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "flop/tensor.hpp"

/// Pure tensor operations used by the models. Every function here is free of
/// side effects and safe to call concurrently.
namespace flop::ops {

/// (r x k) * (k x c). Each output is accumulated in ascending k from 0.0.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Output spatial extent of a convolution / pooling window.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel,
                               std::size_t stride, std::size_t padding);

/// Cross-correlation with zero padding. `input` is C_in x H x W or
/// B x C_in x H x W; `kernels` is C_out x C_in x k x k; `bias` is C_out.
/// Each output is (sum over c_in, ky, kx in that order of w * x) + bias.
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
              std::size_t stride, std::size_t padding);

struct PoolResult {
  Tensor output;
  /// Flat index into `input` of the element selected for each output.
  std::vector<std::size_t> argmax;
};

/// Max pooling over C x H x W or B x C x H x W. Ties resolve to the lowest
/// flat index inside the window.
PoolResult maxpool2d(const Tensor& input, std::size_t window,
                     std::size_t stride);

Tensor relu(const Tensor& input);

struct XentResult {
  double loss = 0.0;  // mean negative log-probability over the batch
  Tensor probs;       // row-wise softmax, B x K
};

/// Softmax cross-entropy over B x K logits, row max subtracted first.
XentResult softmax_xent(const Tensor& logits, std::span<const int> labels);

// ---- gradient kernels -----------------------------------------------------

/// im2col for one sample: `cols` becomes (C_in*k*k) x (H'*W') with row
/// stride `ld` (0 means H'*W'), so several samples can sit side by side.
void im2col(const double* image, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t kernel, std::size_t stride,
            std::size_t padding, double* cols, std::size_t ld = 0);

/// Adds the column matrix (row stride `ld`, 0 means H'*W') back onto a
/// C_in x H x W image.
void col2im(const double* cols, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t kernel, std::size_t stride,
            std::size_t padding, double* image, std::size_t ld = 0);

struct ConvGrads {
  Tensor input;    // empty when not requested
  Tensor kernels;
  Tensor bias;
};

/// Gradients of conv2d on a B x C_in x H x W batch given dL/d(output).
ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernels,
                          const Tensor& grad_output, std::size_t stride,
                          std::size_t padding, bool need_input_grad);

Tensor maxpool2d_backward(const Shape& input_shape,
                          std::span<const std::size_t> argmax,
                          const Tensor& grad_output);

}  // namespace flop::ops
