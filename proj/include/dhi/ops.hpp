#pragma once

#include <cstddef>

#include "dhi/tensor.hpp"

namespace dhi {

// "same": zero padding so that out = ceil(in / stride); when the total pad is
// odd the extra row/column goes to the bottom/right. "valid": no padding.
enum class Padding { Same, Valid };

enum class BatchNormMode { Train, Eval };

// Running statistics owned by a batch-norm layer.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double eps = 1e-5;
};

struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t in_h = 0, in_w = 0, in_c = 0;
  std::size_t out_h = 0, out_w = 0, out_c = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad_top = 0, pad_left = 0;
};

// Output extent and leading pad of a convolution along one axis.
struct AxisGeometry {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};
AxisGeometry conv_axis(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);

// input (N,H,W,Cin), weights (Cout,Cin,F,F) with F odd, bias (Cout) or undefined.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias = {},
              std::size_t stride = 1, Padding padding = Padding::Same);

// Adjoint of conv2d. input (N,H,W,C), weights (C,Cout,F,F): the same layout a
// conv2d mapping Cout -> C channels would use. Valid gives the full
// (H-1)*stride+F extent; Same gives H*stride, cropped like conv2d's Same pad.
Tensor transposed_conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias = {},
                         std::size_t stride = 2, Padding padding = Padding::Valid);

// Floor-mode max pooling. Ties go to the first element in row-major order.
Tensor maxpool2d(const Tensor& input, std::size_t window = 2, std::size_t stride = 2);

Tensor upsample_nearest(const Tensor& input, std::size_t factor);

// Per-channel normalization over (N,H,W). Train mode uses batch statistics
// and updates state; Eval mode uses the running statistics.
Tensor batchnorm(const Tensor& input, const Tensor& scale, const Tensor& shift,
                 BatchNormState& state, BatchNormMode mode);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);

// Repeats the channel axis of a rank-4 tensor `times` times.
Tensor tile_channels(const Tensor& x, std::size_t times);

// Identity whose backward scales the gradient by `factor`. Only used to
// verify that the gradient checker catches a broken backward pass.
Tensor faulty_identity(const Tensor& x, double factor);

}  // namespace dhi
