#pragma once

// Forward/backward kernels used by the aggregation networks. All operate on
// C×H×W double tensors; convolutions are stride 1 with zero "same" padding.

#include <span>
#include <vector>

#include "posefuse/tensor.hpp"

namespace posefuse::nn {

/// weight layout: [out][in][k][k]; bias: [out].
Tensor conv2d(const Tensor& x, std::span<const double> weight, std::span<const double> bias,
              int out_channels, int kernel);

/// Accumulates dL/dweight and dL/dbias into the given spans; adds dL/dx into `dx`
/// when non-null (dx must already have x's shape).
void conv2d_backward(const Tensor& x, const Tensor& dy, std::span<const double> weight,
                     int kernel, std::span<double> dweight, std::span<double> dbias, Tensor* dx);

Tensor relu(const Tensor& x);
/// dy masked by (pre_activation > 0).
Tensor relu_backward(const Tensor& pre_activation, const Tensor& dy);

/// Bilinear, corner-aligned resize to target×target. Exact copy when already that size.
Tensor upsample(const Tensor& x, int target);
/// Adjoint of upsample onto a tensor of shape `input_shape`.
Tensor upsample_backward(const Tensor& dy, const Shape3& input_shape);

/// Per-channel spatial mean.
std::vector<double> global_average_pool(const Tensor& x);

/// y = W·x + b, W row-major [out][in].
std::vector<double> affine(std::span<const double> x, std::span<const double> weight,
                           std::span<const double> bias, int out);
/// Accumulates dW, db; returns dL/dx.
std::vector<double> affine_backward(std::span<const double> x, std::span<const double> dy,
                                    std::span<const double> weight, std::span<double> dweight,
                                    std::span<double> dbias);

/// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace posefuse::nn
