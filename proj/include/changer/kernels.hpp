#pragma once

#include <cstdint>
#include <vector>

#include "changer/tensor.hpp"

// Raw forward/backward math on Tensor4 values. Backward kernels accumulate
// into the gradient buffers they are handed; a null pointer skips that output.
namespace changer::kernels {

struct ConvGeometry {
  int stride = 1;
  int pad = 0;
  int groups = 1;
};

Shape conv_output_shape(const Shape& x, const Shape& weight, ConvGeometry g);

/// im2col + GEMM for dense groups, direct loops for depthwise.
Tensor4 conv2d(const Tensor4& x, const Tensor4& weight, const Tensor4* bias, ConvGeometry g);
/// Plain seven-loop reference convolution.
Tensor4 conv2d_direct(const Tensor4& x, const Tensor4& weight, const Tensor4* bias, ConvGeometry g);
void conv2d_backward(const Tensor4& x, const Tensor4& weight, const Tensor4& grad_out, ConvGeometry g,
                     Tensor4* grad_x, Tensor4* grad_weight, Tensor4* grad_bias);
std::uint64_t conv2d_macs(const Shape& x, const Shape& weight, ConvGeometry g);

struct MaxPoolResult {
  Tensor4 out;
  std::vector<std::int64_t> argmax;
};
MaxPoolResult max_pool2d(const Tensor4& x, int kernel, int stride, int pad);
void max_pool2d_backward(const std::vector<std::int64_t>& argmax, const Tensor4& grad_out, Tensor4& grad_x);

struct InstanceNormResult {
  Tensor4 out;
  Tensor4 normalized;
  std::vector<double> inv_std; // one per (n, c) plane
};
InstanceNormResult instance_norm(const Tensor4& x, const Tensor4& gamma, const Tensor4& beta, double eps);
void instance_norm_backward(const InstanceNormResult& saved, const Tensor4& gamma, const Tensor4& grad_out,
                            Tensor4* grad_x, Tensor4* grad_gamma, Tensor4* grad_beta);

Tensor4 global_avg_pool(const Tensor4& x);

/// Half-pixel-centre bilinear resize by an integer factor.
Tensor4 bilinear_upsample(const Tensor4& x, int factor);
void bilinear_upsample_backward(const Tensor4& grad_out, int factor, Tensor4& grad_x);

/// Samples x at (row + flow[:,1], col + flow[:,0]) with edge clamping.
Tensor4 grid_sample(const Tensor4& x, const Tensor4& flow);
void grid_sample_backward(const Tensor4& x, const Tensor4& flow, const Tensor4& grad_out, Tensor4* grad_x,
                          Tensor4* grad_flow);

} // namespace changer::kernels
