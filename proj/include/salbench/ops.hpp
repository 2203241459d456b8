#pragma once

#include <cstdint>
#include <vector>

#include "salbench/tensor.hpp"

// Dense kernels for the fusion network: forward passes plus hand-written
// backward passes. All functions are pure; summation order inside windows
// and kernels is fixed to row-major so repeated runs are bit-identical.

namespace salbench {

struct ConvParams {
    Tensor weight;             // (out_c, in_c, kh, kw)
    std::vector<double> bias;  // out_c entries
    int stride = 1;
    int padding = 0;           // symmetric zero-padding

    int out_channels() const { return weight.dims.n; }
    int in_channels() const { return weight.dims.c; }
    int kernel_h() const { return weight.dims.h; }
    int kernel_w() const { return weight.dims.w; }
};

// Returns a zeroed parameter bundle with "same" padding ((k-1)/2) when
// same_pad is set; k must be odd in that case.
ConvParams make_conv(int out_c, int in_c, int kh, int kw, int stride = 1, bool same_pad = true);

struct ConvGrads {
    Tensor dx;
    Tensor dweight;
    std::vector<double> dbias;
};

Dims conv2d_out_dims(const Dims& x, const ConvParams& p);
Tensor conv2d(const Tensor& x, const ConvParams& p);
// Gradients of sum(dy * conv2d(x, p)) w.r.t. x, weight and bias.
ConvGrads conv2d_grad(const Tensor& x, const ConvParams& p, const Tensor& dy);
// Data gradient only (used where the kernel is a fixed constant).
Tensor conv2d_grad_data(const Tensor& x, const ConvParams& p, const Tensor& dy);

// 2x2 max-pool, stride 2. argmax records the flat index (into x.data) of the
// winning element; ties go to the first occurrence in row-major order.
struct MaxPoolResult {
    Tensor y;
    std::vector<std::int64_t> argmax;
};
MaxPoolResult maxpool2(const Tensor& x);
Tensor maxpool2_backward(const Dims& x_dims, const std::vector<std::int64_t>& argmax, const Tensor& dy);

// Global max over each (n, c) plane -> (n, c, 1, 1).
MaxPoolResult global_maxpool(const Tensor& x);
Tensor global_maxpool_backward(const Dims& x_dims, const std::vector<std::int64_t>& argmax, const Tensor& dy);

// rate x rate average pooling; spatial dims must divide by rate. rate 1 is
// the identity.
Tensor avgpool(const Tensor& x, int rate);
Tensor avgpool_backward(const Dims& x_dims, int rate, const Tensor& dy);

// Adaptive average pooling: output bin (i, j) averages input rows
// [floor(i*h/oh), ceil((i+1)*h/oh)) x cols [floor(j*w/ow), ceil((j+1)*w/ow)).
Tensor adaptive_avgpool(const Tensor& x, int oh, int ow);
Tensor adaptive_avgpool_backward(const Dims& x_dims, int oh, int ow, const Tensor& dy);

// Bilinear upsampling with half-pixel source coordinates
// src = (dst + 0.5) * (in / out) - 0.5, clamped to [0, in - 1].
// Only upscaling (oh >= h, ow >= w) is supported.
Tensor upsample_bilinear(const Tensor& x, int oh, int ow);
Tensor upsample_bilinear_backward(const Dims& x_dims, const Tensor& dy);

enum class Act { Sigmoid, Tanh, Relu, Abs };

Tensor activation(const Tensor& x, Act kind);
// dx from dy; needs x for relu/abs and y for sigmoid/tanh.
Tensor activation_backward(const Tensor& x, const Tensor& y, Act kind, const Tensor& dy);

enum class EltOp { Add, Mul };

// Elementwise add/mul. b may have equal dims, or be broadcastable with dims
// (n, c, 1, 1) (per-channel vector) or (n, 1, h, w) (spatial map).
Tensor eltwise(const Tensor& a, const Tensor& b, EltOp op);
struct EltwiseGrads {
    Tensor da;
    Tensor db;  // reduced over broadcast axes back to b's dims
};
EltwiseGrads eltwise_backward(const Tensor& a, const Tensor& b, EltOp op, const Tensor& dy);

Tensor concat_channels(const std::vector<Tensor>& parts);
std::vector<Tensor> concat_channels_backward(const std::vector<Dims>& part_dims, const Tensor& dy);
// Slice channels [c0, c0 + count) out of x.
Tensor slice_channels(const Tensor& x, int c0, int count);

// Per-pixel reductions over the channel axis -> (n, 1, h, w).
Tensor channel_mean(const Tensor& x);
Tensor channel_mean_backward(const Dims& x_dims, const Tensor& dy);
struct ChannelMaxResult {
    Tensor y;
    std::vector<int> argmax;  // winning channel per (n, h, w), first on ties
};
ChannelMaxResult channel_max(const Tensor& x);
Tensor channel_max_backward(const Dims& x_dims, const std::vector<int>& argmax, const Tensor& dy);

}  // namespace salbench
