#include "salbench/losses.hpp"

#include <cmath>

#include "salbench/ops.hpp"

namespace salbench {

namespace {

void check_pair(const Tensor& pred, const Tensor& gt) {
    if (!(pred.dims == gt.dims)) {
        throw ShapeError("loss: pred dims " + pred.dims.str() + " != gt dims " + gt.dims.str());
    }
    for (double g : gt.data) {
        if (g != 0.0 && g != 1.0) {
            throw ContractError("loss: ground truth must be binary (0/1)");
        }
    }
}

double clamp_unit(double p) {
    if (p < kLossEpsilon) return kLossEpsilon;
    if (p > 1.0 - kLossEpsilon) return 1.0 - kLossEpsilon;
    return p;
}

// Soft-target negative log likelihood, mean over elements.
double soft_cross_entropy(const Tensor& pred, const Tensor& target) {
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double p = clamp_unit(pred.data[i]);
        const double t = target.data[i];
        sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    return sum / static_cast<double>(pred.data.size());
}

// d(soft_cross_entropy)/d(pred); zero where the clamp is active.
Tensor soft_cross_entropy_grad(const Tensor& pred, const Tensor& target) {
    Tensor d(pred.dims);
    const double inv_n = 1.0 / static_cast<double>(pred.data.size());
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double p = pred.data[i];
        if (p < kLossEpsilon || p > 1.0 - kLossEpsilon) continue;
        const double t = target.data[i];
        d.data[i] = (-t / p + (1.0 - t) / (1.0 - p)) * inv_n;
    }
    return d;
}

ConvParams laplace_conv(const Tensor& kernel3x3) {
    ConvParams p = make_conv(1, 1, 3, 3);
    p.weight.data = kernel3x3.data;
    return p;
}

Tensor standard_laplace_kernel() {
    Tensor k(1, 1, 3, 3);
    k.data = {0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0};
    return k;
}

}  // namespace

double cross_entropy(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    return soft_cross_entropy(pred, gt);
}

Tensor laplacian_boundary_with_kernel(const Tensor& x, const Tensor& kernel3x3) {
    if (x.dims.c != 1) {
        throw ShapeError("laplacian_boundary: input must be single channel, got " + x.dims.str());
    }
    ConvParams lap = laplace_conv(kernel3x3);
    return activation(activation(conv2d(x, lap), Act::Tanh), Act::Abs);
}

Tensor laplacian_boundary(const Tensor& x) {
    return laplacian_boundary_with_kernel(x, standard_laplace_kernel());
}

double edge_loss(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    return soft_cross_entropy(laplacian_boundary(pred), laplacian_boundary(gt));
}

LossValue total_loss(const Tensor& pred, const Tensor& gt) {
    LossValue v;
    v.ce = cross_entropy(pred, gt);
    v.edge = edge_loss(pred, gt);
    v.total = v.ce + v.edge;
    return v;
}

LossWithGrad total_loss_grad(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    LossWithGrad out;

    out.value.ce = soft_cross_entropy(pred, gt);
    out.dpred = soft_cross_entropy_grad(pred, gt);

    const ConvParams lap = laplace_conv(standard_laplace_kernel());
    const Tensor boundary_gt = laplacian_boundary(gt);
    const Tensor lap_pred = conv2d(pred, lap);
    const Tensor tanh_pred = activation(lap_pred, Act::Tanh);
    const Tensor boundary_pred = activation(tanh_pred, Act::Abs);

    out.value.edge = soft_cross_entropy(boundary_pred, boundary_gt);
    Tensor d_boundary = soft_cross_entropy_grad(boundary_pred, boundary_gt);
    Tensor d_tanh = activation_backward(tanh_pred, boundary_pred, Act::Abs, d_boundary);
    Tensor d_lap = activation_backward(lap_pred, tanh_pred, Act::Tanh, d_tanh);
    Tensor d_edge = conv2d_grad_data(pred, lap, d_lap);
    for (std::size_t i = 0; i < out.dpred.data.size(); ++i) out.dpred.data[i] += d_edge.data[i];

    out.value.total = out.value.ce + out.value.edge;
    return out;
}

}  // namespace salbench
