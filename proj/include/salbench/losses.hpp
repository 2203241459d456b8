#pragma once

#include "salbench/tensor.hpp"

namespace salbench {

// Saliency losses: pixel-wise cross-entropy between map and mask, plus an
// edge term that compares Laplacian-derived boundary maps of prediction and
// ground truth. Both are normalized by pixel count so their scales match.

struct LossValue {
    double total = 0.0;
    double ce = 0.0;
    double edge = 0.0;
};

inline constexpr double kLossEpsilon = 1e-7;

// -mean(gt*log(pred) + (1-gt)*log(1-pred)); pred is clamped to
// [eps, 1-eps] inside the logs. gt must be exactly 0/1 valued.
double cross_entropy(const Tensor& pred, const Tensor& gt);

// |tanh(conv(x, K_laplace))| with K_laplace = [[0,1,0],[1,-4,1],[0,1,0]],
// same padding. Input must be single channel; output lies in [0, 1).
Tensor laplacian_boundary(const Tensor& x);
// Same computation with a caller-supplied 3x3 kernel (selfcheck negative
// control uses a perturbed kernel).
Tensor laplacian_boundary_with_kernel(const Tensor& x, const Tensor& kernel3x3);

// Cross-entropy between the two boundary maps; the ground-truth boundary
// values act as soft targets in [0, 1].
double edge_loss(const Tensor& pred, const Tensor& gt);

LossValue total_loss(const Tensor& pred, const Tensor& gt);

// Loss plus the analytic gradient w.r.t. pred (used by the trainer and the
// finite-difference suites).
struct LossWithGrad {
    LossValue value;
    Tensor dpred;
};
LossWithGrad total_loss_grad(const Tensor& pred, const Tensor& gt);

}  // namespace salbench
