#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "salbench/ops.hpp"

namespace salbench {

// ---------------------------------------------------------------------------
// Multi-modal multi-layer fusion: stage 1 adds the two modality features
// directly; deeper stages add a downsampled-and-convolved carry of the
// previous fused feature.
// ---------------------------------------------------------------------------

struct FuseStageCache {
    Tensor f_prev;
    std::vector<std::int64_t> pool_argmax;
    Tensor pooled;  // maxpool2(f_prev), input of the merge conv
    Tensor y;
};

// i in 1..5. f_prev/merge must be present exactly when i >= 2; the previous
// fused feature is 2x2 max-pooled first so the 3x3 merge conv runs at the
// current stage's resolution.
Tensor fuse_stage(int i, const Tensor* f_prev, const Tensor& m_rgb, const Tensor& m_t, const ConvParams* merge);
Tensor fuse_stage_forward(int i, const Tensor* f_prev, const Tensor& m_rgb, const Tensor& m_t,
                          const ConvParams* merge, FuseStageCache& cache);
// Produces gradients for (f_prev, m_rgb, m_t); merge-conv grads accumulate.
struct FuseStageGrads {
    Tensor df_prev;
    Tensor dm_rgb;
    Tensor dm_t;
};
FuseStageGrads fuse_stage_backward(int i, const ConvParams* merge, const FuseStageCache& cache, const Tensor& dy,
                                   ConvGrads* merge_grads);

// ---------------------------------------------------------------------------
// Pyramid pooling: four sub-branches (global average pool, 3x3 and 5x5
// adaptive pools, identity), each through its own 1x1 conv, bilinearly
// upsampled back to the input size, concatenated and fused by a 3x3 conv.
// The output is the global guidance feature.
// ---------------------------------------------------------------------------

template <typename P>
struct PpmT {
    std::array<P, 4> branch_convs;  // 1x1, c -> c/4
    P fuse_conv;                    // 3x3, 4*(c/4) -> out
};

using PpmParams = PpmT<ConvParams>;
using PpmGrads = PpmT<ConvGrads>;

PpmParams make_ppm(int channels, int out_channels);
PpmGrads make_ppm_grads(const PpmParams& p);

struct PpmBranchCache {
    int target_h = 0;
    int target_w = 0;
    bool identity = false;
    Tensor pooled;    // adaptive pool output (branch input to its conv)
    Tensor conv_out;  // pre-upsample
};

struct PpmCache {
    Tensor x;
    std::array<PpmBranchCache, 4> branches;
    Tensor cat;  // fuse conv input
    Tensor y;
};

// Strict contract: input spatial dims must be at least 5x5.
Tensor ppm_forward(const Tensor& x, const PpmParams& p);
// clamp_targets shrinks the 3x3/5x5 branch targets to the input size so the
// module stays well-formed on the coarse maps of small toy inputs; with
// inputs >= 5x5 it is identical to the strict form.
Tensor ppm_forward_cached(const Tensor& x, const PpmParams& p, PpmCache& cache, bool clamp_targets = false);
Tensor ppm_backward(const PpmParams& p, const PpmCache& cache, const Tensor& dy, PpmGrads& grads);

// ---------------------------------------------------------------------------
// Feature aggregation: four branches average-pool the input at rates
// {1, 2, 4, 8}, upsample back, sum, then a 3x3 conv reduces the aliasing
// introduced by upsampling. Spatial dims are preserved.
// ---------------------------------------------------------------------------

template <typename P>
struct FamT {
    P fuse_conv;  // 3x3, c -> c
};

using FamParams = FamT<ConvParams>;
using FamGrads = FamT<ConvGrads>;

inline constexpr std::array<int, 4> kFamRates{1, 2, 4, 8};

FamParams make_fam(int channels);
FamGrads make_fam_grads(const FamParams& p);

struct FamBranchCache {
    int rate = 1;
    bool exact = false;  // true: plain rate-r pooling; false: adaptive bins
    Tensor pooled;
};

struct FamCache {
    Dims x_dims;
    std::array<FamBranchCache, 4> branches;
    Tensor sum;  // fuse conv input
    Tensor y;
};

// Strict contract: input spatial dims must divide by 8.
Tensor fam_forward(const Tensor& x, const FamParams& p);
// allow_adaptive lets a branch whose rate does not divide the input fall
// back to adaptive bins (ceil(size/rate), clamped to >= 1); on inputs that
// divide by 8 this is bit-identical to the strict form.
Tensor fam_forward_cached(const Tensor& x, const FamParams& p, FamCache& cache, bool allow_adaptive = false);
Tensor fam_backward(const FamParams& p, const FamCache& cache, const Tensor& dy, FamGrads& grads);

}  // namespace salbench
