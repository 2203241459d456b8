#include "salbench/fusion.hpp"

#include <algorithm>

namespace salbench {

namespace {

void accumulate(ConvGrads& into, const ConvGrads& g) {
    for (std::size_t i = 0; i < g.dweight.data.size(); ++i) into.dweight.data[i] += g.dweight.data[i];
    for (std::size_t i = 0; i < g.dbias.size(); ++i) into.dbias[i] += g.dbias[i];
}

ConvGrads zero_grads(const ConvParams& p) {
    ConvGrads g;
    g.dweight = Tensor(p.weight.dims);
    g.dbias.assign(p.bias.size(), 0.0);
    return g;
}

}  // namespace

Tensor fuse_stage_forward(int i, const Tensor* f_prev, const Tensor& m_rgb, const Tensor& m_t,
                          const ConvParams* merge, FuseStageCache& cache) {
    if (i < 1 || i > 5) throw ContractError("fuse_stage: stage index must be in 1..5");
    require_dims(m_t, m_rgb.dims, "fuse_stage: m_t");
    if (i == 1) {
        if (f_prev != nullptr || merge != nullptr) {
            throw ContractError("fuse_stage: stage 1 takes no previous feature");
        }
        cache.y = eltwise(m_rgb, m_t, EltOp::Add);
        return cache.y;
    }
    if (f_prev == nullptr || merge == nullptr) {
        throw ContractError("fuse_stage: stages 2..5 need the previous feature and merge conv");
    }
    cache.f_prev = *f_prev;
    MaxPoolResult mp = maxpool2(*f_prev);
    cache.pooled = std::move(mp.y);
    cache.pool_argmax = std::move(mp.argmax);
    Tensor carried = conv2d(cache.pooled, *merge);
    if (!(carried.dims == m_rgb.dims)) {
        throw ShapeError("fuse_stage: carried feature " + carried.dims.str() + " does not match modality features " +
                         m_rgb.dims.str());
    }
    cache.y = eltwise(eltwise(carried, m_rgb, EltOp::Add), m_t, EltOp::Add);
    return cache.y;
}

Tensor fuse_stage(int i, const Tensor* f_prev, const Tensor& m_rgb, const Tensor& m_t, const ConvParams* merge) {
    FuseStageCache cache;
    return fuse_stage_forward(i, f_prev, m_rgb, m_t, merge, cache);
}

FuseStageGrads fuse_stage_backward(int i, const ConvParams* merge, const FuseStageCache& cache, const Tensor& dy,
                                   ConvGrads* merge_grads) {
    FuseStageGrads g;
    g.dm_rgb = dy;
    g.dm_t = dy;
    if (i == 1) return g;
    ConvGrads cg = conv2d_grad(cache.pooled, *merge, dy);
    if (merge_grads != nullptr) accumulate(*merge_grads, cg);
    g.df_prev = maxpool2_backward(cache.f_prev.dims, cache.pool_argmax, cg.dx);
    return g;
}

PpmParams make_ppm(int channels, int out_channels) {
    if (channels % 4 != 0) {
        throw ConfigError("make_ppm: channel count must divide by 4, got " + std::to_string(channels));
    }
    PpmParams p;
    for (auto& bc : p.branch_convs) bc = make_conv(channels / 4, channels, 1, 1);
    p.fuse_conv = make_conv(out_channels, channels, 3, 3);
    return p;
}

PpmGrads make_ppm_grads(const PpmParams& p) {
    PpmGrads g;
    for (std::size_t i = 0; i < 4; ++i) g.branch_convs[i] = zero_grads(p.branch_convs[i]);
    g.fuse_conv = zero_grads(p.fuse_conv);
    return g;
}

Tensor ppm_forward_cached(const Tensor& x, const PpmParams& p, PpmCache& cache, bool clamp_targets) {
    const int h = x.dims.h, w = x.dims.w;
    if (!clamp_targets && (h < 5 || w < 5)) {
        throw ShapeError("ppm_forward: input " + x.dims.str() + " smaller than the 5x5 pyramid branch");
    }
    cache.x = x;
    const std::array<int, 3> pyramid{1, 3, 5};
    std::vector<Tensor> upsampled;
    upsampled.reserve(4);
    for (std::size_t b = 0; b < 4; ++b) {
        PpmBranchCache& bc = cache.branches[b];
        if (b < 3) {
            bc.identity = false;
            bc.target_h = clamp_targets ? std::min(pyramid[b], h) : pyramid[b];
            bc.target_w = clamp_targets ? std::min(pyramid[b], w) : pyramid[b];
            bc.pooled = adaptive_avgpool(x, bc.target_h, bc.target_w);
            bc.conv_out = conv2d(bc.pooled, p.branch_convs[b]);
            upsampled.push_back(upsample_bilinear(bc.conv_out, h, w));
        } else {
            bc.identity = true;
            bc.target_h = h;
            bc.target_w = w;
            bc.conv_out = conv2d(x, p.branch_convs[b]);
            upsampled.push_back(bc.conv_out);
        }
    }
    cache.cat = concat_channels(upsampled);
    cache.y = conv2d(cache.cat, p.fuse_conv);
    return cache.y;
}

Tensor ppm_forward(const Tensor& x, const PpmParams& p) {
    PpmCache cache;
    return ppm_forward_cached(x, p, cache, false);
}

Tensor ppm_backward(const PpmParams& p, const PpmCache& cache, const Tensor& dy, PpmGrads& grads) {
    ConvGrads fuse = conv2d_grad(cache.cat, p.fuse_conv, dy);
    accumulate(grads.fuse_conv, fuse);

    std::vector<Dims> part_dims;
    part_dims.reserve(4);
    const int branch_c = p.branch_convs[0].out_channels();
    for (std::size_t b = 0; b < 4; ++b) {
        part_dims.push_back(Dims{cache.x.dims.n, branch_c, cache.x.dims.h, cache.x.dims.w});
    }
    std::vector<Tensor> dparts = concat_channels_backward(part_dims, fuse.dx);

    Tensor dx(cache.x.dims);
    for (std::size_t b = 0; b < 4; ++b) {
        const PpmBranchCache& bc = cache.branches[b];
        if (bc.identity) {
            ConvGrads cg = conv2d_grad(cache.x, p.branch_convs[b], dparts[b]);
            accumulate(grads.branch_convs[b], cg);
            for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += cg.dx.data[i];
        } else {
            Tensor dconv = upsample_bilinear_backward(bc.conv_out.dims, dparts[b]);
            ConvGrads cg = conv2d_grad(bc.pooled, p.branch_convs[b], dconv);
            accumulate(grads.branch_convs[b], cg);
            Tensor dpool = adaptive_avgpool_backward(cache.x.dims, bc.target_h, bc.target_w, cg.dx);
            for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dpool.data[i];
        }
    }
    return dx;
}

FamParams make_fam(int channels) {
    FamParams p;
    p.fuse_conv = make_conv(channels, channels, 3, 3);
    return p;
}

FamGrads make_fam_grads(const FamParams& p) {
    FamGrads g;
    g.fuse_conv = zero_grads(p.fuse_conv);
    return g;
}

Tensor fam_forward_cached(const Tensor& x, const FamParams& p, FamCache& cache, bool allow_adaptive) {
    const int h = x.dims.h, w = x.dims.w;
    if (!allow_adaptive && (h % 8 != 0 || w % 8 != 0)) {
        throw ShapeError("fam_forward: spatial dims " + x.dims.str() + " must divide by 8");
    }
    cache.x_dims = x.dims;
    Tensor sum;
    for (std::size_t b = 0; b < kFamRates.size(); ++b) {
        const int rate = kFamRates[b];
        FamBranchCache& bc = cache.branches[b];
        bc.rate = rate;
        bc.exact = (h % rate == 0 && w % rate == 0);
        if (bc.exact) {
            bc.pooled = avgpool(x, rate);
        } else {
            bc.pooled = adaptive_avgpool(x, std::max(1, (h + rate - 1) / rate), std::max(1, (w + rate - 1) / rate));
        }
        Tensor up = (bc.pooled.dims.h == h && bc.pooled.dims.w == w) ? bc.pooled : upsample_bilinear(bc.pooled, h, w);
        if (b == 0) {
            sum = std::move(up);
        } else {
            for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += up.data[i];
        }
    }
    cache.sum = std::move(sum);
    cache.y = conv2d(cache.sum, p.fuse_conv);
    return cache.y;
}

Tensor fam_forward(const Tensor& x, const FamParams& p) {
    FamCache cache;
    return fam_forward_cached(x, p, cache, false);
}

Tensor fam_backward(const FamParams& p, const FamCache& cache, const Tensor& dy, FamGrads& grads) {
    ConvGrads fuse = conv2d_grad(cache.sum, p.fuse_conv, dy);
    accumulate(grads.fuse_conv, fuse);

    Tensor dx(cache.x_dims);
    for (const FamBranchCache& bc : cache.branches) {
        Tensor dpooled = (bc.pooled.dims.h == cache.x_dims.h && bc.pooled.dims.w == cache.x_dims.w)
                             ? fuse.dx
                             : upsample_bilinear_backward(bc.pooled.dims, fuse.dx);
        Tensor dbranch = bc.exact ? avgpool_backward(cache.x_dims, bc.rate, dpooled)
                                  : adaptive_avgpool_backward(cache.x_dims, bc.pooled.dims.h, bc.pooled.dims.w, dpooled);
        for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dbranch.data[i];
    }
    return dx;
}

}  // namespace salbench
