#pragma once

#include <array>
#include <optional>
#include <string>

#include "salbench/attention.hpp"
#include "salbench/fusion.hpp"
#include "salbench/losses.hpp"
#include "salbench/rng.hpp"

// Desk-scale two-stream fusion network. Each stream runs five conv blocks;
// block outputs pass through CBAM and merge across modalities stage by
// stage. A pyramid-pooling guidance feature computed on the deepest fused
// map steers a top-down decode through feature aggregation modules, and a
// sigmoid head emits the saliency map.

namespace salbench {

template <typename P>
struct ConvBlockT {
    P conv1;
    P conv2;
};

template <typename P>
struct AdfNetT {
    std::array<ConvBlockT<P>, 5> rgb_blocks;
    std::array<ConvBlockT<P>, 5> t_blocks;
    std::array<CbamT<P>, 5> cbam_rgb;
    std::array<CbamT<P>, 5> cbam_t;
    std::array<P, 4> merge_convs;  // fusion stages 2..5
    PpmT<P> ppm;
    std::array<FamT<P>, 4> fams;  // decode levels 2..5, index 0 -> level 2
    // 1x1 channel adapters on the decode path, created only where channel
    // counts differ (levels 2..4, index 0 -> level 2).
    std::array<std::optional<P>, 3> decode_adapt;  // upsampled decoded feature -> level width
    std::array<std::optional<P>, 3> guide_adapt;   // upsampled guidance -> level width
    P head;  // 3x3, level-2 width -> 1
};

struct AdfNetConfig {
    std::array<int, 5> channels{8, 16, 32, 32, 32};
    int reduction = 4;       // channel-attention bottleneck ratio
    int spatial_kernel = 7;  // spatial-attention kernel size
    int rgb_channels = 3;
    int t_channels = 1;
};

struct AdfNetToy {
    AdfNetConfig config;
    AdfNetT<ConvParams> params;
};

struct AdfNetGrads {
    AdfNetT<ConvGrads> g;
};

// Visits every conv bundle in the documented fixed order: rgb blocks,
// thermal blocks, rgb CBAMs, thermal CBAMs, merge convs, PPM branches +
// fuse, FAMs, decode adapters, guide adapters, head. Weight init, the SGD
// update and the serialized container all follow this order.
template <typename Net, typename Fn>
void visit_convs(Net& net, Fn&& fn) {
    for (int b = 0; b < 5; ++b) {
        fn("rgb_block" + std::to_string(b + 1) + ".conv1", net.rgb_blocks[b].conv1);
        fn("rgb_block" + std::to_string(b + 1) + ".conv2", net.rgb_blocks[b].conv2);
    }
    for (int b = 0; b < 5; ++b) {
        fn("t_block" + std::to_string(b + 1) + ".conv1", net.t_blocks[b].conv1);
        fn("t_block" + std::to_string(b + 1) + ".conv2", net.t_blocks[b].conv2);
    }
    for (int b = 0; b < 5; ++b) {
        const std::string base = "cbam_rgb" + std::to_string(b + 1);
        fn(base + ".ca_reduce", net.cbam_rgb[b].ca_reduce);
        fn(base + ".ca_expand", net.cbam_rgb[b].ca_expand);
        fn(base + ".sa_conv", net.cbam_rgb[b].sa_conv);
    }
    for (int b = 0; b < 5; ++b) {
        const std::string base = "cbam_t" + std::to_string(b + 1);
        fn(base + ".ca_reduce", net.cbam_t[b].ca_reduce);
        fn(base + ".ca_expand", net.cbam_t[b].ca_expand);
        fn(base + ".sa_conv", net.cbam_t[b].sa_conv);
    }
    for (int s = 0; s < 4; ++s) {
        fn("merge_conv" + std::to_string(s + 2), net.merge_convs[s]);
    }
    for (int b = 0; b < 4; ++b) {
        fn("ppm.branch" + std::to_string(b + 1), net.ppm.branch_convs[b]);
    }
    fn("ppm.fuse", net.ppm.fuse_conv);
    for (int l = 0; l < 4; ++l) {
        fn("fam" + std::to_string(l + 2) + ".fuse", net.fams[l].fuse_conv);
    }
    for (int l = 0; l < 3; ++l) {
        if (net.decode_adapt[l]) fn("decode_adapt" + std::to_string(l + 2), *net.decode_adapt[l]);
    }
    for (int l = 0; l < 3; ++l) {
        if (net.guide_adapt[l]) fn("guide_adapt" + std::to_string(l + 2), *net.guide_adapt[l]);
    }
    fn("head", net.head);
}

// Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out)), fans counted as
// channels x kernel area) drawn from one seeded PCG32 stream in visit
// order; biases zero.
AdfNetToy adfnet_init(const AdfNetConfig& config, std::uint64_t seed);

AdfNetGrads make_grads(const AdfNetToy& net);

struct BlockCache {
    Tensor in;
    Tensor pre1, act1, pre2, act2;
    std::vector<std::int64_t> pool_argmax;  // empty for block 1 (no pool)
    Tensor out;
};

struct DecodeLevelCache {
    Tensor dec_upsampled;    // upsample of the deeper decoded feature (levels 2..4)
    Tensor guide_upsampled;  // upsample of the guidance feature (levels 2..4)
    Tensor merged;           // FAM input
    FamCache fam;
    Tensor out;
};

struct AdfNetForwardCache {
    std::array<BlockCache, 5> rgb_blocks, t_blocks;
    std::array<CbamCache, 5> cbam_rgb, cbam_t;
    std::array<FuseStageCache, 5> fuse;
    std::array<Tensor, 5> fused;  // F_1..F_5
    PpmCache ppm;
    Tensor guidance;
    std::array<DecodeLevelCache, 4> decode;  // levels 2..5, index 0 -> level 2
    Tensor head_logits;
    Tensor head_prob;
    Tensor out;
};

// Saliency forward pass: rgb (n, rgb_channels, H, W) and t
// (n, t_channels, H, W), H == W and divisible by 32. Output (n, 1, H, W),
// every value strictly inside (0, 1).
Tensor adfnet_forward(const AdfNetToy& net, const Tensor& rgb, const Tensor& t);
Tensor adfnet_forward_cached(const AdfNetToy& net, const Tensor& rgb, const Tensor& t, AdfNetForwardCache& cache);

// Parameter gradients of sum(d_out * forward(...)).
AdfNetGrads adfnet_backward(const AdfNetToy& net, const AdfNetForwardCache& cache, const Tensor& d_out);

struct TrainStepResult {
    AdfNetToy net;
    LossValue loss;
};

// One plain gradient-descent step on total_loss(forward(rgb, t), gt).
// Returns the updated parameter bundle; the input network is untouched.
TrainStepResult train_step(const AdfNetToy& net, const Tensor& rgb, const Tensor& t, const Tensor& gt, double lr);

// Flat binary container: magic, version, config, then every conv bundle in
// visit order as (name, weight dims, weight payload, bias payload), all
// little-endian with 64-bit float payloads.
void save_network(const AdfNetToy& net, const std::string& path);
AdfNetToy load_network(const std::string& path);

}  // namespace salbench
