#pragma once

#include <cstdint>
#include <vector>

#include "salbench/ops.hpp"

// Channel-wise and spatial-wise attention gates. Channel attention rescales
// whole channel planes from global average- and max-pooled descriptors;
// spatial attention rescales per-pixel columns from channel mean/max maps.
// Both are multiplicative sigmoid gates, so outputs never exceed the input
// in magnitude.

namespace salbench {

template <typename P>
struct CbamT {
    P ca_reduce;  // 1x1, c -> c/r, shared between the avg and max paths
    P ca_expand;  // 1x1, c/r -> c, shared likewise
    P sa_conv;    // k x k, 2 -> 1, same padding
    int reduction = 4;
    int spatial_kernel = 7;
};

using CbamParams = CbamT<ConvParams>;
using CbamGrads = CbamT<ConvGrads>;

// Zero-initialised parameter bundle; channels must divide by r, k must be odd.
CbamParams make_cbam(int channels, int reduction, int spatial_kernel);
CbamGrads make_cbam_grads(const CbamParams& p);

struct ChannelAttentionCache {
    Tensor x;
    Tensor pooled_avg;   // (n, c, 1, 1)
    Tensor pooled_max;   // (n, c, 1, 1)
    std::vector<std::int64_t> max_argmax;
    Tensor hidden_avg;   // after ca_reduce
    Tensor hidden_max;
    Tensor logits;       // summed expand outputs, pre-sigmoid
    Tensor weight_vec;   // sigmoid(logits)
    Tensor y;
};

Tensor channel_attention_forward(const Tensor& x, const CbamParams& p, ChannelAttentionCache& cache);
Tensor channel_attention_backward(const CbamParams& p, const ChannelAttentionCache& cache, const Tensor& dy,
                                  CbamGrads& grads);

struct SpatialAttentionCache {
    Tensor x;
    Tensor mean_map;  // (n, 1, h, w)
    Tensor max_map;
    std::vector<int> max_argmax;
    Tensor descriptor;  // 2-channel concat
    Tensor logits;      // sa_conv output, pre-sigmoid
    Tensor weight_map;  // sigmoid(logits), (n, 1, h, w)
    Tensor y;
};

Tensor spatial_attention_forward(const Tensor& x, const CbamParams& p, SpatialAttentionCache& cache);
Tensor spatial_attention_backward(const CbamParams& p, const SpatialAttentionCache& cache, const Tensor& dy,
                                  CbamGrads& grads);

// Convenience wrappers without caches.
Tensor channel_attention(const Tensor& x, const CbamParams& p);
Tensor spatial_attention(const Tensor& x, const CbamParams& p);

struct CbamCache {
    ChannelAttentionCache channel;
    SpatialAttentionCache spatial;
};

// Full CBAM: channel attention followed by spatial attention.
Tensor cbam_forward(const Tensor& x, const CbamParams& p, CbamCache& cache);
Tensor cbam_backward(const CbamParams& p, const CbamCache& cache, const Tensor& dy, CbamGrads& grads);

}  // namespace salbench
