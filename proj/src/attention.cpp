#include "salbench/attention.hpp"

namespace salbench {

CbamParams make_cbam(int channels, int reduction, int spatial_kernel) {
    if (reduction <= 0 || channels % reduction != 0) {
        throw ConfigError("make_cbam: channels (" + std::to_string(channels) + ") must divide by reduction (" +
                          std::to_string(reduction) + ")");
    }
    if (spatial_kernel % 2 == 0) {
        throw ConfigError("make_cbam: spatial kernel must be odd");
    }
    CbamParams p;
    p.ca_reduce = make_conv(channels / reduction, channels, 1, 1);
    p.ca_expand = make_conv(channels, channels / reduction, 1, 1);
    p.sa_conv = make_conv(1, 2, spatial_kernel, spatial_kernel);
    p.reduction = reduction;
    p.spatial_kernel = spatial_kernel;
    return p;
}

CbamGrads make_cbam_grads(const CbamParams& p) {
    CbamGrads g;
    g.ca_reduce.dweight = Tensor(p.ca_reduce.weight.dims);
    g.ca_reduce.dbias.assign(p.ca_reduce.bias.size(), 0.0);
    g.ca_expand.dweight = Tensor(p.ca_expand.weight.dims);
    g.ca_expand.dbias.assign(p.ca_expand.bias.size(), 0.0);
    g.sa_conv.dweight = Tensor(p.sa_conv.weight.dims);
    g.sa_conv.dbias.assign(p.sa_conv.bias.size(), 0.0);
    g.reduction = p.reduction;
    g.spatial_kernel = p.spatial_kernel;
    return g;
}

namespace {

void accumulate(ConvGrads& into, const ConvGrads& g) {
    for (std::size_t i = 0; i < g.dweight.data.size(); ++i) into.dweight.data[i] += g.dweight.data[i];
    for (std::size_t i = 0; i < g.dbias.size(); ++i) into.dbias[i] += g.dbias[i];
}

}  // namespace

Tensor channel_attention_forward(const Tensor& x, const CbamParams& p, ChannelAttentionCache& cache) {
    if (x.dims.c != p.ca_reduce.in_channels()) {
        throw ShapeError("channel_attention: input has " + std::to_string(x.dims.c) + " channels, params expect " +
                         std::to_string(p.ca_reduce.in_channels()));
    }
    cache.x = x;
    cache.pooled_avg = adaptive_avgpool(x, 1, 1);
    MaxPoolResult mp = global_maxpool(x);
    cache.pooled_max = std::move(mp.y);
    cache.max_argmax = std::move(mp.argmax);

    // The two 1x1 convs are shared between the pooled paths; their outputs
    // merge by elementwise summation before the sigmoid.
    cache.hidden_avg = conv2d(cache.pooled_avg, p.ca_reduce);
    cache.hidden_max = conv2d(cache.pooled_max, p.ca_reduce);
    Tensor expanded_avg = conv2d(cache.hidden_avg, p.ca_expand);
    Tensor expanded_max = conv2d(cache.hidden_max, p.ca_expand);
    cache.logits = eltwise(expanded_avg, expanded_max, EltOp::Add);
    cache.weight_vec = activation(cache.logits, Act::Sigmoid);
    cache.y = eltwise(x, cache.weight_vec, EltOp::Mul);
    return cache.y;
}

Tensor channel_attention_backward(const CbamParams& p, const ChannelAttentionCache& cache, const Tensor& dy,
                                  CbamGrads& grads) {
    EltwiseGrads mul = eltwise_backward(cache.x, cache.weight_vec, EltOp::Mul, dy);
    Tensor dlogits = activation_backward(cache.logits, cache.weight_vec, Act::Sigmoid, mul.db);

    // Both expand paths receive the same upstream gradient (sum node).
    ConvGrads exp_avg = conv2d_grad(cache.hidden_avg, p.ca_expand, dlogits);
    ConvGrads exp_max = conv2d_grad(cache.hidden_max, p.ca_expand, dlogits);
    accumulate(grads.ca_expand, exp_avg);
    accumulate(grads.ca_expand, exp_max);

    ConvGrads red_avg = conv2d_grad(cache.pooled_avg, p.ca_reduce, exp_avg.dx);
    ConvGrads red_max = conv2d_grad(cache.pooled_max, p.ca_reduce, exp_max.dx);
    accumulate(grads.ca_reduce, red_avg);
    accumulate(grads.ca_reduce, red_max);

    Tensor dx = std::move(mul.da);
    Tensor d_avg = adaptive_avgpool_backward(cache.x.dims, 1, 1, red_avg.dx);
    Tensor d_max = global_maxpool_backward(cache.x.dims, cache.max_argmax, red_max.dx);
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += d_avg.data[i] + d_max.data[i];
    return dx;
}

Tensor spatial_attention_forward(const Tensor& x, const CbamParams& p, SpatialAttentionCache& cache) {
    cache.x = x;
    cache.mean_map = channel_mean(x);
    ChannelMaxResult cm = channel_max(x);
    cache.max_map = std::move(cm.y);
    cache.max_argmax = std::move(cm.argmax);
    cache.descriptor = concat_channels({cache.mean_map, cache.max_map});
    cache.logits = conv2d(cache.descriptor, p.sa_conv);
    cache.weight_map = activation(cache.logits, Act::Sigmoid);
    cache.y = eltwise(x, cache.weight_map, EltOp::Mul);
    return cache.y;
}

Tensor spatial_attention_backward(const CbamParams& p, const SpatialAttentionCache& cache, const Tensor& dy,
                                  CbamGrads& grads) {
    EltwiseGrads mul = eltwise_backward(cache.x, cache.weight_map, EltOp::Mul, dy);
    Tensor dlogits = activation_backward(cache.logits, cache.weight_map, Act::Sigmoid, mul.db);

    ConvGrads sa = conv2d_grad(cache.descriptor, p.sa_conv, dlogits);
    accumulate(grads.sa_conv, sa);

    std::vector<Tensor> parts =
        concat_channels_backward({cache.mean_map.dims, cache.max_map.dims}, sa.dx);
    Tensor d_mean = channel_mean_backward(cache.x.dims, parts[0]);
    Tensor d_max = channel_max_backward(cache.x.dims, cache.max_argmax, parts[1]);

    Tensor dx = std::move(mul.da);
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += d_mean.data[i] + d_max.data[i];
    return dx;
}

Tensor channel_attention(const Tensor& x, const CbamParams& p) {
    ChannelAttentionCache cache;
    return channel_attention_forward(x, p, cache);
}

Tensor spatial_attention(const Tensor& x, const CbamParams& p) {
    SpatialAttentionCache cache;
    return spatial_attention_forward(x, p, cache);
}

Tensor cbam_forward(const Tensor& x, const CbamParams& p, CbamCache& cache) {
    Tensor mid = channel_attention_forward(x, p, cache.channel);
    return spatial_attention_forward(mid, p, cache.spatial);
}

Tensor cbam_backward(const CbamParams& p, const CbamCache& cache, const Tensor& dy, CbamGrads& grads) {
    Tensor dmid = spatial_attention_backward(p, cache.spatial, dy, grads);
    return channel_attention_backward(p, cache.channel, dmid, grads);
}

}  // namespace salbench
