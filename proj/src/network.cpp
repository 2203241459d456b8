#include "salbench/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace salbench {

namespace {

void accumulate(ConvGrads& into, const ConvGrads& g) {
    for (std::size_t i = 0; i < g.dweight.data.size(); ++i) into.dweight.data[i] += g.dweight.data[i];
    for (std::size_t i = 0; i < g.dbias.size(); ++i) into.dbias[i] += g.dbias[i];
}

void add_into(Tensor& into, const Tensor& t) {
    require_dims(t, into.dims, "add_into");
    for (std::size_t i = 0; i < into.data.size(); ++i) into.data[i] += t.data[i];
}

ConvGrads zero_grads(const ConvParams& p) {
    ConvGrads g;
    g.dweight = Tensor(p.weight.dims);
    g.dbias.assign(p.bias.size(), 0.0);
    return g;
}

void validate_config(const AdfNetConfig& c) {
    for (int ch : c.channels) {
        if (ch <= 0) throw ConfigError("adfnet: channel counts must be positive");
        if (ch % c.reduction != 0) {
            throw ConfigError("adfnet: every channel count must divide by the reduction ratio");
        }
    }
    if (c.channels[4] % 4 != 0) {
        throw ConfigError("adfnet: block-5 channels must divide by 4 for the pyramid branches");
    }
    if (c.spatial_kernel % 2 == 0 || c.spatial_kernel <= 0) {
        throw ConfigError("adfnet: spatial kernel must be odd");
    }
    if (c.rgb_channels <= 0 || c.t_channels <= 0) {
        throw ConfigError("adfnet: input channel counts must be positive");
    }
}

// Zero-weight network with the right shapes; init and the loader fill it.
AdfNetToy adfnet_build(const AdfNetConfig& config) {
    validate_config(config);
    AdfNetToy net;
    net.config = config;
    const auto& ch = config.channels;

    for (int b = 0; b < 5; ++b) {
        const int in_rgb = (b == 0) ? config.rgb_channels : ch[b - 1];
        const int in_t = (b == 0) ? config.t_channels : ch[b - 1];
        net.params.rgb_blocks[b].conv1 = make_conv(ch[b], in_rgb, 3, 3);
        net.params.rgb_blocks[b].conv2 = make_conv(ch[b], ch[b], 3, 3);
        net.params.t_blocks[b].conv1 = make_conv(ch[b], in_t, 3, 3);
        net.params.t_blocks[b].conv2 = make_conv(ch[b], ch[b], 3, 3);
        net.params.cbam_rgb[b] = make_cbam(ch[b], config.reduction, config.spatial_kernel);
        net.params.cbam_t[b] = make_cbam(ch[b], config.reduction, config.spatial_kernel);
    }
    for (int s = 0; s < 4; ++s) {
        net.params.merge_convs[s] = make_conv(ch[s + 1], ch[s], 3, 3);
    }
    const int guide_c = ch[4];
    net.params.ppm = make_ppm(ch[4], guide_c);
    for (int l = 0; l < 4; ++l) {
        net.params.fams[l] = make_fam(ch[l + 1]);
    }
    for (int l = 0; l < 3; ++l) {
        const int level_c = ch[l + 1];   // level l+2
        const int deeper_c = ch[l + 2];  // decoded feature arriving from level l+3
        if (deeper_c != level_c) net.params.decode_adapt[l] = make_conv(level_c, deeper_c, 1, 1);
        if (guide_c != level_c) net.params.guide_adapt[l] = make_conv(level_c, guide_c, 1, 1);
    }
    net.params.head = make_conv(1, ch[1], 3, 3);
    return net;
}

}  // namespace

AdfNetToy adfnet_init(const AdfNetConfig& config, std::uint64_t seed) {
    AdfNetToy net = adfnet_build(config);
    Pcg32 rng(seed);
    visit_convs(net.params, [&rng](const std::string&, ConvParams& p) {
        const int fan_in = p.in_channels() * p.kernel_h() * p.kernel_w();
        const int fan_out = p.out_channels() * p.kernel_h() * p.kernel_w();
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (double& w : p.weight.data) w = rng.uniform(-bound, bound);
        // biases stay zero
    });
    return net;
}

AdfNetGrads make_grads(const AdfNetToy& net) {
    AdfNetGrads grads;
    const auto& p = net.params;
    auto& g = grads.g;
    for (int b = 0; b < 5; ++b) {
        g.rgb_blocks[b].conv1 = zero_grads(p.rgb_blocks[b].conv1);
        g.rgb_blocks[b].conv2 = zero_grads(p.rgb_blocks[b].conv2);
        g.t_blocks[b].conv1 = zero_grads(p.t_blocks[b].conv1);
        g.t_blocks[b].conv2 = zero_grads(p.t_blocks[b].conv2);
        g.cbam_rgb[b] = make_cbam_grads(p.cbam_rgb[b]);
        g.cbam_t[b] = make_cbam_grads(p.cbam_t[b]);
    }
    for (int s = 0; s < 4; ++s) g.merge_convs[s] = zero_grads(p.merge_convs[s]);
    g.ppm = make_ppm_grads(p.ppm);
    for (int l = 0; l < 4; ++l) g.fams[l] = make_fam_grads(p.fams[l]);
    for (int l = 0; l < 3; ++l) {
        if (p.decode_adapt[l]) g.decode_adapt[l] = zero_grads(*p.decode_adapt[l]);
        if (p.guide_adapt[l]) g.guide_adapt[l] = zero_grads(*p.guide_adapt[l]);
    }
    g.head = zero_grads(p.head);
    return grads;
}

namespace {

Tensor stream_block_forward(const ConvBlockT<ConvParams>& block, const Tensor& in, bool pool, BlockCache& cache) {
    cache.in = in;
    cache.pre1 = conv2d(in, block.conv1);
    cache.act1 = activation(cache.pre1, Act::Relu);
    cache.pre2 = conv2d(cache.act1, block.conv2);
    cache.act2 = activation(cache.pre2, Act::Relu);
    if (pool) {
        MaxPoolResult mp = maxpool2(cache.act2);
        cache.out = std::move(mp.y);
        cache.pool_argmax = std::move(mp.argmax);
    } else {
        cache.out = cache.act2;
    }
    return cache.out;
}

Tensor stream_block_backward(const ConvBlockT<ConvParams>& block, const BlockCache& cache, bool pool,
                             const Tensor& d_out, ConvBlockT<ConvGrads>& grads) {
    Tensor dact2 = pool ? maxpool2_backward(cache.act2.dims, cache.pool_argmax, d_out) : d_out;
    Tensor dpre2 = activation_backward(cache.pre2, cache.act2, Act::Relu, dact2);
    ConvGrads g2 = conv2d_grad(cache.act1, block.conv2, dpre2);
    accumulate(grads.conv2, g2);
    Tensor dpre1 = activation_backward(cache.pre1, cache.act1, Act::Relu, g2.dx);
    ConvGrads g1 = conv2d_grad(cache.in, block.conv1, dpre1);
    accumulate(grads.conv1, g1);
    return std::move(g1.dx);
}

}  // namespace

Tensor adfnet_forward_cached(const AdfNetToy& net, const Tensor& rgb, const Tensor& t, AdfNetForwardCache& cache) {
    const AdfNetConfig& cfg = net.config;
    if (rgb.dims.c != cfg.rgb_channels || t.dims.c != cfg.t_channels) {
        throw ShapeError("adfnet_forward: input channels " + rgb.dims.str() + "/" + t.dims.str() +
                         " do not match the configured streams");
    }
    if (rgb.dims.n != t.dims.n || rgb.dims.h != t.dims.h || rgb.dims.w != t.dims.w) {
        throw ShapeError("adfnet_forward: rgb " + rgb.dims.str() + " and thermal " + t.dims.str() + " disagree");
    }
    if (rgb.dims.h != rgb.dims.w || rgb.dims.h % 32 != 0 || rgb.dims.h == 0) {
        throw ShapeError("adfnet_forward: input must be square with side divisible by 32, got " + rgb.dims.str());
    }

    std::array<Tensor, 5> m_rgb, m_t;
    Tensor x = rgb;
    for (int b = 0; b < 5; ++b) {
        x = stream_block_forward(net.params.rgb_blocks[b], x, b >= 1, cache.rgb_blocks[b]);
        m_rgb[b] = cbam_forward(x, net.params.cbam_rgb[b], cache.cbam_rgb[b]);
    }
    x = t;
    for (int b = 0; b < 5; ++b) {
        x = stream_block_forward(net.params.t_blocks[b], x, b >= 1, cache.t_blocks[b]);
        m_t[b] = cbam_forward(x, net.params.cbam_t[b], cache.cbam_t[b]);
    }

    cache.fused[0] = fuse_stage_forward(1, nullptr, m_rgb[0], m_t[0], nullptr, cache.fuse[0]);
    for (int i = 2; i <= 5; ++i) {
        cache.fused[i - 1] = fuse_stage_forward(i, &cache.fused[i - 2], m_rgb[i - 1], m_t[i - 1],
                                                &net.params.merge_convs[i - 2], cache.fuse[i - 1]);
    }

    cache.guidance = ppm_forward_cached(cache.fused[4], net.params.ppm, cache.ppm, /*clamp_targets=*/true);

    // Top-down decode, level 5 first. (index 0 <-> level 2)
    {
        DecodeLevelCache& dl = cache.decode[3];
        dl.merged = eltwise(cache.fused[4], cache.guidance, EltOp::Add);
        dl.out = fam_forward_cached(dl.merged, net.params.fams[3], dl.fam, /*allow_adaptive=*/true);
    }
    for (int li = 2; li >= 0; --li) {
        DecodeLevelCache& dl = cache.decode[li];
        const Tensor& level_feat = cache.fused[li + 1];
        const Tensor& deeper = cache.decode[li + 1].out;
        dl.dec_upsampled = upsample_bilinear(deeper, level_feat.dims.h, level_feat.dims.w);
        dl.guide_upsampled = upsample_bilinear(cache.guidance, level_feat.dims.h, level_feat.dims.w);
        Tensor dec_part = net.params.decode_adapt[li] ? conv2d(dl.dec_upsampled, *net.params.decode_adapt[li])
                                                      : dl.dec_upsampled;
        Tensor guide_part = net.params.guide_adapt[li] ? conv2d(dl.guide_upsampled, *net.params.guide_adapt[li])
                                                       : dl.guide_upsampled;
        dl.merged = eltwise(eltwise(level_feat, dec_part, EltOp::Add), guide_part, EltOp::Add);
        dl.out = fam_forward_cached(dl.merged, net.params.fams[li], dl.fam, /*allow_adaptive=*/true);
    }

    cache.head_logits = conv2d(cache.decode[0].out, net.params.head);
    cache.head_prob = activation(cache.head_logits, Act::Sigmoid);
    cache.out = upsample_bilinear(cache.head_prob, rgb.dims.h, rgb.dims.w);
    return cache.out;
}

Tensor adfnet_forward(const AdfNetToy& net, const Tensor& rgb, const Tensor& t) {
    AdfNetForwardCache cache;
    return adfnet_forward_cached(net, rgb, t, cache);
}

AdfNetGrads adfnet_backward(const AdfNetToy& net, const AdfNetForwardCache& cache, const Tensor& d_out) {
    AdfNetGrads grads = make_grads(net);

    Tensor dprob = upsample_bilinear_backward(cache.head_prob.dims, d_out);
    Tensor dlogits = activation_backward(cache.head_logits, cache.head_prob, Act::Sigmoid, dprob);
    ConvGrads head_g = conv2d_grad(cache.decode[0].out, net.params.head, dlogits);
    accumulate(grads.g.head, head_g);

    std::array<Tensor, 4> d_decoded;  // gradient on each decode level's output
    d_decoded[0] = std::move(head_g.dx);

    std::array<Tensor, 5> d_fused;
    for (int i = 0; i < 5; ++i) d_fused[i] = Tensor(cache.fused[i].dims);
    Tensor d_guidance(cache.guidance.dims);

    for (int li = 0; li <= 2; ++li) {
        const DecodeLevelCache& dl = cache.decode[li];
        Tensor dmerged = fam_backward(net.params.fams[li], dl.fam, d_decoded[li], grads.g.fams[li]);
        add_into(d_fused[li + 1], dmerged);

        Tensor dup_dec;
        if (net.params.decode_adapt[li]) {
            ConvGrads cg = conv2d_grad(dl.dec_upsampled, *net.params.decode_adapt[li], dmerged);
            accumulate(*grads.g.decode_adapt[li], cg);
            dup_dec = std::move(cg.dx);
        } else {
            dup_dec = dmerged;
        }
        Tensor dd_next = upsample_bilinear_backward(cache.decode[li + 1].out.dims, dup_dec);
        if (d_decoded[li + 1].data.empty()) {
            d_decoded[li + 1] = std::move(dd_next);
        } else {
            add_into(d_decoded[li + 1], dd_next);
        }

        Tensor dup_g;
        if (net.params.guide_adapt[li]) {
            ConvGrads cg = conv2d_grad(dl.guide_upsampled, *net.params.guide_adapt[li], dmerged);
            accumulate(*grads.g.guide_adapt[li], cg);
            dup_g = std::move(cg.dx);
        } else {
            dup_g = dmerged;
        }
        add_into(d_guidance, upsample_bilinear_backward(cache.guidance.dims, dup_g));
    }
    {
        Tensor dmerged = fam_backward(net.params.fams[3], cache.decode[3].fam, d_decoded[3], grads.g.fams[3]);
        add_into(d_fused[4], dmerged);
        add_into(d_guidance, dmerged);
    }

    add_into(d_fused[4], ppm_backward(net.params.ppm, cache.ppm, d_guidance, grads.g.ppm));

    std::array<Tensor, 5> dm_rgb, dm_t;
    for (int i = 5; i >= 2; --i) {
        FuseStageGrads fg = fuse_stage_backward(i, &net.params.merge_convs[i - 2], cache.fuse[i - 1], d_fused[i - 1],
                                                &grads.g.merge_convs[i - 2]);
        add_into(d_fused[i - 2], fg.df_prev);
        dm_rgb[i - 1] = std::move(fg.dm_rgb);
        dm_t[i - 1] = std::move(fg.dm_t);
    }
    {
        FuseStageGrads fg = fuse_stage_backward(1, nullptr, cache.fuse[0], d_fused[0], nullptr);
        dm_rgb[0] = std::move(fg.dm_rgb);
        dm_t[0] = std::move(fg.dm_t);
    }

    for (int stream = 0; stream < 2; ++stream) {
        const auto& blocks = stream == 0 ? net.params.rgb_blocks : net.params.t_blocks;
        const auto& cbams = stream == 0 ? net.params.cbam_rgb : net.params.cbam_t;
        const auto& block_caches = stream == 0 ? cache.rgb_blocks : cache.t_blocks;
        const auto& cbam_caches = stream == 0 ? cache.cbam_rgb : cache.cbam_t;
        auto& block_grads = stream == 0 ? grads.g.rgb_blocks : grads.g.t_blocks;
        auto& cbam_grads = stream == 0 ? grads.g.cbam_rgb : grads.g.cbam_t;
        const auto& dm = stream == 0 ? dm_rgb : dm_t;

        Tensor carry;
        for (int b = 4; b >= 0; --b) {
            Tensor dx_out = cbam_backward(cbams[b], cbam_caches[b], dm[b], cbam_grads[b]);
            if (!carry.data.empty()) add_into(dx_out, carry);
            carry = stream_block_backward(blocks[b], block_caches[b], b >= 1, dx_out, block_grads[b]);
        }
    }
    return grads;
}

TrainStepResult train_step(const AdfNetToy& net, const Tensor& rgb, const Tensor& t, const Tensor& gt, double lr) {
    if (lr < 0.0) throw ContractError("train_step: learning rate must be non-negative");
    AdfNetForwardCache cache;
    Tensor pred = adfnet_forward_cached(net, rgb, t, cache);
    require_dims(gt, pred.dims, "train_step: gt");
    LossWithGrad lg = total_loss_grad(pred, gt);
    AdfNetGrads grads = adfnet_backward(net, cache, lg.dpred);

    TrainStepResult result;
    result.net = net;
    result.loss = lg.value;
    if (lr > 0.0) {
        std::vector<ConvParams*> params;
        visit_convs(result.net.params, [&params](const std::string&, ConvParams& p) { params.push_back(&p); });
        std::vector<ConvGrads*> gs;
        visit_convs(grads.g, [&gs](const std::string&, ConvGrads& g) { gs.push_back(&g); });
        for (std::size_t i = 0; i < params.size(); ++i) {
            for (std::size_t j = 0; j < params[i]->weight.data.size(); ++j) {
                params[i]->weight.data[j] -= lr * gs[i]->dweight.data[j];
            }
            for (std::size_t j = 0; j < params[i]->bias.size(); ++j) {
                params[i]->bias[j] -= lr * gs[i]->dbias[j];
            }
        }
    }
    return result;
}

// --------------------------------------------------------------------------
// Serialization
// --------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'A', 'L', 'B', 'N', 'E', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
    const std::uint64_t v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    std::string buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw ParseError("network container: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return std::bit_cast<double>(v);
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_network(const AdfNetToy& net, const std::string& path) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    for (int ch : net.config.channels) put_u32(out, static_cast<std::uint32_t>(ch));
    put_u32(out, static_cast<std::uint32_t>(net.config.reduction));
    put_u32(out, static_cast<std::uint32_t>(net.config.spatial_kernel));
    put_u32(out, static_cast<std::uint32_t>(net.config.rgb_channels));
    put_u32(out, static_cast<std::uint32_t>(net.config.t_channels));

    std::uint32_t count = 0;
    visit_convs(const_cast<AdfNetT<ConvParams>&>(net.params), [&count](const std::string&, ConvParams&) { ++count; });
    put_u32(out, count);

    visit_convs(const_cast<AdfNetT<ConvParams>&>(net.params), [&out](const std::string& name, ConvParams& p) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.append(name);
        put_u32(out, static_cast<std::uint32_t>(p.weight.dims.n));
        put_u32(out, static_cast<std::uint32_t>(p.weight.dims.c));
        put_u32(out, static_cast<std::uint32_t>(p.weight.dims.h));
        put_u32(out, static_cast<std::uint32_t>(p.weight.dims.w));
        put_u32(out, static_cast<std::uint32_t>(p.stride));
        put_u32(out, static_cast<std::uint32_t>(p.padding));
        for (double v : p.weight.data) put_f64(out, v);
        put_u32(out, static_cast<std::uint32_t>(p.bias.size()));
        for (double v : p.bias) put_f64(out, v);
    });

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + path);
}

AdfNetToy load_network(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    Reader r;
    r.buf.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());

    if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
        throw ParseError("network container: bad magic in " + path);
    }
    if (r.u32() != kVersion) throw ParseError("network container: unsupported version");

    AdfNetConfig config;
    for (int i = 0; i < 5; ++i) config.channels[i] = static_cast<int>(r.u32());
    config.reduction = static_cast<int>(r.u32());
    config.spatial_kernel = static_cast<int>(r.u32());
    config.rgb_channels = static_cast<int>(r.u32());
    config.t_channels = static_cast<int>(r.u32());

    AdfNetToy net = adfnet_build(config);
    const std::uint32_t count = r.u32();
    std::uint32_t seen = 0;
    visit_convs(net.params, [&r, &seen](const std::string& name, ConvParams& p) {
        ++seen;
        const std::uint32_t name_len = r.u32();
        const std::string got = r.str(name_len);
        if (got != name) throw ParseError("network container: expected entry '" + name + "', found '" + got + "'");
        Dims d;
        d.n = static_cast<int>(r.u32());
        d.c = static_cast<int>(r.u32());
        d.h = static_cast<int>(r.u32());
        d.w = static_cast<int>(r.u32());
        if (!(d == p.weight.dims)) throw ParseError("network container: dims mismatch for '" + name + "'");
        p.stride = static_cast<int>(r.u32());
        p.padding = static_cast<int>(r.u32());
        for (double& v : p.weight.data) v = r.f64();
        const std::uint32_t bias_n = r.u32();
        if (bias_n != p.bias.size()) throw ParseError("network container: bias size mismatch for '" + name + "'");
        for (double& v : p.bias) v = r.f64();
    });
    if (seen != count) throw ParseError("network container: entry count mismatch");
    return net;
}

}  // namespace salbench
