#include "salbench/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace salbench {

namespace {

int div_floor(int a, int b) {
    int q = a / b;
    int r = a % b;
    if (r != 0 && ((r < 0) != (b < 0))) --q;
    return q;
}

int div_ceil(int a, int b) { return -div_floor(-a, b); }

}  // namespace

ConvParams make_conv(int out_c, int in_c, int kh, int kw, int stride, bool same_pad) {
    if (out_c <= 0 || in_c <= 0 || kh <= 0 || kw <= 0 || stride <= 0) {
        throw ShapeError("make_conv: non-positive kernel geometry");
    }
    int pad = 0;
    if (same_pad) {
        if (kh % 2 == 0 || kw % 2 == 0) {
            throw ShapeError("make_conv: same padding requires odd kernel size");
        }
        pad = (kh - 1) / 2;
        if ((kw - 1) / 2 != pad) {
            throw ShapeError("make_conv: same padding requires square kernel");
        }
    }
    ConvParams p;
    p.weight = Tensor(out_c, in_c, kh, kw);
    p.bias.assign(static_cast<std::size_t>(out_c), 0.0);
    p.stride = stride;
    p.padding = pad;
    return p;
}

Dims conv2d_out_dims(const Dims& x, const ConvParams& p) {
    if (x.c != p.in_channels()) {
        throw ShapeError("conv2d: input has " + std::to_string(x.c) + " channels, kernel expects " +
                         std::to_string(p.in_channels()));
    }
    int oh = (x.h + 2 * p.padding - p.kernel_h()) / p.stride + 1;
    int ow = (x.w + 2 * p.padding - p.kernel_w()) / p.stride + 1;
    if (x.h + 2 * p.padding < p.kernel_h() || x.w + 2 * p.padding < p.kernel_w() || oh <= 0 || ow <= 0) {
        throw ShapeError("conv2d: non-positive output size for input " + x.str());
    }
    return Dims{x.n, p.out_channels(), oh, ow};
}

Tensor conv2d(const Tensor& x, const ConvParams& p) {
    const Dims od = conv2d_out_dims(x.dims, p);
    Tensor y(od);
    const int h = x.dims.h, w = x.dims.w;
    const int kh = p.kernel_h(), kw = p.kernel_w();
    const int s = p.stride, pad = p.padding;

    for (int in = 0; in < od.n; ++in) {
        for (int oc = 0; oc < od.c; ++oc) {
            double* yp = y.plane(in, oc);
            const double b = p.bias[static_cast<std::size_t>(oc)];
            for (int i = 0; i < od.h * od.w; ++i) yp[i] = b;
            for (int ic = 0; ic < x.dims.c; ++ic) {
                const double* xp = x.plane(in, ic);
                const double* wp = p.weight.plane(oc, ic);
                for (int ky = 0; ky < kh; ++ky) {
                    const int oh_lo = std::max(0, div_ceil(pad - ky, s));
                    const int oh_hi = std::min(od.h - 1, div_floor(h - 1 + pad - ky, s));
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv = wp[ky * kw + kx];
                        const int ow_lo = std::max(0, div_ceil(pad - kx, s));
                        const int ow_hi = std::min(od.w - 1, div_floor(w - 1 + pad - kx, s));
                        for (int oy = oh_lo; oy <= oh_hi; ++oy) {
                            const int iy = oy * s + ky - pad;
                            const double* xrow = xp + static_cast<std::int64_t>(iy) * w + (kx - pad);
                            double* yrow = yp + static_cast<std::int64_t>(oy) * od.w;
                            if (s == 1) {
                                for (int ox = ow_lo; ox <= ow_hi; ++ox) yrow[ox] += wv * xrow[ox];
                            } else {
                                for (int ox = ow_lo; ox <= ow_hi; ++ox) yrow[ox] += wv * xrow[static_cast<std::int64_t>(ox) * s];
                            }
                        }
                    }
                }
            }
        }
    }
    return y;
}

ConvGrads conv2d_grad(const Tensor& x, const ConvParams& p, const Tensor& dy) {
    const Dims od = conv2d_out_dims(x.dims, p);
    require_dims(dy, od, "conv2d_grad: dy");

    ConvGrads g;
    g.dx = Tensor(x.dims);
    g.dweight = Tensor(p.weight.dims);
    g.dbias.assign(p.bias.size(), 0.0);

    const int h = x.dims.h, w = x.dims.w;
    const int kh = p.kernel_h(), kw = p.kernel_w();
    const int s = p.stride, pad = p.padding;

    for (int in = 0; in < od.n; ++in) {
        for (int oc = 0; oc < od.c; ++oc) {
            const double* dyp = dy.plane(in, oc);
            double acc = g.dbias[static_cast<std::size_t>(oc)];
            for (int i = 0; i < od.h * od.w; ++i) acc += dyp[i];
            g.dbias[static_cast<std::size_t>(oc)] = acc;
            for (int ic = 0; ic < x.dims.c; ++ic) {
                const double* xp = x.plane(in, ic);
                double* dxp = g.dx.plane(in, ic);
                const double* wp = p.weight.plane(oc, ic);
                double* dwp = g.dweight.plane(oc, ic);
                for (int ky = 0; ky < kh; ++ky) {
                    const int oh_lo = std::max(0, div_ceil(pad - ky, s));
                    const int oh_hi = std::min(od.h - 1, div_floor(h - 1 + pad - ky, s));
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv = wp[ky * kw + kx];
                        double dw = 0.0;
                        const int ow_lo = std::max(0, div_ceil(pad - kx, s));
                        const int ow_hi = std::min(od.w - 1, div_floor(w - 1 + pad - kx, s));
                        for (int oy = oh_lo; oy <= oh_hi; ++oy) {
                            const int iy = oy * s + ky - pad;
                            const double* xrow = xp + static_cast<std::int64_t>(iy) * w;
                            double* dxrow = dxp + static_cast<std::int64_t>(iy) * w;
                            const double* dyrow = dyp + static_cast<std::int64_t>(oy) * od.w;
                            for (int ox = ow_lo; ox <= ow_hi; ++ox) {
                                const int ix = ox * s + kx - pad;
                                const double d = dyrow[ox];
                                dw += xrow[ix] * d;
                                dxrow[ix] += wv * d;
                            }
                        }
                        dwp[ky * kw + kx] += dw;
                    }
                }
            }
        }
    }
    return g;
}

Tensor conv2d_grad_data(const Tensor& x, const ConvParams& p, const Tensor& dy) {
    const Dims od = conv2d_out_dims(x.dims, p);
    require_dims(dy, od, "conv2d_grad_data: dy");

    Tensor dx(x.dims);
    const int h = x.dims.h, w = x.dims.w;
    const int kh = p.kernel_h(), kw = p.kernel_w();
    const int s = p.stride, pad = p.padding;

    for (int in = 0; in < od.n; ++in) {
        for (int oc = 0; oc < od.c; ++oc) {
            const double* dyp = dy.plane(in, oc);
            for (int ic = 0; ic < x.dims.c; ++ic) {
                double* dxp = dx.plane(in, ic);
                const double* wp = p.weight.plane(oc, ic);
                for (int ky = 0; ky < kh; ++ky) {
                    const int oh_lo = std::max(0, div_ceil(pad - ky, s));
                    const int oh_hi = std::min(od.h - 1, div_floor(h - 1 + pad - ky, s));
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv = wp[ky * kw + kx];
                        const int ow_lo = std::max(0, div_ceil(pad - kx, s));
                        const int ow_hi = std::min(od.w - 1, div_floor(w - 1 + pad - kx, s));
                        for (int oy = oh_lo; oy <= oh_hi; ++oy) {
                            const int iy = oy * s + ky - pad;
                            double* dxrow = dxp + static_cast<std::int64_t>(iy) * w;
                            const double* dyrow = dyp + static_cast<std::int64_t>(oy) * od.w;
                            for (int ox = ow_lo; ox <= ow_hi; ++ox) {
                                dxrow[ox * s + kx - pad] += wv * dyrow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    return dx;
}

MaxPoolResult maxpool2(const Tensor& x) {
    if (x.dims.h % 2 != 0 || x.dims.w % 2 != 0) {
        throw ShapeError("maxpool2: spatial dims must be even, got " + x.dims.str());
    }
    MaxPoolResult r;
    r.y = Tensor(x.dims.n, x.dims.c, x.dims.h / 2, x.dims.w / 2);
    r.argmax.resize(static_cast<std::size_t>(r.y.size()));
    std::int64_t out = 0;
    for (int in = 0; in < x.dims.n; ++in) {
        for (int ic = 0; ic < x.dims.c; ++ic) {
            for (int oy = 0; oy < r.y.dims.h; ++oy) {
                for (int ox = 0; ox < r.y.dims.w; ++ox) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::int64_t best_idx = -1;
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            std::int64_t idx = x.index(in, ic, 2 * oy + dy, 2 * ox + dx);
                            double v = x.data[static_cast<std::size_t>(idx)];
                            if (v > best) {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    r.y.data[static_cast<std::size_t>(out)] = best;
                    r.argmax[static_cast<std::size_t>(out)] = best_idx;
                    ++out;
                }
            }
        }
    }
    return r;
}

Tensor maxpool2_backward(const Dims& x_dims, const std::vector<std::int64_t>& argmax, const Tensor& dy) {
    Tensor dx(x_dims);
    if (static_cast<std::int64_t>(argmax.size()) != dy.size()) {
        throw ShapeError("maxpool2_backward: argmax/dy size mismatch");
    }
    for (std::size_t i = 0; i < argmax.size(); ++i) {
        dx.data[static_cast<std::size_t>(argmax[i])] += dy.data[i];
    }
    return dx;
}

MaxPoolResult global_maxpool(const Tensor& x) {
    MaxPoolResult r;
    r.y = Tensor(x.dims.n, x.dims.c, 1, 1);
    r.argmax.resize(static_cast<std::size_t>(r.y.size()));
    const int plane = x.dims.h * x.dims.w;
    std::int64_t out = 0;
    for (int in = 0; in < x.dims.n; ++in) {
        for (int ic = 0; ic < x.dims.c; ++ic) {
            const double* xp = x.plane(in, ic);
            double best = xp[0];
            int best_i = 0;
            for (int i = 1; i < plane; ++i) {
                if (xp[i] > best) {
                    best = xp[i];
                    best_i = i;
                }
            }
            r.y.data[static_cast<std::size_t>(out)] = best;
            r.argmax[static_cast<std::size_t>(out)] = x.index(in, ic, 0, 0) + best_i;
            ++out;
        }
    }
    return r;
}

Tensor global_maxpool_backward(const Dims& x_dims, const std::vector<std::int64_t>& argmax, const Tensor& dy) {
    Tensor dx(x_dims);
    for (std::size_t i = 0; i < argmax.size(); ++i) {
        dx.data[static_cast<std::size_t>(argmax[i])] += dy.data[i];
    }
    return dx;
}

Tensor avgpool(const Tensor& x, int rate) {
    if (rate <= 0) throw ShapeError("avgpool: rate must be positive");
    if (x.dims.h % rate != 0 || x.dims.w % rate != 0) {
        throw ShapeError("avgpool: dims " + x.dims.str() + " not divisible by rate " + std::to_string(rate));
    }
    Tensor y(x.dims.n, x.dims.c, x.dims.h / rate, x.dims.w / rate);
    const double inv = 1.0 / (static_cast<double>(rate) * rate);
    std::int64_t out = 0;
    for (int in = 0; in < x.dims.n; ++in) {
        for (int ic = 0; ic < x.dims.c; ++ic) {
            const double* xp = x.plane(in, ic);
            for (int oy = 0; oy < y.dims.h; ++oy) {
                for (int ox = 0; ox < y.dims.w; ++ox) {
                    double sum = 0.0;
                    for (int dy = 0; dy < rate; ++dy) {
                        const double* row = xp + static_cast<std::int64_t>(oy * rate + dy) * x.dims.w + ox * rate;
                        for (int dx = 0; dx < rate; ++dx) sum += row[dx];
                    }
                    y.data[static_cast<std::size_t>(out++)] = sum * inv;
                }
            }
        }
    }
    return y;
}

Tensor avgpool_backward(const Dims& x_dims, int rate, const Tensor& dy) {
    Tensor dx(x_dims);
    const double inv = 1.0 / (static_cast<double>(rate) * rate);
    std::int64_t in_idx = 0;
    for (int in = 0; in < dy.dims.n; ++in) {
        for (int ic = 0; ic < dy.dims.c; ++ic) {
            double* dxp = dx.plane(in, ic);
            for (int oy = 0; oy < dy.dims.h; ++oy) {
                for (int ox = 0; ox < dy.dims.w; ++ox) {
                    const double d = dy.data[static_cast<std::size_t>(in_idx++)] * inv;
                    for (int yy = 0; yy < rate; ++yy) {
                        double* row = dxp + static_cast<std::int64_t>(oy * rate + yy) * x_dims.w + ox * rate;
                        for (int xx = 0; xx < rate; ++xx) row[xx] += d;
                    }
                }
            }
        }
    }
    return dx;
}

Tensor adaptive_avgpool(const Tensor& x, int oh, int ow) {
    if (oh < 1 || ow < 1 || oh > x.dims.h || ow > x.dims.w) {
        throw ShapeError("adaptive_avgpool: output " + std::to_string(oh) + "x" + std::to_string(ow) +
                         " invalid for input " + x.dims.str());
    }
    Tensor y(x.dims.n, x.dims.c, oh, ow);
    std::int64_t out = 0;
    for (int in = 0; in < x.dims.n; ++in) {
        for (int ic = 0; ic < x.dims.c; ++ic) {
            const double* xp = x.plane(in, ic);
            for (int oy = 0; oy < oh; ++oy) {
                const int y0 = (oy * x.dims.h) / oh;
                const int y1 = ((oy + 1) * x.dims.h + oh - 1) / oh;
                for (int ox = 0; ox < ow; ++ox) {
                    const int x0 = (ox * x.dims.w) / ow;
                    const int x1 = ((ox + 1) * x.dims.w + ow - 1) / ow;
                    double sum = 0.0;
                    for (int iy = y0; iy < y1; ++iy) {
                        const double* row = xp + static_cast<std::int64_t>(iy) * x.dims.w;
                        for (int ix = x0; ix < x1; ++ix) sum += row[ix];
                    }
                    y.data[static_cast<std::size_t>(out++)] = sum / (static_cast<double>(y1 - y0) * (x1 - x0));
                }
            }
        }
    }
    return y;
}

Tensor adaptive_avgpool_backward(const Dims& x_dims, int oh, int ow, const Tensor& dy) {
    Tensor dx(x_dims);
    std::int64_t in_idx = 0;
    for (int in = 0; in < dy.dims.n; ++in) {
        for (int ic = 0; ic < dy.dims.c; ++ic) {
            double* dxp = dx.plane(in, ic);
            for (int oy = 0; oy < oh; ++oy) {
                const int y0 = (oy * x_dims.h) / oh;
                const int y1 = ((oy + 1) * x_dims.h + oh - 1) / oh;
                for (int ox = 0; ox < ow; ++ox) {
                    const int x0 = (ox * x_dims.w) / ow;
                    const int x1 = ((ox + 1) * x_dims.w + ow - 1) / ow;
                    const double d = dy.data[static_cast<std::size_t>(in_idx++)] /
                                     (static_cast<double>(y1 - y0) * (x1 - x0));
                    for (int iy = y0; iy < y1; ++iy) {
                        double* row = dxp + static_cast<std::int64_t>(iy) * x_dims.w;
                        for (int ix = x0; ix < x1; ++ix) row[ix] += d;
                    }
                }
            }
        }
    }
    return dx;
}

namespace {

struct LerpWeights {
    int lo;
    int hi;
    double frac;
};

LerpWeights lerp_coords(int dst, int in_size, int out_size) {
    double src = (dst + 0.5) * (static_cast<double>(in_size) / out_size) - 0.5;
    if (src < 0.0) src = 0.0;
    const double max_src = static_cast<double>(in_size - 1);
    if (src > max_src) src = max_src;
    int lo = static_cast<int>(src);
    if (lo > in_size - 1) lo = in_size - 1;
    LerpWeights lw;
    lw.lo = lo;
    lw.hi = std::min(lo + 1, in_size - 1);
    lw.frac = src - lo;
    return lw;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, int oh, int ow) {
    if (oh < x.dims.h || ow < x.dims.w) {
        throw ShapeError("upsample_bilinear: downscaling " + x.dims.str() + " -> " + std::to_string(oh) + "x" +
                         std::to_string(ow));
    }
    Tensor y(x.dims.n, x.dims.c, oh, ow);
    std::vector<LerpWeights> col(static_cast<std::size_t>(ow));
    for (int ox = 0; ox < ow; ++ox) col[static_cast<std::size_t>(ox)] = lerp_coords(ox, x.dims.w, ow);

    std::int64_t out = 0;
    for (int in = 0; in < x.dims.n; ++in) {
        for (int ic = 0; ic < x.dims.c; ++ic) {
            const double* xp = x.plane(in, ic);
            for (int oy = 0; oy < oh; ++oy) {
                const LerpWeights ry = lerp_coords(oy, x.dims.h, oh);
                const double* row0 = xp + static_cast<std::int64_t>(ry.lo) * x.dims.w;
                const double* row1 = xp + static_cast<std::int64_t>(ry.hi) * x.dims.w;
                for (int ox = 0; ox < ow; ++ox) {
                    const LerpWeights& rx = col[static_cast<std::size_t>(ox)];
                    // Nested lerp keeps constants exactly constant.
                    const double top = row0[rx.lo] + rx.frac * (row0[rx.hi] - row0[rx.lo]);
                    const double bot = row1[rx.lo] + rx.frac * (row1[rx.hi] - row1[rx.lo]);
                    y.data[static_cast<std::size_t>(out++)] = top + ry.frac * (bot - top);
                }
            }
        }
    }
    return y;
}

Tensor upsample_bilinear_backward(const Dims& x_dims, const Tensor& dy) {
    Tensor dx(x_dims);
    const int oh = dy.dims.h, ow = dy.dims.w;
    std::vector<LerpWeights> col(static_cast<std::size_t>(ow));
    for (int ox = 0; ox < ow; ++ox) col[static_cast<std::size_t>(ox)] = lerp_coords(ox, x_dims.w, ow);

    std::int64_t in_idx = 0;
    for (int in = 0; in < dy.dims.n; ++in) {
        for (int ic = 0; ic < dy.dims.c; ++ic) {
            double* dxp = dx.plane(in, ic);
            for (int oy = 0; oy < oh; ++oy) {
                const LerpWeights ry = lerp_coords(oy, x_dims.h, oh);
                double* row0 = dxp + static_cast<std::int64_t>(ry.lo) * x_dims.w;
                double* row1 = dxp + static_cast<std::int64_t>(ry.hi) * x_dims.w;
                for (int ox = 0; ox < ow; ++ox) {
                    const LerpWeights& rx = col[static_cast<std::size_t>(ox)];
                    const double d = dy.data[static_cast<std::size_t>(in_idx++)];
                    row0[rx.lo] += (1.0 - ry.frac) * (1.0 - rx.frac) * d;
                    row0[rx.hi] += (1.0 - ry.frac) * rx.frac * d;
                    row1[rx.lo] += ry.frac * (1.0 - rx.frac) * d;
                    row1[rx.hi] += ry.frac * rx.frac * d;
                }
            }
        }
    }
    return dx;
}

Tensor activation(const Tensor& x, Act kind) {
    Tensor y(x.dims);
    const std::size_t n = x.data.size();
    switch (kind) {
        case Act::Sigmoid:
            for (std::size_t i = 0; i < n; ++i) {
                const double v = x.data[i];
                if (v >= 0.0) {
                    y.data[i] = 1.0 / (1.0 + std::exp(-v));
                } else {
                    const double e = std::exp(v);
                    y.data[i] = e / (1.0 + e);
                }
            }
            break;
        case Act::Tanh:
            for (std::size_t i = 0; i < n; ++i) y.data[i] = std::tanh(x.data[i]);
            break;
        case Act::Relu:
            for (std::size_t i = 0; i < n; ++i) y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
            break;
        case Act::Abs:
            for (std::size_t i = 0; i < n; ++i) y.data[i] = std::fabs(x.data[i]);
            break;
    }
    return y;
}

Tensor activation_backward(const Tensor& x, const Tensor& y, Act kind, const Tensor& dy) {
    Tensor dx(dy.dims);
    const std::size_t n = dy.data.size();
    switch (kind) {
        case Act::Sigmoid:
            for (std::size_t i = 0; i < n; ++i) dx.data[i] = dy.data[i] * y.data[i] * (1.0 - y.data[i]);
            break;
        case Act::Tanh:
            for (std::size_t i = 0; i < n; ++i) dx.data[i] = dy.data[i] * (1.0 - y.data[i] * y.data[i]);
            break;
        case Act::Relu:
            for (std::size_t i = 0; i < n; ++i) dx.data[i] = x.data[i] > 0.0 ? dy.data[i] : 0.0;
            break;
        case Act::Abs:
            // Subgradient 0 at the kink.
            for (std::size_t i = 0; i < n; ++i) {
                const double v = x.data[i];
                dx.data[i] = v > 0.0 ? dy.data[i] : (v < 0.0 ? -dy.data[i] : 0.0);
            }
            break;
    }
    return dx;
}

namespace {

enum class Broadcast { None, ChannelVec, SpatialMap };

Broadcast broadcast_mode(const Dims& a, const Dims& b) {
    if (a == b) return Broadcast::None;
    if (b.n == a.n && b.c == a.c && b.h == 1 && b.w == 1) return Broadcast::ChannelVec;
    if (b.n == a.n && b.c == 1 && b.h == a.h && b.w == a.w) return Broadcast::SpatialMap;
    throw ShapeError("eltwise: incompatible dims " + a.str() + " vs " + b.str());
}

}  // namespace

Tensor eltwise(const Tensor& a, const Tensor& b, EltOp op) {
    const Broadcast mode = broadcast_mode(a.dims, b.dims);
    Tensor y(a.dims);
    const int plane = a.dims.h * a.dims.w;
    for (int in = 0; in < a.dims.n; ++in) {
        for (int ic = 0; ic < a.dims.c; ++ic) {
            const double* ap = a.plane(in, ic);
            double* yp = y.plane(in, ic);
            if (mode == Broadcast::ChannelVec) {
                const double bv = b.at(in, ic, 0, 0);
                if (op == EltOp::Add) {
                    for (int i = 0; i < plane; ++i) yp[i] = ap[i] + bv;
                } else {
                    for (int i = 0; i < plane; ++i) yp[i] = ap[i] * bv;
                }
            } else {
                const double* bp = (mode == Broadcast::None) ? b.plane(in, ic) : b.plane(in, 0);
                if (op == EltOp::Add) {
                    for (int i = 0; i < plane; ++i) yp[i] = ap[i] + bp[i];
                } else {
                    for (int i = 0; i < plane; ++i) yp[i] = ap[i] * bp[i];
                }
            }
        }
    }
    return y;
}

EltwiseGrads eltwise_backward(const Tensor& a, const Tensor& b, EltOp op, const Tensor& dy) {
    const Broadcast mode = broadcast_mode(a.dims, b.dims);
    require_dims(dy, a.dims, "eltwise_backward: dy");
    EltwiseGrads g;
    g.da = Tensor(a.dims);
    g.db = Tensor(b.dims);
    const int plane = a.dims.h * a.dims.w;
    for (int in = 0; in < a.dims.n; ++in) {
        for (int ic = 0; ic < a.dims.c; ++ic) {
            const double* ap = a.plane(in, ic);
            const double* dp = dy.plane(in, ic);
            double* dap = g.da.plane(in, ic);
            if (mode == Broadcast::ChannelVec) {
                const double bv = b.at(in, ic, 0, 0);
                double acc = 0.0;
                if (op == EltOp::Add) {
                    for (int i = 0; i < plane; ++i) {
                        dap[i] = dp[i];
                        acc += dp[i];
                    }
                } else {
                    for (int i = 0; i < plane; ++i) {
                        dap[i] = dp[i] * bv;
                        acc += dp[i] * ap[i];
                    }
                }
                g.db.at(in, ic, 0, 0) += acc;
            } else if (mode == Broadcast::SpatialMap) {
                const double* bp = b.plane(in, 0);
                double* dbp = g.db.plane(in, 0);
                if (op == EltOp::Add) {
                    for (int i = 0; i < plane; ++i) {
                        dap[i] = dp[i];
                        dbp[i] += dp[i];
                    }
                } else {
                    for (int i = 0; i < plane; ++i) {
                        dap[i] = dp[i] * bp[i];
                        dbp[i] += dp[i] * ap[i];
                    }
                }
            } else {
                const double* bp = b.plane(in, ic);
                double* dbp = g.db.plane(in, ic);
                if (op == EltOp::Add) {
                    for (int i = 0; i < plane; ++i) {
                        dap[i] = dp[i];
                        dbp[i] = dp[i];
                    }
                } else {
                    for (int i = 0; i < plane; ++i) {
                        dap[i] = dp[i] * bp[i];
                        dbp[i] = dp[i] * ap[i];
                    }
                }
            }
        }
    }
    return g;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: empty part list");
    const Dims& d0 = parts.front().dims;
    int total_c = 0;
    for (const Tensor& p : parts) {
        if (p.dims.n != d0.n || p.dims.h != d0.h || p.dims.w != d0.w) {
            throw ShapeError("concat_channels: spatial/batch mismatch " + d0.str() + " vs " + p.dims.str());
        }
        total_c += p.dims.c;
    }
    Tensor y(d0.n, total_c, d0.h, d0.w);
    const std::int64_t plane = static_cast<std::int64_t>(d0.h) * d0.w;
    for (int in = 0; in < d0.n; ++in) {
        int oc = 0;
        for (const Tensor& p : parts) {
            for (int ic = 0; ic < p.dims.c; ++ic, ++oc) {
                std::copy_n(p.plane(in, ic), plane, y.plane(in, oc));
            }
        }
    }
    return y;
}

std::vector<Tensor> concat_channels_backward(const std::vector<Dims>& part_dims, const Tensor& dy) {
    std::vector<Tensor> grads;
    grads.reserve(part_dims.size());
    for (const Dims& d : part_dims) grads.emplace_back(d);
    const std::int64_t plane = static_cast<std::int64_t>(dy.dims.h) * dy.dims.w;
    for (int in = 0; in < dy.dims.n; ++in) {
        int oc = 0;
        for (std::size_t pi = 0; pi < part_dims.size(); ++pi) {
            for (int ic = 0; ic < part_dims[pi].c; ++ic, ++oc) {
                std::copy_n(dy.plane(in, oc), plane, grads[pi].plane(in, ic));
            }
        }
    }
    return grads;
}

Tensor slice_channels(const Tensor& x, int c0, int count) {
    if (c0 < 0 || count <= 0 || c0 + count > x.dims.c) {
        throw ShapeError("slice_channels: range out of bounds");
    }
    Tensor y(x.dims.n, count, x.dims.h, x.dims.w);
    const std::int64_t plane = static_cast<std::int64_t>(x.dims.h) * x.dims.w;
    for (int in = 0; in < x.dims.n; ++in) {
        for (int ic = 0; ic < count; ++ic) {
            std::copy_n(x.plane(in, c0 + ic), plane, y.plane(in, ic));
        }
    }
    return y;
}

Tensor channel_mean(const Tensor& x) {
    Tensor y(x.dims.n, 1, x.dims.h, x.dims.w);
    const int plane = x.dims.h * x.dims.w;
    const double inv = 1.0 / x.dims.c;
    for (int in = 0; in < x.dims.n; ++in) {
        double* yp = y.plane(in, 0);
        for (int ic = 0; ic < x.dims.c; ++ic) {
            const double* xp = x.plane(in, ic);
            if (ic == 0) {
                for (int i = 0; i < plane; ++i) yp[i] = xp[i];
            } else {
                for (int i = 0; i < plane; ++i) yp[i] += xp[i];
            }
        }
        for (int i = 0; i < plane; ++i) yp[i] *= inv;
    }
    return y;
}

Tensor channel_mean_backward(const Dims& x_dims, const Tensor& dy) {
    Tensor dx(x_dims);
    const int plane = x_dims.h * x_dims.w;
    const double inv = 1.0 / x_dims.c;
    for (int in = 0; in < x_dims.n; ++in) {
        const double* dp = dy.plane(in, 0);
        for (int ic = 0; ic < x_dims.c; ++ic) {
            double* dxp = dx.plane(in, ic);
            for (int i = 0; i < plane; ++i) dxp[i] = dp[i] * inv;
        }
    }
    return dx;
}

ChannelMaxResult channel_max(const Tensor& x) {
    ChannelMaxResult r;
    r.y = Tensor(x.dims.n, 1, x.dims.h, x.dims.w);
    r.argmax.assign(static_cast<std::size_t>(r.y.size()), 0);
    const int plane = x.dims.h * x.dims.w;
    for (int in = 0; in < x.dims.n; ++in) {
        double* yp = r.y.plane(in, 0);
        int* am = r.argmax.data() + static_cast<std::int64_t>(in) * plane;
        const double* x0 = x.plane(in, 0);
        for (int i = 0; i < plane; ++i) yp[i] = x0[i];
        for (int ic = 1; ic < x.dims.c; ++ic) {
            const double* xp = x.plane(in, ic);
            for (int i = 0; i < plane; ++i) {
                if (xp[i] > yp[i]) {
                    yp[i] = xp[i];
                    am[i] = ic;
                }
            }
        }
    }
    return r;
}

Tensor channel_max_backward(const Dims& x_dims, const std::vector<int>& argmax, const Tensor& dy) {
    Tensor dx(x_dims);
    const int plane = x_dims.h * x_dims.w;
    for (int in = 0; in < x_dims.n; ++in) {
        const double* dp = dy.plane(in, 0);
        const int* am = argmax.data() + static_cast<std::int64_t>(in) * plane;
        for (int i = 0; i < plane; ++i) {
            dx.plane(in, am[i])[i] += dp[i];
        }
    }
    return dx;
}

}  // namespace salbench
