#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "salbench/errors.hpp"

namespace salbench {

struct Dims {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    bool operator==(const Dims&) const = default;

    std::int64_t count() const {
        return static_cast<std::int64_t>(n) * c * h * w;
    }

    std::string str() const;
};

// Dense 4-D array (batch, channel, height, width), row-major n->c->h->w,
// double precision. The carrier of all network math.
struct Tensor {
    Dims dims;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Dims d) : dims(d), data(static_cast<std::size_t>(d.count()), 0.0) {}
    Tensor(int n, int c, int h, int w) : Tensor(Dims{n, c, h, w}) {}

    static Tensor full(Dims d, double value) {
        Tensor t(d);
        for (double& v : t.data) v = value;
        return t;
    }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

    std::int64_t index(int in, int ic, int ih, int iw) const {
        return ((static_cast<std::int64_t>(in) * dims.c + ic) * dims.h + ih) * dims.w + iw;
    }

    double& at(int in, int ic, int ih, int iw) { return data[static_cast<std::size_t>(index(in, ic, ih, iw))]; }
    double at(int in, int ic, int ih, int iw) const { return data[static_cast<std::size_t>(index(in, ic, ih, iw))]; }

    // Pointer to the start of one (n, c) plane.
    double* plane(int in, int ic) { return data.data() + index(in, ic, 0, 0); }
    const double* plane(int in, int ic) const { return data.data() + index(in, ic, 0, 0); }

    bool all_finite() const;
    double abs_max() const;
};

void require_dims(const Tensor& t, const Dims& expect, const char* what);

}  // namespace salbench
