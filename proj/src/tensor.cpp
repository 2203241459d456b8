#include "salbench/tensor.hpp"

#include <cmath>
#include <sstream>

namespace salbench {

std::string Dims::str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::abs_max() const {
    double m = 0.0;
    for (double v : data) {
        double a = std::fabs(v);
        if (a > m) m = a;
    }
    return m;
}

void require_dims(const Tensor& t, const Dims& expect, const char* what) {
    if (!(t.dims == expect)) {
        throw ShapeError(std::string(what) + ": expected dims " + expect.str() + ", got " + t.dims.str());
    }
}

}  // namespace salbench
