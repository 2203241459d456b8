#include "salbench/grad_check.hpp"

#include <cmath>

#include "salbench/errors.hpp"

namespace salbench {

double grad_check(const ScalarFn& f, const GradFn& analytic, std::vector<Tensor> inputs, double h) {
    if (!(h >= 1e-6 && h <= 1e-4)) {
        throw ContractError("grad_check: step size must lie in [1e-6, 1e-4]");
    }
    const std::vector<Tensor> grads = analytic(inputs);
    if (grads.size() != inputs.size()) {
        throw ContractError("grad_check: analytic gradient count mismatch");
    }

    double worst = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        if (!(grads[t].dims == inputs[t].dims)) {
            throw ContractError("grad_check: gradient dims mismatch on input " + std::to_string(t));
        }
        for (std::size_t i = 0; i < inputs[t].data.size(); ++i) {
            const double saved = inputs[t].data[i];
            inputs[t].data[i] = saved + h;
            const double f_plus = f(inputs);
            inputs[t].data[i] = saved - h;
            const double f_minus = f(inputs);
            inputs[t].data[i] = saved;

            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double an = grads[t].data[i];
            const double denom = std::max({1.0, std::fabs(an), std::fabs(fd)});
            const double err = std::fabs(an - fd) / denom;
            if (err > worst) worst = err;
        }
    }
    return worst;
}

}  // namespace salbench
