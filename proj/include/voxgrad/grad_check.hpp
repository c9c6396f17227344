#pragma once

#include <cmath>
#include <functional>

#include "voxgrad/ops.hpp"
#include "voxgrad/tape.hpp"
#include "voxgrad/tensor.hpp"

namespace voxgrad {

// A differentiable scalar computation: builds its graph on the given tape
// starting from the input var.
using ScalarFn = std::function<VarId(Tape&, VarId)>;

inline double eval_scalar(const ScalarFn& f, const Tensor& x) {
    Tape tape;
    const VarId out = f(tape, tape.constant(x));
    return tape.value(out).data[0];
}

// Max over components of |analytic - central difference| normalized by
// (|analytic| + |numeric| + 1e-12).
inline double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5) {
    if (h <= 0.0) throw ConfigError("grad_check: step must be positive");
    Tensor probe = x;
    {
        Tape tape;
        const VarId out = f(tape, tape.leaf(probe));
        tape.backward(out);
    }
    Tensor shifted = x;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        shifted.data[i] = x.data[i] + h;
        const double fp = eval_scalar(f, shifted);
        shifted.data[i] = x.data[i] - h;
        const double fm = eval_scalar(f, shifted);
        shifted.data[i] = x.data[i];
        const double numeric = (fp - fm) / (2.0 * h);
        const double analytic = probe.grad[i];
        const double rel = std::abs(analytic - numeric) /
                           (std::abs(analytic) + std::abs(numeric) + 1e-12);
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

inline bool grad_check_within(const ScalarFn& f, const Tensor& x, double h, double tol) {
    return grad_check(f, x, h) < tol;
}

}  // namespace voxgrad
