#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "vwerc/ops.hpp"
#include "vwerc/tensor.hpp"

namespace vwerc {

// f builds a scalar loss from x on the given tape; it must be deterministic
// in x (no dropout or other sampled state).
using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;

// Central finite differences against the reverse-mode gradient.
// Returns max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, 1e-8).
inline double grad_check(const ScalarFn& f, const Tensor& x0, float h = 1e-3f) {
    Tensor x = x0.clone(true);
    Tape tape;
    Tensor y = f(tape, x);
    if (y.size() != 1) throw ShapeError("grad_check: f must return a scalar");
    tape.backward(y);
    const std::vector<float> analytic = x.grad();

    double max_rel = 0.0;
    std::vector<float> vals = x0.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const float orig = vals[i];
        vals[i] = orig + h;
        Tape tp(false);
        const double fp = f(tp, Tensor(x0.shape(), vals)).item();
        vals[i] = orig - h;
        Tape tm(false);
        const double fm = f(tm, Tensor(x0.shape(), vals)).item();
        vals[i] = orig;
        const double numeric = (fp - fm) / (2.0 * static_cast<double>(h));
        const double a = analytic[i];
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }
    return max_rel;
}

} // namespace vwerc
