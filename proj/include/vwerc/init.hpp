#pragma once

#include <cmath>

#include "vwerc/rng.hpp"
#include "vwerc/tensor.hpp"

namespace vwerc {

inline Tensor xavier_uniform(int rows, int cols, Rng& rng) {
    Tensor t({rows, cols}, true);
    const float limit = std::sqrt(6.0f / static_cast<float>(rows + cols));
    for (float& v : t.values()) v = rng.uniform(-limit, limit);
    return t;
}

inline Tensor zeros_param(int n) { return Tensor({n}, true); }

inline Tensor ones_param(int n) { return Tensor::full({n}, 1.0f, true); }

} // namespace vwerc
