#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "vwerc/init.hpp"
#include "vwerc/ops.hpp"
#include "vwerc/rng.hpp"
#include "vwerc/tensor.hpp"

namespace vwerc {

enum class GateMode { TopkSoft, AllSoft, TopkHard, AllHard };

inline std::string to_string(GateMode m) {
    switch (m) {
        case GateMode::TopkSoft: return "topk_soft";
        case GateMode::AllSoft: return "all_soft";
        case GateMode::TopkHard: return "topk_hard";
        case GateMode::AllHard: return "all_hard";
    }
    throw ConfigError("unknown gate mode");
}

inline GateMode gate_mode_from_string(const std::string& s) {
    if (s == "topk_soft") return GateMode::TopkSoft;
    if (s == "all_soft") return GateMode::AllSoft;
    if (s == "topk_hard") return GateMode::TopkHard;
    if (s == "all_hard") return GateMode::AllHard;
    throw ConfigError("unknown gate mode \"" + s + "\"");
}

// The two-layer window scorer: Phi5 projects the fused speaker vector,
// Phi6 maps the hidden layer to one score per context window.
struct GateParams {
    Tensor w5, b5; // [2d x d_h], [d_h]
    Tensor w6, b6; // [d_h x (M+1)], [M+1]
};

inline GateParams init_gate(int two_d, int d_h, int num_windows, Rng& rng) {
    GateParams p;
    p.w5 = xavier_uniform(two_d, d_h, rng);
    p.b5 = zeros_param(d_h);
    p.w6 = xavier_uniform(d_h, num_windows, rng);
    p.b6 = zeros_param(num_windows);
    return p;
}

// s = Phi6 . relu(Phi5 . z), length M+1.
inline Tensor score_windows(Tape& tape, const Tensor& z, const GateParams& p) {
    Tensor zrow = stack_rows(tape, {z});
    Tensor hidden = relu(tape, add_rows(tape, matmul(tape, zrow, p.w5), p.b5));
    return take_row(tape, add_rows(tape, matmul(tape, hidden, p.w6), p.b6), 0);
}

// Selection mask m: 0 on the min(K, |feasible|) feasible windows with the
// largest scores, -inf elsewhere. Infeasible windows are masked before the
// top-K choice; ties break toward the smaller window index.
inline std::vector<float> topk_mask(const Tensor& s, int K, const std::vector<int>& feasible) {
    if (K < 1) throw ConfigError("topk_mask: K must be >= 1");
    if (feasible.empty()) throw ConfigError("topk_mask: empty feasible set");
    const int n = s.dim(0);
    for (int i : feasible) {
        if (i < 0 || i >= n) {
            throw ConfigError("topk_mask: feasible index " + std::to_string(i) +
                              " out of range for " + shape_str(s.shape()));
        }
    }
    std::vector<int> order = feasible;
    std::sort(order.begin(), order.end(), [&s](int a, int b) {
        if (s.at(a) != s.at(b)) return s.at(a) > s.at(b);
        return a < b;
    });
    const int keep = std::min<int>(K, static_cast<int>(order.size()));
    std::vector<float> m(static_cast<std::size_t>(n), kNegInf);
    for (int i = 0; i < keep; ++i) m[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 0.0f;
    return m;
}

struct WindowDistribution {
    Tensor q;                // probability over windows 0..M
    std::vector<int> active; // ascending window indices with q > 0
};

namespace detail {

inline std::vector<float> feasibility_mask(int n, const std::vector<int>& feasible) {
    std::vector<float> m(static_cast<std::size_t>(n), kNegInf);
    for (int i : feasible) m[static_cast<std::size_t>(i)] = 0.0f;
    return m;
}

inline std::vector<int> mask_support(const std::vector<float>& m) {
    std::vector<int> out;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i] == 0.0f) out.push_back(static_cast<int>(i));
    return out;
}

} // namespace detail

// The four normalizers over window scores. Soft modes keep the gradient path
// through softmax(s + m); hard modes emit constant weights that carry no
// gradient.
inline WindowDistribution normalize(Tape& tape, const Tensor& s, const std::vector<float>& m,
                                    GateMode mode, int K, const std::vector<int>& feasible) {
    const int n = s.dim(0);
    WindowDistribution out;
    switch (mode) {
        case GateMode::TopkSoft: {
            out.q = softmax(tape, add_const(tape, s, m));
            out.active = detail::mask_support(m);
            break;
        }
        case GateMode::AllSoft: {
            const std::vector<float> fm = detail::feasibility_mask(n, feasible);
            out.q = softmax(tape, add_const(tape, s, fm));
            out.active = detail::mask_support(fm);
            break;
        }
        case GateMode::TopkHard: {
            out.active = detail::mask_support(m);
            out.q = Tensor({n});
            const float w = 1.0f / static_cast<float>(out.active.size());
            for (int i : out.active) out.q.at(i) = w;
            break;
        }
        case GateMode::AllHard: {
            const std::vector<float> fm = detail::feasibility_mask(n, feasible);
            out.active = detail::mask_support(fm);
            out.q = Tensor({n});
            const float w = 1.0f / static_cast<float>(out.active.size());
            for (int i : out.active) out.q.at(i) = w;
            break;
        }
    }
    return out;
}

} // namespace vwerc
