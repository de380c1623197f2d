#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "vwerc/rng.hpp"
#include "vwerc/tensor.hpp"

// Primitive tensor operations. Every op computes its forward result eagerly
// and, when the tape is recording and an input requires gradients, records a
// single adjoint closure. Storage is float32; reductions (dot products, sums,
// means, variances) accumulate in float64.

namespace vwerc {

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

namespace detail {

// c (+)= a[m x k] * b[k x n]
inline void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool add) {
    std::vector<double> row(static_cast<std::size_t>(n));
    for (int i = 0; i < m; ++i) {
        std::fill(row.begin(), row.end(), 0.0);
        const float* ai = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const float* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] += av * bp[j];
        }
        float* ci = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const float v = static_cast<float>(row[static_cast<std::size_t>(j)]);
            if (add) ci[j] += v; else ci[j] = v;
        }
    }
}

// c (+)= a[m x k] * b[n x k]^T
inline void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool add) {
    for (int i = 0; i < m; ++i) {
        const float* ai = a + static_cast<std::size_t>(i) * k;
        float* ci = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const float* bj = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += static_cast<double>(ai[p]) * bj[p];
            if (add) ci[j] += static_cast<float>(acc); else ci[j] = static_cast<float>(acc);
        }
    }
}

// c (+)= a[k x m]^T * b[k x n]
inline void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool add) {
    std::vector<double> acc(static_cast<std::size_t>(m) * n, 0.0);
    for (int p = 0; p < k; ++p) {
        const float* ap = a + static_cast<std::size_t>(p) * m;
        const float* bp = b + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double av = ap[i];
            double* ci = acc.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) {
        if (add) c[i] += static_cast<float>(acc[i]); else c[i] = static_cast<float>(acc[i]);
    }
}

inline void require_rank(const Tensor& t, int rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
    }
}

inline bool want_grad(const Tape& tape, std::initializer_list<Tensor> inputs) {
    if (!tape.recording()) return false;
    for (const Tensor& t : inputs) {
        if (t.requires_grad()) return true;
    }
    return false;
}

} // namespace detail

// [m x k] * [k x n] -> [m x n]
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n}, detail::want_grad(tape, {a, b}));
    detail::gemm_nn(a.values().data(), b.values().data(), out.values().data(), m, k, n, false);
    if (out.requires_grad()) {
        tape.record([a = a, b = b, out, m, k, n]() mutable {
            const float* g = out.grad().data();
            if (a.requires_grad()) detail::gemm_nt(g, b.values().data(), a.grad().data(), m, n, k, true);
            if (b.requires_grad()) detail::gemm_tn(a.values().data(), g, b.grad().data(), k, m, n, true);
        });
    }
    return out;
}

// [m x k] * [n x k]^T -> [m x n]
inline Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::require_rank(a, 2, "matmul_nt");
    detail::require_rank(b, 2, "matmul_nt");
    if (a.dim(1) != b.dim(1)) {
        throw ShapeError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor out({m, n}, detail::want_grad(tape, {a, b}));
    detail::gemm_nt(a.values().data(), b.values().data(), out.values().data(), m, k, n, false);
    if (out.requires_grad()) {
        tape.record([a = a, b = b, out, m, k, n]() mutable {
            const float* g = out.grad().data();
            if (a.requires_grad()) detail::gemm_nn(g, b.values().data(), a.grad().data(), m, n, k, true);
            if (b.requires_grad()) detail::gemm_tn(g, a.values().data(), b.grad().data(), n, m, k, true);
        });
    }
    return out;
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out(a.shape(), detail::want_grad(tape, {a, b}));
    for (std::size_t i = 0; i < out.values().size(); ++i) out.values()[i] = a.values()[i] + b.values()[i];
    if (out.requires_grad()) {
        tape.record([a = a, b = b, out]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

// [m x n] + [n] broadcast over rows
inline Tensor add_rows(Tape& tape, const Tensor& x, const Tensor& bias) {
    detail::require_rank(x, 2, "add_rows");
    detail::require_rank(bias, 1, "add_rows");
    if (x.dim(1) != bias.dim(0)) {
        throw ShapeError("add_rows: width mismatch " + shape_str(x.shape()) + " vs " + shape_str(bias.shape()));
    }
    const int m = x.dim(0), n = x.dim(1);
    Tensor out({m, n}, detail::want_grad(tape, {x, bias}));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + bias.at(j);
    if (out.requires_grad()) {
        tape.record([x = x, bias = bias, out, m, n]() mutable {
            if (x.requires_grad()) {
                auto& gx = x.grad();
                const auto& g = out.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (bias.requires_grad()) {
                auto& gb = bias.grad();
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i)
                        acc += out.grad()[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j)];
                    gb[static_cast<std::size_t>(j)] += static_cast<float>(acc);
                }
            }
        });
    }
    return out;
}

// x + c where c is a plain constant vector (no gradient flows into c).
// Entries of c may be -inf; these force the corresponding outputs to -inf.
inline Tensor add_const(Tape& tape, const Tensor& x, const std::vector<float>& c) {
    if (x.values().size() != c.size()) {
        throw ShapeError("add_const: constant length " + std::to_string(c.size()) +
                         " vs shape " + shape_str(x.shape()));
    }
    Tensor out(x.shape(), detail::want_grad(tape, {x}));
    for (std::size_t i = 0; i < c.size(); ++i) out.values()[i] = x.values()[i] + c[i];
    if (out.requires_grad()) {
        tape.record([x = x, out]() mutable {
            auto& gx = x.grad();
            const auto& g = out.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

inline Tensor scale(Tape& tape, const Tensor& x, float c) {
    Tensor out(x.shape(), detail::want_grad(tape, {x}));
    for (std::size_t i = 0; i < out.values().size(); ++i) out.values()[i] = x.values()[i] * c;
    if (out.requires_grad()) {
        tape.record([x = x, out, c]() mutable {
            auto& gx = x.grad();
            const auto& g = out.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
        });
    }
    return out;
}

inline Tensor relu(Tape& tape, const Tensor& x) {
    Tensor out(x.shape(), detail::want_grad(tape, {x}));
    for (std::size_t i = 0; i < out.values().size(); ++i)
        out.values()[i] = x.values()[i] > 0.0f ? x.values()[i] : 0.0f;
    if (out.requires_grad()) {
        tape.record([x = x, out]() mutable {
            auto& gx = x.grad();
            const auto& g = out.grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x.values()[i] > 0.0f) gx[i] += g[i];
        });
    }
    return out;
}

// Elementwise multiply by a constant mask (dropout core).
inline Tensor apply_mask(Tape& tape, const Tensor& x, const std::vector<float>& mask) {
    if (x.values().size() != mask.size()) {
        throw ShapeError("apply_mask: mask length " + std::to_string(mask.size()) +
                         " vs shape " + shape_str(x.shape()));
    }
    Tensor out(x.shape(), detail::want_grad(tape, {x}));
    for (std::size_t i = 0; i < mask.size(); ++i) out.values()[i] = x.values()[i] * mask[i];
    if (out.requires_grad()) {
        tape.record([x = x, out, mask]() mutable {
            auto& gx = x.grad();
            const auto& g = out.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
        });
    }
    return out;
}

// Inverted dropout: kept entries are scaled by 1/(1-p).
inline Tensor dropout(Tape& tape, const Tensor& x, float p, Rng& rng) {
    if (p <= 0.0f) return x;
    std::vector<float> mask(x.values().size());
    const float keep_scale = 1.0f / (1.0f - p);
    for (float& m : mask) m = rng.uniform() >= p ? keep_scale : 0.0f;
    return apply_mask(tape, x, mask);
}

// Concatenate 1-D tensors.
inline Tensor concat(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    int total = 0;
    bool rg = false;
    for (const Tensor& t : parts) {
        detail::require_rank(t, 1, "concat");
        total += t.dim(0);
        rg = rg || (tape.recording() && t.requires_grad());
    }
    Tensor out({total}, rg);
    int pos = 0;
    for (const Tensor& t : parts) {
        std::copy(t.values().begin(), t.values().end(), out.values().begin() + pos);
        pos += t.dim(0);
    }
    if (rg) {
        tape.record([parts = parts, out]() mutable {
            int p = 0;
            for (Tensor& t : parts) {
                if (t.requires_grad()) {
                    auto& gt = t.grad();
                    for (int i = 0; i < t.dim(0); ++i) gt[static_cast<std::size_t>(i)] += out.grad()[static_cast<std::size_t>(p + i)];
                }
                p += t.dim(0);
            }
        });
    }
    return out;
}

// Stack 1-D tensors of equal length into a matrix, one per row.
inline Tensor stack_rows(Tape& tape, const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows: no inputs");
    const int n = rows.front().dim(0);
    bool rg = false;
    for (const Tensor& t : rows) {
        detail::require_rank(t, 1, "stack_rows");
        if (t.dim(0) != n) {
            throw ShapeError("stack_rows: row length mismatch " + shape_str(t.shape()) +
                             " vs [" + std::to_string(n) + "]");
        }
        rg = rg || (tape.recording() && t.requires_grad());
    }
    Tensor out({static_cast<int>(rows.size()), n}, rg);
    for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy(rows[r].values().begin(), rows[r].values().end(),
                  out.values().begin() + static_cast<std::ptrdiff_t>(r * static_cast<std::size_t>(n)));
    if (rg) {
        tape.record([rows = rows, out, n]() mutable {
            for (std::size_t r = 0; r < rows.size(); ++r) {
                if (!rows[r].requires_grad()) continue;
                auto& gt = rows[r].grad();
                const float* g = out.grad().data() + r * static_cast<std::size_t>(n);
                for (int i = 0; i < n; ++i) gt[static_cast<std::size_t>(i)] += g[i];
            }
        });
    }
    return out;
}

// Concatenate matrices along columns; all parts must have the same row count.
inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int m = parts.front().dim(0);
    int total = 0;
    bool rg = false;
    for (const Tensor& t : parts) {
        detail::require_rank(t, 2, "concat_cols");
        if (t.dim(0) != m) {
            throw ShapeError("concat_cols: row count mismatch " + shape_str(t.shape()) +
                             " vs " + shape_str(parts.front().shape()));
        }
        total += t.dim(1);
        rg = rg || (tape.recording() && t.requires_grad());
    }
    Tensor out({m, total}, rg);
    int col = 0;
    for (const Tensor& t : parts) {
        const int w = t.dim(1);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) out.at(i, col + j) = t.at(i, j);
        col += w;
    }
    if (rg) {
        tape.record([parts = parts, out, m, total]() mutable {
            int c = 0;
            for (Tensor& t : parts) {
                const int w = t.dim(1);
                if (t.requires_grad()) {
                    auto& gt = t.grad();
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < w; ++j)
                            gt[static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j)] +=
                                out.grad()[static_cast<std::size_t>(i) * total + static_cast<std::size_t>(c + j)];
                }
                c += w;
            }
        });
    }
    return out;
}

// [m x n] -> [m x w] taking columns [c0, c0+w).
inline Tensor slice_cols(Tape& tape, const Tensor& x, int c0, int w) {
    detail::require_rank(x, 2, "slice_cols");
    const int m = x.dim(0), n = x.dim(1);
    if (c0 < 0 || w <= 0 || c0 + w > n) {
        throw ShapeError("slice_cols: [" + std::to_string(c0) + ", " + std::to_string(c0 + w) +
                         ") out of range for shape " + shape_str(x.shape()));
    }
    Tensor out({m, w}, detail::want_grad(tape, {x}));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) out.at(i, j) = x.at(i, c0 + j);
    if (out.requires_grad()) {
        tape.record([x = x, out, m, w, c0]() mutable {
            auto& gx = x.grad();
            const int n = x.dim(1);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    gx[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(c0 + j)] +=
                        out.grad()[static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j)];
        });
    }
    return out;
}

// Gather rows of a matrix; duplicate indices are allowed.
inline Tensor select_rows(Tape& tape, const Tensor& x, const std::vector<int>& rows) {
    detail::require_rank(x, 2, "select_rows");
    if (rows.empty()) throw ShapeError("select_rows: empty index list");
    const int m = x.dim(0), n = x.dim(1);
    for (int r : rows) {
        if (r < 0 || r >= m) {
            throw DataError("select_rows: row " + std::to_string(r) + " out of range for shape " +
                            shape_str(x.shape()));
        }
    }
    Tensor out({static_cast<int>(rows.size()), n}, detail::want_grad(tape, {x}));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (int j = 0; j < n; ++j) out.at(static_cast<int>(i), j) = x.at(rows[i], j);
    if (out.requires_grad()) {
        tape.record([x = x, out, rows, n]() mutable {
            auto& gx = x.grad();
            for (std::size_t i = 0; i < rows.size(); ++i)
                for (int j = 0; j < n; ++j)
                    gx[static_cast<std::size_t>(rows[i]) * n + static_cast<std::size_t>(j)] +=
                        out.grad()[i * static_cast<std::size_t>(n) + static_cast<std::size_t>(j)];
        });
    }
    return out;
}

// Extract one row of a matrix as a 1-D tensor.
inline Tensor take_row(Tape& tape, const Tensor& x, int row) {
    detail::require_rank(x, 2, "take_row");
    const int m = x.dim(0), n = x.dim(1);
    if (row < 0 || row >= m) {
        throw DataError("take_row: row " + std::to_string(row) + " out of range for shape " +
                        shape_str(x.shape()));
    }
    Tensor out({n}, detail::want_grad(tape, {x}));
    for (int j = 0; j < n; ++j) out.at(j) = x.at(row, j);
    if (out.requires_grad()) {
        tape.record([x = x, out, row, n]() mutable {
            auto& gx = x.grad();
            for (int j = 0; j < n; ++j)
                gx[static_cast<std::size_t>(row) * n + static_cast<std::size_t>(j)] += out.grad()[static_cast<std::size_t>(j)];
        });
    }
    return out;
}

// table[V x d], ids -> [len x d]; the adjoint scatter-adds into the table.
inline Tensor embedding_lookup(Tape& tape, const Tensor& table, const std::vector<int>& ids) {
    detail::require_rank(table, 2, "embedding_lookup");
    if (ids.empty()) throw ShapeError("embedding_lookup: empty id list");
    const int v = table.dim(0), d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw DataError("embedding_lookup: id " + std::to_string(id) + " out of range [0, " +
                            std::to_string(v) + ")");
        }
    }
    Tensor out({static_cast<int>(ids.size()), d}, detail::want_grad(tape, {table}));
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < d; ++j) out.at(static_cast<int>(i), j) = table.at(ids[i], j);
    if (out.requires_grad()) {
        tape.record([table = table, out, ids, d]() mutable {
            auto& gt = table.grad();
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < d; ++j)
                    gt[static_cast<std::size_t>(ids[i]) * d + static_cast<std::size_t>(j)] +=
                        out.grad()[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];
        });
    }
    return out;
}

namespace detail {

// One softmax row; x entries may be -inf (masked out), but not all of them.
inline void softmax_row(const float* x, float* p, int n) {
    float mx = kNegInf;
    for (int i = 0; i < n; ++i) mx = std::max(mx, x[i]);
    if (!(mx > kNegInf)) throw NumericError("softmax: all entries are -inf (degenerate mask)");
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double e = x[i] == kNegInf ? 0.0 : std::exp(static_cast<double>(x[i]) - mx);
        p[i] = static_cast<float>(e);
        sum += e;
    }
    const double inv = 1.0 / sum;
    for (int i = 0; i < n; ++i) p[i] = static_cast<float>(p[i] * inv);
}

inline void softmax_row_backward(const float* p, const float* gy, float* gx, int n) {
    double dot = 0.0;
    for (int i = 0; i < n; ++i) dot += static_cast<double>(gy[i]) * p[i];
    for (int i = 0; i < n; ++i)
        gx[i] += static_cast<float>(p[i] * (static_cast<double>(gy[i]) - dot));
}

} // namespace detail

inline Tensor softmax(Tape& tape, const Tensor& x) {
    detail::require_rank(x, 1, "softmax");
    const int n = x.dim(0);
    Tensor out({n}, detail::want_grad(tape, {x}));
    detail::softmax_row(x.values().data(), out.values().data(), n);
    if (out.requires_grad()) {
        tape.record([x = x, out, n]() mutable {
            detail::softmax_row_backward(out.values().data(), out.grad().data(), x.grad().data(), n);
        });
    }
    return out;
}

// Row-wise softmax of a matrix.
inline Tensor softmax_rows(Tape& tape, const Tensor& x) {
    detail::require_rank(x, 2, "softmax_rows");
    const int m = x.dim(0), n = x.dim(1);
    Tensor out({m, n}, detail::want_grad(tape, {x}));
    for (int i = 0; i < m; ++i)
        detail::softmax_row(x.values().data() + static_cast<std::size_t>(i) * n,
                            out.values().data() + static_cast<std::size_t>(i) * n, n);
    if (out.requires_grad()) {
        tape.record([x = x, out, m, n]() mutable {
            for (int i = 0; i < m; ++i)
                detail::softmax_row_backward(out.values().data() + static_cast<std::size_t>(i) * n,
                                             out.grad().data() + static_cast<std::size_t>(i) * n,
                                             x.grad().data() + static_cast<std::size_t>(i) * n, n);
        });
    }
    return out;
}

namespace detail {

struct LayerNormCache {
    std::vector<float> xhat;
    std::vector<double> inv_std;
};

inline void layer_norm_row(const float* x, const float* gamma, const float* beta, float eps,
                           float* y, float* xhat, double* inv_std, int n) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += x[i];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
        const double dx = x[i] - mean;
        var += dx * dx;
    }
    var /= n; // population variance
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    *inv_std = inv;
    for (int i = 0; i < n; ++i) {
        const double h = (x[i] - mean) * inv;
        xhat[i] = static_cast<float>(h);
        y[i] = static_cast<float>(h * gamma[i] + beta[i]);
    }
}

inline void layer_norm_row_backward(const float* gy, const float* gamma, const float* xhat,
                                    double inv_std, float* gx, float* ggamma, float* gbeta,
                                    bool want_x, bool want_gamma, bool want_beta, int n) {
    if (want_gamma)
        for (int i = 0; i < n; ++i) ggamma[i] += gy[i] * xhat[i];
    if (want_beta)
        for (int i = 0; i < n; ++i) gbeta[i] += gy[i];
    if (want_x) {
        double mean_a = 0.0, mean_ax = 0.0;
        for (int i = 0; i < n; ++i) {
            const double a = static_cast<double>(gy[i]) * gamma[i];
            mean_a += a;
            mean_ax += a * xhat[i];
        }
        mean_a /= n;
        mean_ax /= n;
        for (int i = 0; i < n; ++i) {
            const double a = static_cast<double>(gy[i]) * gamma[i];
            gx[i] += static_cast<float>((a - mean_a - xhat[i] * mean_ax) * inv_std);
        }
    }
}

} // namespace detail

inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         float eps) {
    detail::require_rank(x, 1, "layer_norm");
    const int n = x.dim(0);
    if (gamma.shape() != x.shape() || beta.shape() != x.shape()) {
        throw ShapeError("layer_norm: gamma/beta shape mismatch vs " + shape_str(x.shape()));
    }
    Tensor out({n}, detail::want_grad(tape, {x, gamma, beta}));
    auto cache = std::make_shared<detail::LayerNormCache>();
    cache->xhat.resize(static_cast<std::size_t>(n));
    cache->inv_std.resize(1);
    detail::layer_norm_row(x.values().data(), gamma.values().data(), beta.values().data(), eps,
                           out.values().data(), cache->xhat.data(), cache->inv_std.data(), n);
    if (out.requires_grad()) {
        tape.record([x = x, gamma = gamma, beta = beta, out, cache, n]() mutable {
            detail::layer_norm_row_backward(
                out.grad().data(), gamma.values().data(), cache->xhat.data(), cache->inv_std[0],
                x.requires_grad() ? x.grad().data() : nullptr,
                gamma.requires_grad() ? gamma.grad().data() : nullptr,
                beta.requires_grad() ? beta.grad().data() : nullptr,
                x.requires_grad(), gamma.requires_grad(), beta.requires_grad(), n);
        });
    }
    return out;
}

// Row-wise layer norm of a matrix with shared gain/bias.
inline Tensor layer_norm_rows(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              float eps) {
    detail::require_rank(x, 2, "layer_norm_rows");
    const int m = x.dim(0), n = x.dim(1);
    if (gamma.rank() != 1 || gamma.dim(0) != n || beta.rank() != 1 || beta.dim(0) != n) {
        throw ShapeError("layer_norm_rows: gamma/beta shape mismatch vs " + shape_str(x.shape()));
    }
    Tensor out({m, n}, detail::want_grad(tape, {x, gamma, beta}));
    auto cache = std::make_shared<detail::LayerNormCache>();
    cache->xhat.resize(static_cast<std::size_t>(m) * n);
    cache->inv_std.resize(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i)
        detail::layer_norm_row(x.values().data() + static_cast<std::size_t>(i) * n,
                               gamma.values().data(), beta.values().data(), eps,
                               out.values().data() + static_cast<std::size_t>(i) * n,
                               cache->xhat.data() + static_cast<std::size_t>(i) * n,
                               cache->inv_std.data() + i, n);
    if (out.requires_grad()) {
        tape.record([x = x, gamma = gamma, beta = beta, out, cache, m, n]() mutable {
            for (int i = 0; i < m; ++i)
                detail::layer_norm_row_backward(
                    out.grad().data() + static_cast<std::size_t>(i) * n, gamma.values().data(),
                    cache->xhat.data() + static_cast<std::size_t>(i) * n, cache->inv_std[static_cast<std::size_t>(i)],
                    x.requires_grad() ? x.grad().data() + static_cast<std::size_t>(i) * n : nullptr,
                    gamma.requires_grad() ? gamma.grad().data() : nullptr,
                    beta.requires_grad() ? beta.grad().data() : nullptr,
                    x.requires_grad(), gamma.requires_grad(), beta.requires_grad(), n);
        });
    }
    return out;
}

constexpr double kCrossEntropyFloor = 1e-12;

// -log(max(p[label], floor)); p is expected to lie in the probability simplex.
inline Tensor cross_entropy(Tape& tape, const Tensor& p, int label) {
    detail::require_rank(p, 1, "cross_entropy");
    if (label < 0 || label >= p.dim(0)) {
        throw DataError("cross_entropy: label " + std::to_string(label) + " out of range [0, " +
                        std::to_string(p.dim(0)) + ")");
    }
    const double pl = std::max(static_cast<double>(p.at(label)), kCrossEntropyFloor);
    Tensor out = Tensor::scalar(static_cast<float>(-std::log(pl)), detail::want_grad(tape, {p}));
    if (out.requires_grad()) {
        tape.record([p = p, out, label]() mutable {
            const double v = p.at(label);
            if (v > kCrossEntropyFloor) {
                p.grad()[static_cast<std::size_t>(label)] +=
                    static_cast<float>(-out.grad()[0] / v);
            }
        });
    }
    return out;
}

// y = sum_i w[idx_i] * part_i over 1-D parts of equal length; the convex
// combination behind the final prediction. Accumulates in float64.
inline Tensor weighted_sum(Tape& tape, const Tensor& w,
                           const std::vector<std::pair<int, Tensor>>& parts) {
    detail::require_rank(w, 1, "weighted_sum");
    if (parts.empty()) throw ShapeError("weighted_sum: no parts");
    const int n = parts.front().second.dim(0);
    bool rg = tape.recording() && w.requires_grad();
    for (const auto& [idx, t] : parts) {
        detail::require_rank(t, 1, "weighted_sum");
        if (t.dim(0) != n) {
            throw ShapeError("weighted_sum: part length mismatch " + shape_str(t.shape()));
        }
        if (idx < 0 || idx >= w.dim(0)) {
            throw DataError("weighted_sum: weight index " + std::to_string(idx) +
                            " out of range for " + shape_str(w.shape()));
        }
        rg = rg || (tape.recording() && t.requires_grad());
    }
    Tensor out({n}, rg);
    std::vector<double> acc(static_cast<std::size_t>(n), 0.0);
    for (const auto& [idx, t] : parts) {
        const double wi = w.at(idx);
        for (int j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += wi * t.at(j);
    }
    for (int j = 0; j < n; ++j) out.at(j) = static_cast<float>(acc[static_cast<std::size_t>(j)]);
    if (rg) {
        tape.record([w = w, parts = parts, out, n]() mutable {
            const auto& g = out.grad();
            for (auto& [idx, t] : parts) {
                const float wi = w.at(idx);
                if (t.requires_grad()) {
                    auto& gt = t.grad();
                    for (int j = 0; j < n; ++j) gt[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(j)] * wi;
                }
                if (w.requires_grad()) {
                    double acc2 = 0.0;
                    for (int j = 0; j < n; ++j)
                        acc2 += static_cast<double>(g[static_cast<std::size_t>(j)]) * t.at(j);
                    w.grad()[static_cast<std::size_t>(idx)] += static_cast<float>(acc2);
                }
            }
        });
    }
    return out;
}

inline int argmax_index(const std::vector<float>& v) {
    int best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
}

} // namespace vwerc
