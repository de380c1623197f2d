#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vwerc/common.hpp"
#include "vwerc/init.hpp"
#include "vwerc/ops.hpp"
#include "vwerc/rng.hpp"
#include "vwerc/tensor.hpp"

namespace vwerc {

constexpr float kLayerNormEps = 1e-5f;

struct EncoderConfig {
    int d = 32;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 64;
    int max_tokens = 256;
    float dropout = 0.1f;

    void validate() const {
        if (d < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1 || max_tokens < 1) {
            throw ConfigError("encoder: all dimensions must be >= 1");
        }
        if (d % n_heads != 0) {
            throw ConfigError("encoder: d=" + std::to_string(d) + " not divisible by n_heads=" +
                              std::to_string(n_heads));
        }
        if (dropout < 0.0f || dropout >= 1.0f) throw ConfigError("encoder: dropout must be in [0, 1)");
    }
};

// Query/key/value projections plus the output projection that recombines the
// concatenated heads.
struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct EncoderLayerParams {
    AttentionParams attn;
    Tensor ln1_g, ln1_b;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
    Tensor ln2_g, ln2_b;
};

struct EncoderParams {
    Tensor tok_emb; // [vocab x d]
    Tensor pos_emb; // [max_tokens x d]
    std::vector<EncoderLayerParams> layers;
};

inline AttentionParams init_attention(int d, Rng& rng) {
    AttentionParams p;
    p.wq = xavier_uniform(d, d, rng);
    p.bq = zeros_param(d);
    p.wk = xavier_uniform(d, d, rng);
    p.bk = zeros_param(d);
    p.wv = xavier_uniform(d, d, rng);
    p.bv = zeros_param(d);
    p.wo = xavier_uniform(d, d, rng);
    p.bo = zeros_param(d);
    return p;
}

inline EncoderParams init_encoder(const EncoderConfig& cfg, int vocab_size, Rng& rng) {
    cfg.validate();
    EncoderParams p;
    p.tok_emb = Tensor({vocab_size, cfg.d}, true);
    for (float& v : p.tok_emb.values()) v = rng.normal(0.0f, 0.02f);
    p.pos_emb = Tensor({cfg.max_tokens, cfg.d}, true);
    for (float& v : p.pos_emb.values()) v = rng.normal(0.0f, 0.02f);
    for (int l = 0; l < cfg.n_layers; ++l) {
        EncoderLayerParams layer;
        layer.attn = init_attention(cfg.d, rng);
        layer.ln1_g = ones_param(cfg.d);
        layer.ln1_b = zeros_param(cfg.d);
        layer.ff_w1 = xavier_uniform(cfg.d, cfg.d_ff, rng);
        layer.ff_b1 = zeros_param(cfg.d_ff);
        layer.ff_w2 = xavier_uniform(cfg.d_ff, cfg.d, rng);
        layer.ff_b2 = zeros_param(cfg.d);
        layer.ln2_g = ones_param(cfg.d);
        layer.ln2_b = zeros_param(cfg.d);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

// Scaled dot-product attention with per-head projections; heads are
// concatenated and sent through the output projection. query may be any
// number of rows; keys double as values.
inline Tensor multi_head_attention(Tape& tape, const Tensor& query, const Tensor& keys,
                                   const AttentionParams& p, int n_heads) {
    const int d = query.dim(1);
    if (keys.dim(0) < 1) throw ShapeError("multi_head_attention: empty key set");
    if (keys.dim(1) != d) {
        throw ShapeError("multi_head_attention: key width " + shape_str(keys.shape()) +
                         " vs query " + shape_str(query.shape()));
    }
    const int dk = d / n_heads;
    const float inv_sqrt_dk = 1.0f / std::sqrt(static_cast<float>(dk));

    Tensor q = add_rows(tape, matmul(tape, query, p.wq), p.bq);
    Tensor k = add_rows(tape, matmul(tape, keys, p.wk), p.bk);
    Tensor v = add_rows(tape, matmul(tape, keys, p.wv), p.bv);

    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
        Tensor qh = slice_cols(tape, q, h * dk, dk);
        Tensor kh = slice_cols(tape, k, h * dk, dk);
        Tensor vh = slice_cols(tape, v, h * dk, dk);
        Tensor scores = scale(tape, matmul_nt(tape, qh, kh), inv_sqrt_dk);
        Tensor weights = softmax_rows(tape, scores);
        heads.push_back(matmul(tape, weights, vh));
    }
    return add_rows(tape, matmul(tape, concat_cols(tape, heads), p.wo), p.bo);
}

// Token + position embeddings through n_layers of post-norm blocks:
// self-attention -> residual + layer norm -> feed-forward -> residual +
// layer norm. Attention is fully bidirectional. Dropout runs only in
// train_mode (rng must be non-null then).
inline Tensor encode(Tape& tape, const std::vector<int>& tokens, const EncoderParams& p,
                     const EncoderConfig& cfg, bool train_mode, Rng* rng = nullptr) {
    const int len = static_cast<int>(tokens.size());
    if (len < 1) throw ShapeError("encode: empty token sequence");
    if (len > cfg.max_tokens) {
        throw ShapeError("encode: input length " + std::to_string(len) + " exceeds max_tokens " +
                         std::to_string(cfg.max_tokens) + "; the caller must pre-truncate");
    }
    if (train_mode && cfg.dropout > 0.0f && rng == nullptr) {
        throw ConfigError("encode: train_mode with dropout requires an rng");
    }
    std::vector<int> positions(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i) positions[static_cast<std::size_t>(i)] = i;

    Tensor h = add(tape, embedding_lookup(tape, p.tok_emb, tokens),
                   embedding_lookup(tape, p.pos_emb, positions));
    for (const EncoderLayerParams& layer : p.layers) {
        Tensor attn = multi_head_attention(tape, h, h, layer.attn, cfg.n_heads);
        if (train_mode && cfg.dropout > 0.0f) attn = dropout(tape, attn, cfg.dropout, *rng);
        h = layer_norm_rows(tape, add(tape, h, attn), layer.ln1_g, layer.ln1_b, kLayerNormEps);

        Tensor ff = add_rows(tape, matmul(tape, relu(tape, add_rows(tape, matmul(tape, h, layer.ff_w1), layer.ff_b1)),
                                          layer.ff_w2),
                             layer.ff_b2);
        if (train_mode && cfg.dropout > 0.0f) ff = dropout(tape, ff, cfg.dropout, *rng);
        h = layer_norm_rows(tape, add(tape, h, ff), layer.ln2_g, layer.ln2_b, kLayerNormEps);
    }
    return h;
}

// g_i = hidden row at the first token of utterance i; keeps only the last
// min(count, M+1) utterances, most recent last.
inline std::vector<Tensor> read_utterance_reprs(Tape& tape, const Tensor& hidden,
                                                const std::vector<int>& offsets, int M) {
    if (offsets.empty()) throw ShapeError("read_utterance_reprs: no offsets");
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        if (offsets[i] < 0 || offsets[i] >= hidden.dim(0)) {
            throw DataError("read_utterance_reprs: offset " + std::to_string(offsets[i]) +
                            " out of range for " + shape_str(hidden.shape()));
        }
        if (i > 0 && offsets[i] <= offsets[i - 1]) {
            throw DataError("read_utterance_reprs: offsets must be strictly increasing");
        }
    }
    const int count = static_cast<int>(offsets.size());
    const int keep = std::min(count, M + 1);
    std::vector<Tensor> out;
    out.reserve(static_cast<std::size_t>(keep));
    for (int i = count - keep; i < count; ++i)
        out.push_back(take_row(tape, hidden, offsets[static_cast<std::size_t>(i)]));
    return out;
}

} // namespace vwerc
