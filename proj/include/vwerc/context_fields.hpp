#pragma once

#include <map>
#include <vector>

#include "vwerc/corpus.hpp"
#include "vwerc/encoder.hpp"
#include "vwerc/ops.hpp"
#include "vwerc/window_gate.hpp"

namespace vwerc {

// One prediction field: a full encoder plus a linear classifier read off the
// [CLS] position.
struct FieldParams {
    EncoderParams enc;
    Tensor cls_w; // [d x C]
    Tensor cls_b; // [C]
};

inline FieldParams init_field(const EncoderConfig& cfg, int vocab_size, int num_classes, Rng& rng) {
    FieldParams p;
    p.enc = init_encoder(cfg, vocab_size, rng);
    p.cls_w = xavier_uniform(cfg.d, num_classes, rng);
    p.cls_b = zeros_param(num_classes);
    return p;
}

// [CLS] + u_{t-i} + ... + u_t, each utterance as speaker [SEP] text. If the
// result exceeds max_tokens, the oldest window utterances are dropped first;
// the current utterance is never dropped, only tail-truncated as a last
// resort.
inline std::vector<int> build_field_input(const Conversation& conv, int t, int window,
                                          const Vocabulary& vocab, int max_tokens) {
    if (t < 0 || t >= static_cast<int>(conv.utterances.size())) {
        throw DataError("build_field_input: position " + std::to_string(t) + " out of range");
    }
    if (window < 0 || window > t) {
        throw DataError("build_field_input: window " + std::to_string(window) +
                        " infeasible at position " + std::to_string(t));
    }
    std::vector<std::vector<int>> per_utt;
    std::size_t total = 1; // [CLS]
    for (int i = t - window; i <= t; ++i) {
        per_utt.push_back(detail::utterance_ids(conv.utterances[static_cast<std::size_t>(i)], vocab));
        total += per_utt.back().size();
    }
    std::size_t start = 0;
    while (total > static_cast<std::size_t>(max_tokens) && start + 1 < per_utt.size()) {
        total -= per_utt[start].size();
        ++start;
    }
    std::vector<int> ids;
    ids.push_back(Vocabulary::kCls);
    for (std::size_t i = start; i < per_utt.size(); ++i)
        ids.insert(ids.end(), per_utt[i].begin(), per_utt[i].end());
    if (static_cast<int>(ids.size()) > max_tokens) ids.resize(static_cast<std::size_t>(max_tokens));
    return ids;
}

// p_i = softmax(classifier(g_[CLS])) for field i.
inline Tensor field_predict(Tape& tape, const std::vector<int>& tokens, const FieldParams& p,
                            const EncoderConfig& cfg, bool train_mode, Rng* rng = nullptr) {
    if (tokens.empty() || tokens.front() != Vocabulary::kCls) {
        throw DataError("field_predict: input must start with [CLS]");
    }
    Tensor hidden = encode(tape, tokens, p.enc, cfg, train_mode, rng);
    Tensor cls = take_row(tape, hidden, 0);
    Tensor logits = take_row(
        tape, add_rows(tape, matmul(tape, stack_rows(tape, {cls}), p.cls_w), p.cls_b), 0);
    return softmax(tape, logits);
}

// p_hat = sum_{i in active} q[i] * p^i. per_field must cover exactly the
// active window set.
inline Tensor combine(Tape& tape, const WindowDistribution& wd,
                      const std::map<int, Tensor>& per_field) {
    if (per_field.size() != wd.active.size()) {
        throw IntegrityError("combine: " + std::to_string(per_field.size()) +
                             " field outputs for " + std::to_string(wd.active.size()) +
                             " active windows");
    }
    std::vector<std::pair<int, Tensor>> parts;
    for (int i : wd.active) {
        auto it = per_field.find(i);
        if (it == per_field.end()) {
            throw IntegrityError("combine: missing field output for active window " +
                                 std::to_string(i));
        }
        parts.emplace_back(i, it->second);
    }
    return weighted_sum(tape, wd.q, parts);
}

} // namespace vwerc
