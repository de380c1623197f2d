#pragma once

#include <string>
#include <vector>

#include "vwerc/encoder.hpp"
#include "vwerc/ops.hpp"
#include "vwerc/tensor.hpp"

namespace vwerc {

// How conversational history feeds the two attention units.
//   SpeakerAware: split history by same/other speaker (the inner/inter units).
//   NUnit:        both units attend over all history, no speaker information.
//   SUnit:        one-hot speaker ids are concatenated to every utterance
//                 representation (and projected back to width d) before an
//                 NUnit-style pass.
enum class SpeakerVariant { SpeakerAware, NUnit, SUnit };

inline std::string to_string(SpeakerVariant v) {
    switch (v) {
        case SpeakerVariant::SpeakerAware: return "speaker_aware";
        case SpeakerVariant::NUnit: return "n_unit";
        case SpeakerVariant::SUnit: return "s_unit";
    }
    throw ConfigError("unknown speaker variant");
}

inline SpeakerVariant speaker_variant_from_string(const std::string& s) {
    if (s == "speaker_aware") return SpeakerVariant::SpeakerAware;
    if (s == "n_unit") return SpeakerVariant::NUnit;
    if (s == "s_unit") return SpeakerVariant::SUnit;
    throw ConfigError("unknown speaker variant \"" + s + "\"");
}

struct SpeakerPartition {
    std::vector<int> inner; // history indices spoken by the current speaker
    std::vector<int> inter; // the complement
};

// History indices 0..n-1 split by whether their speaker matches the current
// one. History may be empty.
inline SpeakerPartition partition(const std::vector<std::string>& history_speakers,
                                  const std::string& current) {
    SpeakerPartition p;
    for (std::size_t i = 0; i < history_speakers.size(); ++i) {
        if (history_speakers[i] == current) p.inner.push_back(static_cast<int>(i));
        else p.inter.push_back(static_cast<int>(i));
    }
    return p;
}

// One attention unit: multi-head attention from g_t over its history subset,
// then a residual layer norm. The inner and inter units each own one of
// these; the parameter sets are never shared.
struct SpeakerUnitParams {
    AttentionParams attn;
    Tensor ln_g, ln_b;
};

inline SpeakerUnitParams init_speaker_unit(int d, Rng& rng) {
    SpeakerUnitParams p;
    p.attn = init_attention(d, rng);
    p.ln_g = ones_param(d);
    p.ln_b = zeros_param(d);
    return p;
}

// o = LayerNorm(c + g_t) with c the projected attention readout; an empty
// subset contributes c = 0, so o = LayerNorm(g_t).
inline Tensor speaker_unit_forward(Tape& tape, const Tensor& g_t, const std::vector<Tensor>& G,
                                   const SpeakerUnitParams& p, int n_heads) {
    Tensor pre;
    if (G.empty()) {
        pre = g_t;
    } else {
        Tensor c_mat = multi_head_attention(tape, stack_rows(tape, {g_t}), stack_rows(tape, G),
                                            p.attn, n_heads);
        pre = add(tape, take_row(tape, c_mat, 0), g_t);
    }
    return layer_norm(tape, pre, p.ln_g, p.ln_b, kLayerNormEps);
}

// z = [o_inter; o_inner]
inline Tensor fuse(Tape& tape, const Tensor& o_inner, const Tensor& o_inter) {
    return concat(tape, {o_inter, o_inner});
}

} // namespace vwerc
