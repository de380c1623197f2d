#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vwerc/context_fields.hpp"
#include "vwerc/corpus.hpp"
#include "vwerc/encoder.hpp"
#include "vwerc/speaker_units.hpp"
#include "vwerc/window_gate.hpp"

namespace vwerc {

struct GateConfig {
    int M = 4;
    int K = 2;
    int d_h = 32;
    int fixed_window = -1; // >= 0 pins q to one window (fixed-window baseline)
    GateMode mode = GateMode::TopkSoft;

    void validate() {
        if (M < 0) throw ConfigError("gate: M must be >= 0");
        if (K < 1) throw ConfigError("gate: K must be >= 1");
        if (d_h < 1) throw ConfigError("gate: d_h must be >= 1");
        if (K > M + 1) K = M + 1; // clamp
        if (fixed_window > M) throw ConfigError("gate: fixed_window exceeds M");
    }
};

struct ModelConfig {
    EncoderConfig encoder;
    GateConfig gate;
    SpeakerVariant variant = SpeakerVariant::SpeakerAware;
    bool share_field_encoders = false;
    int num_classes = 0;

    void validate() {
        encoder.validate();
        gate.validate();
        if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
    }
};

struct ModelParams {
    EncoderParams encoder;       // the utterance encoder feeding the gate path
    SpeakerUnitParams inner, inter;
    Tensor sunit_w, sunit_b;     // S-Unit projection, present only for that variant
    GateParams gate;
    std::vector<FieldParams> fields; // M+1 fields, or 1 when shared
};

struct Model {
    ModelConfig cfg;
    Vocabulary vocab;
    LabelMap labels;
    std::vector<std::string> speakers; // sorted speaker tokens seen in training
    ModelParams p;

    const FieldParams& field(int window) const {
        return p.fields[cfg.share_field_encoders ? 0 : static_cast<std::size_t>(window)];
    }

    int speaker_index(const std::string& name) const {
        const std::string tok = speaker_token(name);
        const auto it = std::lower_bound(speakers.begin(), speakers.end(), tok);
        if (it == speakers.end() || *it != tok) return -1;
        return static_cast<int>(it - speakers.begin());
    }
};

inline std::vector<std::string> collect_speakers(const std::vector<Conversation>& corpus) {
    std::set<std::string> names;
    for (const Conversation& conv : corpus)
        for (const Utterance& u : conv.utterances) names.insert(speaker_token(u.speaker));
    return {names.begin(), names.end()};
}

inline Model init_model(ModelConfig cfg, Vocabulary vocab, LabelMap labels,
                        std::vector<std::string> speakers, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.vocab = std::move(vocab);
    m.labels = std::move(labels);
    m.speakers = std::move(speakers);
    Rng rng(seed);
    const int d = cfg.encoder.d;
    m.p.encoder = init_encoder(cfg.encoder, m.vocab.size(), rng);
    m.p.inner = init_speaker_unit(d, rng);
    m.p.inter = init_speaker_unit(d, rng);
    if (cfg.variant == SpeakerVariant::SUnit) {
        m.p.sunit_w = xavier_uniform(d + static_cast<int>(m.speakers.size()), d, rng);
        m.p.sunit_b = zeros_param(d);
    }
    m.p.gate = init_gate(2 * d, cfg.gate.d_h, cfg.gate.M + 1, rng);
    const int n_fields = cfg.share_field_encoders ? 1 : cfg.gate.M + 1;
    for (int i = 0; i < n_fields; ++i)
        m.p.fields.push_back(init_field(cfg.encoder, m.vocab.size(), cfg.num_classes, rng));
    return m;
}

// Visits every learnable tensor in a stable order; the single source of truth
// for checkpoint layout and optimizer state.
inline void for_each_param(Model& m, const std::function<void(const std::string&, Tensor&)>& fn) {
    auto visit_attn = [&fn](const std::string& prefix, AttentionParams& a) {
        fn(prefix + ".wq", a.wq);
        fn(prefix + ".bq", a.bq);
        fn(prefix + ".wk", a.wk);
        fn(prefix + ".bk", a.bk);
        fn(prefix + ".wv", a.wv);
        fn(prefix + ".bv", a.bv);
        fn(prefix + ".wo", a.wo);
        fn(prefix + ".bo", a.bo);
    };
    auto visit_encoder = [&fn, &visit_attn](const std::string& prefix, EncoderParams& e) {
        fn(prefix + ".tok_emb", e.tok_emb);
        fn(prefix + ".pos_emb", e.pos_emb);
        for (std::size_t l = 0; l < e.layers.size(); ++l) {
            const std::string lp = prefix + ".layer" + std::to_string(l);
            EncoderLayerParams& layer = e.layers[l];
            visit_attn(lp + ".attn", layer.attn);
            fn(lp + ".ln1_g", layer.ln1_g);
            fn(lp + ".ln1_b", layer.ln1_b);
            fn(lp + ".ff_w1", layer.ff_w1);
            fn(lp + ".ff_b1", layer.ff_b1);
            fn(lp + ".ff_w2", layer.ff_w2);
            fn(lp + ".ff_b2", layer.ff_b2);
            fn(lp + ".ln2_g", layer.ln2_g);
            fn(lp + ".ln2_b", layer.ln2_b);
        }
    };
    visit_encoder("encoder", m.p.encoder);
    visit_attn("su_inner.attn", m.p.inner.attn);
    fn("su_inner.ln_g", m.p.inner.ln_g);
    fn("su_inner.ln_b", m.p.inner.ln_b);
    visit_attn("su_inter.attn", m.p.inter.attn);
    fn("su_inter.ln_g", m.p.inter.ln_g);
    fn("su_inter.ln_b", m.p.inter.ln_b);
    if (m.cfg.variant == SpeakerVariant::SUnit) {
        fn("sunit.w", m.p.sunit_w);
        fn("sunit.b", m.p.sunit_b);
    }
    fn("gate.w5", m.p.gate.w5);
    fn("gate.b5", m.p.gate.b5);
    fn("gate.w6", m.p.gate.w6);
    fn("gate.b6", m.p.gate.b6);
    for (std::size_t i = 0; i < m.p.fields.size(); ++i) {
        const std::string fp = "field" + std::to_string(i);
        visit_encoder(fp + ".enc", m.p.fields[i].enc);
        fn(fp + ".cls_w", m.p.fields[i].cls_w);
        fn(fp + ".cls_b", m.p.fields[i].cls_b);
    }
}

struct ModelOutput {
    Tensor p_hat;                 // combined emotion distribution
    WindowDistribution wd;        // window distribution and active set
    std::map<int, Tensor> per_field; // per-window distributions, activated fields only
    int field_invocations = 0;
};

// Records the top-K masks of a forward pass so that a later pass can replay
// them verbatim. Finite-difference checks re-evaluate the pipeline under
// perturbed parameters; replaying keeps the discrete selection fixed, which
// is the regime in which the composite is differentiable.
struct MaskFreezer {
    std::vector<std::vector<float>> masks;
    bool replay = false;
    std::size_t cursor = 0;

    void rewind() { cursor = 0; }
};

// Full pipeline for one utterance position: encode the history, run the
// speaker units, score and normalize context windows, then predict with the
// activated fields only and combine. Deactivated fields are never executed.
inline ModelOutput model_forward(Tape& tape, const Model& model, const Conversation& conv, int t,
                                 bool train_mode, Rng* rng = nullptr,
                                 const GateMode* mode_override = nullptr,
                                 MaskFreezer* freezer = nullptr) {
    const ModelConfig& cfg = model.cfg;
    const int M = cfg.gate.M;
    const GateMode mode = mode_override ? *mode_override : cfg.gate.mode;

    EncodedSequence seq = encode_input_sequence(conv, t, model.vocab, cfg.encoder.max_tokens);
    Tensor hidden = encode(tape, seq.ids, model.p.encoder, cfg.encoder, train_mode, rng);
    std::vector<Tensor> reprs = read_utterance_reprs(tape, hidden, seq.offsets, M);

    // utterance index of reprs[j] is t - (reprs.size() - 1) + j
    const int n_hist = static_cast<int>(reprs.size()) - 1;
    std::vector<std::string> hist_speakers;
    for (int j = 0; j < n_hist; ++j) {
        const int utt = t - n_hist + j;
        hist_speakers.push_back(
            speaker_token(conv.utterances[static_cast<std::size_t>(utt)].speaker));
    }
    const std::string cur_speaker =
        speaker_token(conv.utterances[static_cast<std::size_t>(t)].speaker);

    Tensor g_t = reprs.back();
    std::vector<Tensor> history(reprs.begin(), reprs.end() - 1);

    if (cfg.variant == SpeakerVariant::SUnit) {
        // append one-hot speaker ids and project back to width d
        const int S = static_cast<int>(model.speakers.size());
        auto with_speaker = [&](const Tensor& g, const std::string& spk) {
            Tensor hot({S});
            const int idx = model.speaker_index(spk);
            if (idx >= 0) hot.at(idx) = 1.0f;
            Tensor row = stack_rows(tape, {concat(tape, {g, hot})});
            return take_row(tape, add_rows(tape, matmul(tape, row, model.p.sunit_w), model.p.sunit_b), 0);
        };
        for (int j = 0; j < n_hist; ++j)
            history[static_cast<std::size_t>(j)] =
                with_speaker(history[static_cast<std::size_t>(j)], hist_speakers[static_cast<std::size_t>(j)]);
        g_t = with_speaker(g_t, cur_speaker);
    }

    SpeakerPartition part;
    if (cfg.variant == SpeakerVariant::SpeakerAware) {
        part = partition(hist_speakers, cur_speaker);
    } else {
        // non-speaker-aware: both units see all history
        for (int j = 0; j < n_hist; ++j) {
            part.inner.push_back(j);
            part.inter.push_back(j);
        }
    }
    auto gather = [&history](const std::vector<int>& idx) {
        std::vector<Tensor> out;
        out.reserve(idx.size());
        for (int i : idx) out.push_back(history[static_cast<std::size_t>(i)]);
        return out;
    };
    Tensor o_inner = speaker_unit_forward(tape, g_t, gather(part.inner), model.p.inner,
                                          cfg.encoder.n_heads);
    Tensor o_inter = speaker_unit_forward(tape, g_t, gather(part.inter), model.p.inter,
                                          cfg.encoder.n_heads);
    Tensor z = fuse(tape, o_inner, o_inter);
    Tensor s = score_windows(tape, z, model.p.gate);

    std::vector<int> feasible;
    for (int i = 0; i <= std::min(t, M); ++i) feasible.push_back(i);

    ModelOutput out;
    if (cfg.gate.fixed_window >= 0) {
        const int w = std::min(cfg.gate.fixed_window, t);
        out.wd.q = Tensor({M + 1});
        out.wd.q.at(w) = 1.0f;
        out.wd.active = {w};
    } else {
        std::vector<float> mask;
        if (mode == GateMode::TopkSoft || mode == GateMode::TopkHard) {
            if (freezer != nullptr && freezer->replay) {
                if (freezer->cursor >= freezer->masks.size()) {
                    throw IntegrityError("mask replay ran past the recorded sequence");
                }
                mask = freezer->masks[freezer->cursor++];
            } else {
                mask = topk_mask(s, cfg.gate.K, feasible);
                if (freezer != nullptr) freezer->masks.push_back(mask);
            }
        } else {
            mask = detail::feasibility_mask(M + 1, feasible);
        }
        out.wd = normalize(tape, s, mask, mode, cfg.gate.K, feasible);
    }

    for (int i : out.wd.active) {
        const std::vector<int> tokens =
            build_field_input(conv, t, i, model.vocab, cfg.encoder.max_tokens);
        out.per_field.emplace(i, field_predict(tape, tokens, model.field(i), cfg.encoder,
                                               train_mode, rng));
        ++out.field_invocations;
    }
    out.p_hat = combine(tape, out.wd, out.per_field);
    return out;
}

} // namespace vwerc
