#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vwerc/common.hpp"
#include "vwerc/corpus.hpp"
#include "vwerc/rng.hpp"

namespace vwerc {

struct SynthConfig {
    int num_labels = 4;
    int num_speakers = 3;
    int max_window = 4;
    int conv_len_min = 10;
    int conv_len_max = 16;
    int n_train = 2000;
    int n_dev = 200;
    int n_test = 500;
    int filler_vocab_size = 50;
    std::uint64_t seed = 7;
    double window_skew = 0.0; // 0 = uniform; larger skews toward small windows

    void validate() const {
        if (num_labels < 2) throw ConfigError("synth: num_labels must be >= 2");
        if (num_speakers < 2) throw ConfigError("synth: num_speakers must be >= 2");
        if (max_window < 0) throw ConfigError("synth: max_window must be >= 0");
        if (conv_len_min < 1 || conv_len_max < conv_len_min) {
            throw ConfigError("synth: conversation length range is inconsistent");
        }
        if (n_train < 0 || n_dev < 0 || n_test < 0) throw ConfigError("synth: split sizes must be >= 0");
        if (filler_vocab_size < 1) throw ConfigError("synth: filler_vocab_size must be >= 1");
        if (window_skew < 0.0) throw ConfigError("synth: window_skew must be >= 0");
    }
};

struct SynthCorpus {
    std::vector<Conversation> train, dev, test;
    LabelMap labels;
};

namespace detail {

inline std::string cue_token(int label, const std::string& speaker) {
    return "cue_" + std::to_string(label) + "_" + speaker;
}

// Parses "cue_<label>_<speaker>"; returns false for non-cue tokens.
inline bool parse_cue(const std::string& token, int* label, std::string* speaker) {
    if (token.rfind("cue_", 0) != 0) return false;
    const std::size_t second = token.find('_', 4);
    if (second == std::string::npos) return false;
    try {
        *label = std::stoi(token.substr(4, second - 4));
    } catch (...) {
        return false;
    }
    *speaker = token.substr(second + 1);
    return true;
}

// Stratified window choice: among the feasible windows, pick the one whose
// per-conversation count is furthest below its target share (uniform by
// default, exp(-skew*w) tilted otherwise). Early positions can only realize
// small windows, so plain independent draws would overshoot them; balancing
// keeps the realized marginal close to the target.
inline int draw_window(Rng& rng, const std::vector<int>& allowed,
                       const std::vector<std::int64_t>& counts, double skew) {
    std::vector<int> best;
    double best_score = 0.0;
    for (int w : allowed) {
        const double target = skew <= 0.0 ? 1.0 : std::exp(-skew * w);
        const double score = (static_cast<double>(counts[static_cast<std::size_t>(w)]) + 1.0) / target;
        if (best.empty() || score < best_score - 1e-12) {
            best.assign(1, w);
            best_score = score;
        } else if (score < best_score + 1e-12) {
            best.push_back(w);
        }
    }
    return best[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(best.size()) - 1))];
}

// Every position t gets a planted window w_t and the cue token
// cue_<label>_<speaker> in utterance t - w_t. Placement maintains one global
// rule: for every position, the most recent cue naming its speaker within the
// feasible range is exactly its planted cue. Fresh cues therefore land
// strictly after the speaker's previous turn; reusing the speaker's newest
// existing cue (adopting its label) covers the larger windows. Distractor
// cues, added afterwards, name other speakers and are kept strictly older
// than every planted cue they could be confused with.
inline Conversation generate_conversation(const SynthConfig& cfg, Rng& rng, const std::string& id,
                                          const std::vector<std::string>& speaker_names,
                                          const std::vector<std::string>& filler_names) {
    const int len = rng.uniform_int(cfg.conv_len_min, cfg.conv_len_max);
    const int S = cfg.num_speakers;

    std::vector<int> speaker(len);
    for (int t = 0; t < len; ++t) {
        if (t == 0) {
            speaker[t] = rng.uniform_int(0, S - 1);
        } else {
            // no immediate self-replies; pick uniformly among the others
            const int step = rng.uniform_int(1, S - 1);
            speaker[t] = (speaker[t - 1] + step) % S;
        }
    }

    std::vector<int> label(len), window(len);
    std::vector<std::map<std::string, int>> cues(static_cast<std::size_t>(len));
    std::vector<int> prev_turn(S, -1), last_cue_pos(S, -1), last_cue_label(S, -1);
    std::vector<std::int64_t> counts(static_cast<std::size_t>(cfg.max_window) + 1, 0);

    for (int t = 0; t < len; ++t) {
        const int s = speaker[t];
        const std::string& sname = speaker_names[static_cast<std::size_t>(s)];
        const int wmax = std::min(t, cfg.max_window);
        const int fresh_cap = std::min(wmax, prev_turn[s] < 0 ? t : t - prev_turn[s] - 1);
        const int w_cur = last_cue_pos[s] < 0 ? -1 : t - last_cue_pos[s];
        const bool can_reuse = w_cur >= 0 && w_cur <= wmax;

        std::vector<int> allowed;
        for (int w = 0; w <= fresh_cap; ++w) allowed.push_back(w);
        if (can_reuse) allowed.push_back(w_cur);
        const int w = draw_window(rng, allowed, counts, cfg.window_skew);
        ++counts[static_cast<std::size_t>(w)];
        const bool reuse = can_reuse && w == w_cur;

        if (reuse) {
            label[t] = last_cue_label[s];
        } else {
            label[t] = rng.uniform_int(0, cfg.num_labels - 1);
            cues[static_cast<std::size_t>(t - w)][sname] = label[t];
            last_cue_pos[s] = t - w;
            last_cue_label[s] = label[t];
        }
        window[t] = w;
        prev_turn[s] = t;
    }

    // Distractors: other-speaker, other-label cues in the remaining in-range
    // utterances, skipped whenever they would shadow some position's planted
    // cue or double up a speaker within one utterance. Among the admissible
    // speakers, those with an upcoming turn nearby are preferred: their cue
    // is then a stale-but-visible trap inside that turn's oversized windows,
    // which is what makes over-long context actively misleading.
    for (int t = 0; t < len; ++t) {
        const int lo = t - std::min(t, cfg.max_window);
        for (int j = lo; j <= t; ++j) {
            if (j == t - window[t]) continue;
            std::vector<int> valid, traps;
            for (int sigma = 0; sigma < S; ++sigma) {
                if (sigma == speaker[t]) continue;
                const std::string& sig_name = speaker_names[static_cast<std::size_t>(sigma)];
                if (cues[static_cast<std::size_t>(j)].count(sig_name)) continue;
                bool shadows = false;
                bool visible_to_sigma = false;
                for (int t2 = j; t2 <= std::min(len - 1, j + cfg.max_window); ++t2) {
                    if (speaker[t2] != sigma) continue;
                    if (j >= t2 - window[t2]) {
                        shadows = true;
                        break;
                    }
                    visible_to_sigma = true;
                }
                if (shadows) continue;
                valid.push_back(sigma);
                if (visible_to_sigma) traps.push_back(sigma);
            }
            const std::vector<int>& pool = traps.empty() ? valid : traps;
            if (pool.empty()) continue;
            const int sigma = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
            int dl = rng.uniform_int(0, cfg.num_labels - 2);
            if (dl >= label[t]) ++dl; // any label other than the current one
            cues[static_cast<std::size_t>(j)][speaker_names[static_cast<std::size_t>(sigma)]] = dl;
        }
    }

    Conversation conv;
    conv.id = id;
    for (int t = 0; t < len; ++t) {
        std::vector<std::string> tokens;
        for (const auto& [sname, l] : cues[static_cast<std::size_t>(t)]) tokens.push_back(cue_token(l, sname));
        const int n_fill = rng.uniform_int(1, 3);
        for (int i = 0; i < n_fill; ++i)
            tokens.push_back(filler_names[static_cast<std::size_t>(rng.uniform_int(0, cfg.filler_vocab_size - 1))]);
        rng.shuffle(tokens);
        std::string text;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (i > 0) text += ' ';
            text += tokens[i];
        }
        Utterance u;
        u.speaker = speaker_names[static_cast<std::size_t>(speaker[t])];
        u.text = text;
        u.label = label[t];
        u.planted_window = window[t];
        conv.utterances.push_back(std::move(u));
    }
    return conv;
}

} // namespace detail

inline SynthCorpus generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);

    std::vector<std::string> labels;
    for (int i = 0; i < cfg.num_labels; ++i) labels.push_back("emo" + std::to_string(i));
    std::vector<std::string> speakers;
    for (int i = 0; i < cfg.num_speakers; ++i) speakers.push_back("spk" + std::to_string(i));
    std::vector<std::string> fillers;
    for (int i = 0; i < cfg.filler_vocab_size; ++i) fillers.push_back("f" + std::to_string(i));

    SynthCorpus out;
    out.labels = LabelMap(labels);
    auto make_split = [&](const char* name, int count, std::vector<Conversation>& dst) {
        for (int i = 0; i < count; ++i) {
            char id[64];
            std::snprintf(id, sizeof(id), "%s_%05d", name, i);
            dst.push_back(detail::generate_conversation(cfg, rng, id, speakers, fillers));
        }
    };
    make_split("train", cfg.n_train, out.train);
    make_split("dev", cfg.n_dev, out.dev);
    make_split("test", cfg.n_test, out.test);
    return out;
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
    SynthConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "num_labels") cfg.num_labels = value.get<int>();
        else if (key == "num_speakers") cfg.num_speakers = value.get<int>();
        else if (key == "max_window") cfg.max_window = value.get<int>();
        else if (key == "conv_len_min") cfg.conv_len_min = value.get<int>();
        else if (key == "conv_len_max") cfg.conv_len_max = value.get<int>();
        else if (key == "n_train") cfg.n_train = value.get<int>();
        else if (key == "n_dev") cfg.n_dev = value.get<int>();
        else if (key == "n_test") cfg.n_test = value.get<int>();
        else if (key == "filler_vocab_size") cfg.filler_vocab_size = value.get<int>();
        else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
        else if (key == "window_skew") cfg.window_skew = value.get<double>();
        else throw ConfigError("synth: unknown key \"" + key + "\"");
    }
    cfg.validate();
    return cfg;
}

inline nlohmann::json synth_config_to_json(const SynthConfig& cfg) {
    return nlohmann::json{
        {"num_labels", cfg.num_labels},
        {"num_speakers", cfg.num_speakers},
        {"max_window", cfg.max_window},
        {"conv_len_min", cfg.conv_len_min},
        {"conv_len_max", cfg.conv_len_max},
        {"n_train", cfg.n_train},
        {"n_dev", cfg.n_dev},
        {"n_test", cfg.n_test},
        {"filler_vocab_size", cfg.filler_vocab_size},
        {"seed", cfg.seed},
        {"window_skew", cfg.window_skew},
    };
}

} // namespace vwerc
