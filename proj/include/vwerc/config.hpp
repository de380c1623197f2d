#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vwerc/common.hpp"
#include "vwerc/model.hpp"
#include "vwerc/synth.hpp"

namespace vwerc {

struct OptimConfig {
    double lr = 1e-3;
    int batch_size = 8; // conversations per batch
    int max_epochs = 10;
    int patience = 3;
    double clip_norm = 1.0;
    std::uint64_t seed = 42;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        if (lr <= 0.0) throw ConfigError("train: lr must be positive");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
        if (patience < 0) throw ConfigError("train: patience must be >= 0");
        if (clip_norm <= 0.0) throw ConfigError("train: clip_norm must be positive");
        if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0) {
            throw ConfigError("train: Adam betas must lie in (0, 1)");
        }
        if (adam_eps <= 0.0) throw ConfigError("train: adam_eps must be positive");
    }
};

struct ModelOptions {
    SpeakerVariant variant = SpeakerVariant::SpeakerAware;
    bool share_field_encoders = false;
    int min_count = 1; // vocabulary frequency cutoff

    void validate() const {
        if (min_count < 1) throw ConfigError("model: min_count must be >= 1");
    }
};

struct AblateConfig {
    // (speaker variant, gate mode) cells; trained once per seed
    std::vector<std::pair<std::string, std::string>> cells = {
        {"speaker_aware", "topk_soft"},
        {"speaker_aware", "topk_hard"},
        {"speaker_aware", "all_hard"},
        {"n_unit", "topk_soft"},
    };
    std::vector<std::uint64_t> seeds = {1, 2, 3};

    void validate() const {
        if (cells.empty()) throw ConfigError("ablate: empty cell list");
        if (seeds.empty()) throw ConfigError("ablate: empty seed list");
        for (const auto& [variant, mode] : cells) {
            speaker_variant_from_string(variant);
            gate_mode_from_string(mode);
        }
    }
};

// The one configuration document: synthetic-data, encoder, gate, model and
// optimizer settings merged, JSON on disk, flags may override.
struct RunConfig {
    SynthConfig synth;
    EncoderConfig encoder;
    GateConfig gate;
    ModelOptions model;
    OptimConfig train;
    AblateConfig ablate;
    int eval_threads = 1;

    void validate() {
        synth.validate();
        encoder.validate();
        gate.validate();
        model.validate();
        train.validate();
        ablate.validate();
        if (eval_threads < 1) throw ConfigError("eval_threads must be >= 1");
        if (synth.max_window > gate.M) {
            throw ConfigError("synth.max_window " + std::to_string(synth.max_window) +
                              " exceeds gate M " + std::to_string(gate.M) +
                              "; planted windows would be unreachable");
        }
    }

    ModelConfig model_config(int num_classes) const {
        ModelConfig mc;
        mc.encoder = encoder;
        mc.gate = gate;
        mc.variant = model.variant;
        mc.share_field_encoders = model.share_field_encoders;
        mc.num_classes = num_classes;
        return mc;
    }
};

namespace detail {

template <typename T>
inline void read_key(const nlohmann::json& j, const std::string& key, T& out) {
    out = j.at(key).get<T>();
}

inline void reject_unknown(const nlohmann::json& j, const std::string& section,
                           const std::vector<std::string>& known) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const std::string& k : known)
            if (k == key) ok = true;
        if (!ok) throw ConfigError(section + ": unknown key \"" + key + "\"");
    }
}

} // namespace detail

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, "encoder", {"d", "n_layers", "n_heads", "d_ff", "max_tokens", "dropout"});
    EncoderConfig cfg;
    if (j.contains("d")) cfg.d = j["d"].get<int>();
    if (j.contains("n_layers")) cfg.n_layers = j["n_layers"].get<int>();
    if (j.contains("n_heads")) cfg.n_heads = j["n_heads"].get<int>();
    if (j.contains("d_ff")) cfg.d_ff = j["d_ff"].get<int>();
    if (j.contains("max_tokens")) cfg.max_tokens = j["max_tokens"].get<int>();
    if (j.contains("dropout")) cfg.dropout = j["dropout"].get<float>();
    return cfg;
}

inline nlohmann::json encoder_config_to_json(const EncoderConfig& cfg) {
    return {{"d", cfg.d},          {"n_layers", cfg.n_layers},     {"n_heads", cfg.n_heads},
            {"d_ff", cfg.d_ff},    {"max_tokens", cfg.max_tokens}, {"dropout", cfg.dropout}};
}

inline GateConfig gate_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, "gate", {"M", "K", "d_h", "fixed_window", "mode"});
    GateConfig cfg;
    if (j.contains("M")) cfg.M = j["M"].get<int>();
    if (j.contains("K")) cfg.K = j["K"].get<int>();
    if (j.contains("d_h")) cfg.d_h = j["d_h"].get<int>();
    if (j.contains("fixed_window")) cfg.fixed_window = j["fixed_window"].get<int>();
    if (j.contains("mode")) cfg.mode = gate_mode_from_string(j["mode"].get<std::string>());
    return cfg;
}

inline nlohmann::json gate_config_to_json(const GateConfig& cfg) {
    return {{"M", cfg.M},
            {"K", cfg.K},
            {"d_h", cfg.d_h},
            {"fixed_window", cfg.fixed_window},
            {"mode", to_string(cfg.mode)}};
}

inline ModelOptions model_options_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, "model", {"speaker_variant", "share_field_encoders", "min_count"});
    ModelOptions opt;
    if (j.contains("speaker_variant"))
        opt.variant = speaker_variant_from_string(j["speaker_variant"].get<std::string>());
    if (j.contains("share_field_encoders"))
        opt.share_field_encoders = j["share_field_encoders"].get<bool>();
    if (j.contains("min_count")) opt.min_count = j["min_count"].get<int>();
    return opt;
}

inline nlohmann::json model_options_to_json(const ModelOptions& opt) {
    return {{"speaker_variant", to_string(opt.variant)},
            {"share_field_encoders", opt.share_field_encoders},
            {"min_count", opt.min_count}};
}

inline OptimConfig optim_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, "train",
                           {"lr", "batch_size", "max_epochs", "patience", "clip_norm", "seed",
                            "beta1", "beta2", "adam_eps"});
    OptimConfig cfg;
    if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
    if (j.contains("max_epochs")) cfg.max_epochs = j["max_epochs"].get<int>();
    if (j.contains("patience")) cfg.patience = j["patience"].get<int>();
    if (j.contains("clip_norm")) cfg.clip_norm = j["clip_norm"].get<double>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("beta1")) cfg.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) cfg.beta2 = j["beta2"].get<double>();
    if (j.contains("adam_eps")) cfg.adam_eps = j["adam_eps"].get<double>();
    return cfg;
}

inline nlohmann::json optim_config_to_json(const OptimConfig& cfg) {
    return {{"lr", cfg.lr},
            {"batch_size", cfg.batch_size},
            {"max_epochs", cfg.max_epochs},
            {"patience", cfg.patience},
            {"clip_norm", cfg.clip_norm},
            {"seed", cfg.seed},
            {"beta1", cfg.beta1},
            {"beta2", cfg.beta2},
            {"adam_eps", cfg.adam_eps}};
}

inline AblateConfig ablate_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, "ablate", {"cells", "seeds"});
    AblateConfig cfg;
    if (j.contains("cells")) {
        cfg.cells.clear();
        for (const nlohmann::json& cell : j["cells"]) {
            if (!cell.is_array() || cell.size() != 2) {
                throw ConfigError("ablate: each cell must be [speaker_variant, gate_mode]");
            }
            cfg.cells.emplace_back(cell[0].get<std::string>(), cell[1].get<std::string>());
        }
    }
    if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    return cfg;
}

inline nlohmann::json ablate_config_to_json(const AblateConfig& cfg) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& [variant, mode] : cfg.cells) cells.push_back({variant, mode});
    return {{"cells", std::move(cells)}, {"seeds", cfg.seeds}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, "config",
                           {"synth", "encoder", "gate", "model", "train", "ablate", "eval_threads"});
    RunConfig cfg;
    if (j.contains("synth")) cfg.synth = synth_config_from_json(j["synth"]);
    if (j.contains("encoder")) cfg.encoder = encoder_config_from_json(j["encoder"]);
    if (j.contains("gate")) cfg.gate = gate_config_from_json(j["gate"]);
    if (j.contains("model")) cfg.model = model_options_from_json(j["model"]);
    if (j.contains("train")) cfg.train = optim_config_from_json(j["train"]);
    if (j.contains("ablate")) cfg.ablate = ablate_config_from_json(j["ablate"]);
    if (j.contains("eval_threads")) cfg.eval_threads = j["eval_threads"].get<int>();
    cfg.validate();
    return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    return {{"synth", synth_config_to_json(cfg.synth)},
            {"encoder", encoder_config_to_json(cfg.encoder)},
            {"gate", gate_config_to_json(cfg.gate)},
            {"model", model_options_to_json(cfg.model)},
            {"train", optim_config_to_json(cfg.train)},
            {"ablate", ablate_config_to_json(cfg.ablate)},
            {"eval_threads", cfg.eval_threads}};
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw DataError("malformed JSON in config file " + path);
    return run_config_from_json(j);
}

} // namespace vwerc
