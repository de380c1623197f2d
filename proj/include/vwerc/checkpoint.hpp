#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vwerc/config.hpp"
#include "vwerc/model.hpp"

namespace vwerc {

// Checkpoint layout: magic "VWERC1", little-endian uint32 manifest length,
// UTF-8 JSON manifest, then the raw little-endian float32 payloads
// concatenated in manifest order. Saving a loaded checkpoint reproduces the
// file byte for byte.
constexpr char kCheckpointMagic[6] = {'V', 'W', 'E', 'R', 'C', '1'};

namespace detail {

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

inline std::uint32_t read_u32_le(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IntegrityError("checkpoint: truncated length prefix");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32_le(std::ostream& out, float v) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                 static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
    out.write(b, 4);
}

inline float read_f32_le(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IntegrityError("checkpoint: truncated tensor payload");
    const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                               (static_cast<std::uint32_t>(b[1]) << 8) |
                               (static_cast<std::uint32_t>(b[2]) << 16) |
                               (static_cast<std::uint32_t>(b[3]) << 24);
    return std::bit_cast<float>(bits);
}

} // namespace detail

inline void save_checkpoint(Model& model, const nlohmann::json& run_config, const std::string& path) {
    nlohmann::json tensors = nlohmann::json::array();
    std::vector<Tensor*> order;
    for_each_param(model, [&tensors, &order](const std::string& name, Tensor& t) {
        tensors.push_back({{"name", name}, {"shape", t.shape()}});
        order.push_back(&t);
    });
    const nlohmann::json manifest{{"config", run_config},
                                  {"labels", model.labels.names()},
                                  {"speakers", model.speakers},
                                  {"tensors", std::move(tensors)},
                                  {"vocab", model.vocab.tokens()}};
    const std::string manifest_str = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_u32_le(out, static_cast<std::uint32_t>(manifest_str.size()));
    out.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
    for (const Tensor* t : order)
        for (float v : t->values()) detail::write_f32_le(out, v);
    if (!out) throw DataError("failed writing checkpoint " + path);
}

struct Checkpoint {
    Model model;
    nlohmann::json run_config;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);

    char magic[6];
    in.read(magic, 6);
    if (!in || std::memcmp(magic, kCheckpointMagic, 6) != 0) {
        throw IntegrityError("checkpoint: bad magic bytes in " + path);
    }
    const std::uint32_t manifest_len = detail::read_u32_le(in);
    std::string manifest_str(manifest_len, '\0');
    in.read(manifest_str.data(), manifest_len);
    if (!in) throw IntegrityError("checkpoint: truncated manifest");
    nlohmann::json manifest = nlohmann::json::parse(manifest_str, nullptr, false);
    if (manifest.is_discarded()) throw IntegrityError("checkpoint: manifest is not valid JSON");

    for (const char* key : {"config", "labels", "speakers", "tensors", "vocab"}) {
        if (!manifest.contains(key)) {
            throw IntegrityError(std::string("checkpoint: manifest missing \"") + key + "\"");
        }
    }

    RunConfig rc = run_config_from_json(manifest["config"]);
    LabelMap labels(manifest["labels"].get<std::vector<std::string>>());
    Vocabulary vocab(manifest["vocab"].get<std::vector<std::string>>());
    std::vector<std::string> speakers = manifest["speakers"].get<std::vector<std::string>>();

    Checkpoint ckpt{init_model(rc.model_config(labels.num_labels()), std::move(vocab), labels,
                               std::move(speakers), /*seed=*/0),
                    manifest["config"]};

    const nlohmann::json& tensors = manifest["tensors"];
    std::size_t index = 0;
    for_each_param(ckpt.model, [&](const std::string& name, Tensor& t) {
        if (index >= tensors.size()) {
            throw IntegrityError("checkpoint: manifest lists too few tensors");
        }
        const nlohmann::json& entry = tensors[index++];
        if (entry.at("name").get<std::string>() != name) {
            throw IntegrityError("checkpoint: tensor order mismatch at \"" + name + "\"");
        }
        if (entry.at("shape").get<Shape>() != t.shape()) {
            throw IntegrityError("checkpoint: shape mismatch for \"" + name + "\"");
        }
        for (float& v : t.values()) v = detail::read_f32_le(in);
    });
    if (index != tensors.size()) {
        throw IntegrityError("checkpoint: manifest lists extra tensors");
    }
    char extra;
    if (in.read(&extra, 1)) {
        throw IntegrityError("checkpoint: trailing bytes after payload");
    }
    return ckpt;
}

} // namespace vwerc
