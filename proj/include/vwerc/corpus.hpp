#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "vwerc/common.hpp"

namespace vwerc {

struct Utterance {
    std::string speaker;
    std::string text;
    int label = 0;
    std::optional<int> planted_window; // synthetic gold metadata

    bool operator==(const Utterance&) const = default;
};

struct Conversation {
    std::string id;
    std::vector<Utterance> utterances; // temporal order is list order

    bool operator==(const Conversation&) const = default;
};

class LabelMap {
public:
    LabelMap() = default;
    explicit LabelMap(std::vector<std::string> names) : names_(std::move(names)) {}

    int index_of(const std::string& name) const {
        for (std::size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return static_cast<int>(i);
        throw DataError("unknown label \"" + name + "\"");
    }

    const std::string& name(int index) const {
        if (index < 0 || index >= static_cast<int>(names_.size())) {
            throw DataError("label index " + std::to_string(index) + " out of range");
        }
        return names_[static_cast<std::size_t>(index)];
    }

    int num_labels() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& names() const { return names_; }

    bool operator==(const LabelMap&) const = default;

private:
    std::vector<std::string> names_;
};

// Lowercase, split on whitespace, and split punctuation characters into
// standalone tokens. Underscore counts as a word character so that synthetic
// cue tokens stay whole.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&]() {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (unsigned char raw : text) {
        const char c = static_cast<char>(std::tolower(raw));
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else if (std::ispunct(static_cast<unsigned char>(c)) && c != '_') {
            flush();
            out.emplace_back(1, c);
        } else {
            cur += c;
        }
    }
    flush();
    return out;
}

// Speaker names are treated as single tokens, lowercased as a whole.
inline std::string speaker_token(const std::string& speaker) {
    std::string t = speaker;
    std::transform(t.begin(), t.end(), t.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return t;
}

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kCls = 1;
    static constexpr int kSep = 2;
    static constexpr int kUnk = 3;

    Vocabulary() {
        for (const char* t : {"[PAD]", "[CLS]", "[SEP]", "[UNK]"}) add(t);
    }

    explicit Vocabulary(const std::vector<std::string>& tokens) {
        if (tokens.size() < 4 || tokens[0] != "[PAD]" || tokens[1] != "[CLS]" ||
            tokens[2] != "[SEP]" || tokens[3] != "[UNK]") {
            throw DataError("vocabulary must start with [PAD] [CLS] [SEP] [UNK]");
        }
        for (const std::string& t : tokens) add(t);
    }

    int add(const std::string& token) {
        auto it = index_.find(token);
        if (it != index_.end()) return it->second;
        const int id = static_cast<int>(tokens_.size());
        tokens_.push_back(token);
        index_.emplace(token, id);
        return id;
    }

    int lookup(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& token) const { return index_.count(token) > 0; }

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::string& token(int id) const { return tokens_[static_cast<std::size_t>(id)]; }
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// Frequency-filtered vocabulary; speaker names are counted like any other
// token (they appear once per utterance in the encoded stream) but are kept
// even below min_count. Index assignment is (frequency desc, token asc).
inline Vocabulary build_vocab(const std::vector<Conversation>& corpus, int min_count) {
    if (corpus.empty()) throw DataError("build_vocab: empty corpus");
    std::unordered_map<std::string, std::int64_t> counts;
    std::unordered_map<std::string, bool> is_speaker;
    for (const Conversation& conv : corpus) {
        for (const Utterance& u : conv.utterances) {
            const std::string spk = speaker_token(u.speaker);
            ++counts[spk];
            is_speaker[spk] = true;
            for (const std::string& tok : tokenize(u.text)) ++counts[tok];
        }
    }
    std::vector<std::pair<std::string, std::int64_t>> kept;
    for (const auto& [tok, count] : counts) {
        if (count >= min_count || is_speaker[tok]) kept.emplace_back(tok, count);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary vocab;
    for (const auto& [tok, count] : kept) vocab.add(tok);
    return vocab;
}

struct EncodedSequence {
    std::vector<int> ids;
    std::vector<int> offsets;  // index of the first token (the speaker) of each kept utterance
    int first_utterance = 0;   // conversation index of the first kept utterance
};

namespace detail {

inline std::vector<int> utterance_ids(const Utterance& u, const Vocabulary& vocab) {
    std::vector<int> ids;
    ids.push_back(vocab.lookup(speaker_token(u.speaker)));
    ids.push_back(Vocabulary::kSep);
    for (const std::string& tok : tokenize(u.text)) ids.push_back(vocab.lookup(tok));
    return ids;
}

} // namespace detail

// Concatenation of u_1 .. u_t (inclusive), each utterance rendered as
// speaker + [SEP] + text tokens. When the result exceeds max_tokens, whole
// oldest utterances are dropped first; a lone overlong current utterance is
// tail-truncated as a last resort.
inline EncodedSequence encode_input_sequence(const Conversation& conv, int t,
                                             const Vocabulary& vocab, int max_tokens) {
    if (t < 0 || t >= static_cast<int>(conv.utterances.size())) {
        throw DataError("encode_input_sequence: position " + std::to_string(t) +
                        " out of range for conversation of length " +
                        std::to_string(conv.utterances.size()));
    }
    std::vector<std::vector<int>> per_utt;
    per_utt.reserve(static_cast<std::size_t>(t) + 1);
    std::size_t total = 0;
    for (int i = 0; i <= t; ++i) {
        per_utt.push_back(detail::utterance_ids(conv.utterances[static_cast<std::size_t>(i)], vocab));
        total += per_utt.back().size();
    }
    int start = 0;
    while (total > static_cast<std::size_t>(max_tokens) && start < t) {
        total -= per_utt[static_cast<std::size_t>(start)].size();
        ++start;
    }
    EncodedSequence out;
    out.first_utterance = start;
    for (int i = start; i <= t; ++i) {
        out.offsets.push_back(static_cast<int>(out.ids.size()));
        const auto& u = per_utt[static_cast<std::size_t>(i)];
        out.ids.insert(out.ids.end(), u.begin(), u.end());
    }
    if (static_cast<int>(out.ids.size()) > max_tokens) out.ids.resize(static_cast<std::size_t>(max_tokens));
    return out;
}

inline nlohmann::json conversation_to_json(const Conversation& conv, const LabelMap& labels) {
    nlohmann::json utts = nlohmann::json::array();
    for (const Utterance& u : conv.utterances) {
        nlohmann::json j{{"speaker", u.speaker}, {"text", u.text}, {"label", labels.name(u.label)}};
        if (u.planted_window.has_value()) j["planted_window"] = *u.planted_window;
        else j["planted_window"] = nullptr;
        utts.push_back(std::move(j));
    }
    return nlohmann::json{{"id", conv.id}, {"utterances", std::move(utts)}};
}

inline Conversation conversation_from_json(const nlohmann::json& j, const LabelMap& labels) {
    Conversation conv;
    conv.id = j.at("id").get<std::string>();
    for (const nlohmann::json& ju : j.at("utterances")) {
        Utterance u;
        u.speaker = ju.at("speaker").get<std::string>();
        u.text = ju.at("text").get<std::string>();
        u.label = labels.index_of(ju.at("label").get<std::string>());
        if (ju.contains("planted_window") && !ju.at("planted_window").is_null()) {
            u.planted_window = ju.at("planted_window").get<int>();
        }
        conv.utterances.push_back(std::move(u));
    }
    if (conv.utterances.empty()) throw DataError("conversation \"" + conv.id + "\" has no utterances");
    return conv;
}

// JSONL, one conversation per line.
inline std::vector<Conversation> load_corpus(const std::string& path, const LabelMap& labels) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file " + path);
    std::vector<Conversation> corpus;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw DataError(path + ":" + std::to_string(line_no) + ": malformed JSON line");
        }
        try {
            corpus.push_back(conversation_from_json(j, labels));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return corpus;
}

inline void save_corpus(const std::vector<Conversation>& corpus, const LabelMap& labels,
                        const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write corpus file " + path);
    for (const Conversation& conv : corpus) out << conversation_to_json(conv, labels).dump() << "\n";
}

inline LabelMap load_label_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open label map " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("labels") || !j["labels"].is_array()) {
        throw DataError("malformed label map " + path);
    }
    return LabelMap(j["labels"].get<std::vector<std::string>>());
}

inline void save_label_map(const LabelMap& labels, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write label map " + path);
    out << nlohmann::json{{"labels", labels.names()}}.dump() << "\n";
}

} // namespace vwerc
