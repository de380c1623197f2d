#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vwerc/common.hpp"
#include "vwerc/corpus.hpp"

namespace vwerc {

struct ClassMetrics {
    std::string label;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::int64_t support = 0;
    std::int64_t predicted = 0;
};

struct MetricsReport {
    double micro_f1 = 0.0;
    double macro_f1 = 0.0;
    double weighted_f1 = 0.0;
    std::vector<ClassMetrics> per_class;
    std::vector<std::vector<std::int64_t>> confusion; // [gold][pred]
    // window diagnostics; absent when the corpus has no planted metadata
    std::optional<double> window_selection_accuracy;
    std::optional<double> topk_hit_rate;
    std::vector<std::int64_t> window_histogram; // argmax-selected window counts
};

// Derives precision/recall/F1 from a [gold][pred] confusion matrix. With one
// prediction per instance, micro-F1 equals plain accuracy. Macro-F1 averages
// classes that appear in the gold labels or the predictions; classes with
// zero support and zero predictions are excluded.
inline MetricsReport metrics_from_confusion(const std::vector<std::vector<std::int64_t>>& confusion,
                                            const LabelMap& labels) {
    const int C = labels.num_labels();
    if (static_cast<int>(confusion.size()) != C) {
        throw DataError("metrics: confusion matrix size mismatch");
    }
    MetricsReport r;
    r.confusion = confusion;
    std::int64_t total = 0, correct = 0;
    for (int g = 0; g < C; ++g) {
        for (int p = 0; p < C; ++p) {
            total += confusion[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)];
        }
        correct += confusion[static_cast<std::size_t>(g)][static_cast<std::size_t>(g)];
    }
    double macro_sum = 0.0;
    std::int64_t macro_n = 0;
    double weighted_sum = 0.0;
    for (int c = 0; c < C; ++c) {
        ClassMetrics cm;
        cm.label = labels.name(c);
        std::int64_t tp = confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
        for (int p = 0; p < C; ++p) cm.support += confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(p)];
        for (int g = 0; g < C; ++g) cm.predicted += confusion[static_cast<std::size_t>(g)][static_cast<std::size_t>(c)];
        cm.precision = cm.predicted > 0 ? static_cast<double>(tp) / static_cast<double>(cm.predicted) : 0.0;
        cm.recall = cm.support > 0 ? static_cast<double>(tp) / static_cast<double>(cm.support) : 0.0;
        cm.f1 = (cm.precision + cm.recall) > 0.0
                    ? 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall)
                    : 0.0;
        if (cm.support > 0 || cm.predicted > 0) {
            macro_sum += cm.f1;
            ++macro_n;
        }
        weighted_sum += cm.f1 * static_cast<double>(cm.support);
        r.per_class.push_back(std::move(cm));
    }
    r.micro_f1 = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    r.macro_f1 = macro_n > 0 ? macro_sum / static_cast<double>(macro_n) : 0.0;
    r.weighted_f1 = total > 0 ? weighted_sum / static_cast<double>(total) : 0.0;
    return r;
}

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
    nlohmann::json per_class = nlohmann::json::array();
    for (const ClassMetrics& c : r.per_class) {
        per_class.push_back({{"label", c.label},
                             {"precision", c.precision},
                             {"recall", c.recall},
                             {"f1", c.f1},
                             {"support", c.support}});
    }
    nlohmann::json j{{"micro_f1", r.micro_f1},
                     {"macro_f1", r.macro_f1},
                     {"weighted_f1", r.weighted_f1},
                     {"per_class", std::move(per_class)},
                     {"confusion", r.confusion},
                     {"window_histogram", r.window_histogram}};
    j["window_selection_accuracy"] =
        r.window_selection_accuracy.has_value() ? nlohmann::json(*r.window_selection_accuracy)
                                                : nlohmann::json(nullptr);
    j["topk_hit_rate"] =
        r.topk_hit_rate.has_value() ? nlohmann::json(*r.topk_hit_rate) : nlohmann::json(nullptr);
    return j;
}

} // namespace vwerc
