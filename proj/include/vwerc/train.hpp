#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <thread>
#include <vector>

#include "vwerc/checkpoint.hpp"
#include "vwerc/config.hpp"
#include "vwerc/log.hpp"
#include "vwerc/metrics.hpp"
#include "vwerc/model.hpp"

namespace vwerc {

// Sum of cross-entropy over every utterance position of every conversation
// in the batch.
inline Tensor batch_loss(Tape& tape, const Model& model, const std::vector<const Conversation*>& batch,
                         bool train_mode, Rng* rng, MaskFreezer* freezer = nullptr) {
    if (batch.empty()) throw DataError("batch_loss: empty batch");
    Tensor total;
    for (const Conversation* conv : batch) {
        for (int t = 0; t < static_cast<int>(conv->utterances.size()); ++t) {
            ModelOutput out = model_forward(tape, model, *conv, t, train_mode, rng, nullptr, freezer);
            Tensor term = cross_entropy(tape, out.p_hat,
                                        conv->utterances[static_cast<std::size_t>(t)].label);
            total = total.defined() ? add(tape, total, term) : term;
        }
    }
    return total;
}

inline std::int64_t count_utterances(const std::vector<Conversation>& corpus) {
    std::int64_t n = 0;
    for (const Conversation& c : corpus) n += static_cast<std::int64_t>(c.utterances.size());
    return n;
}

// Adam with global gradient-norm clipping. State vectors follow the
// for_each_param order.
class AdamOptimizer {
public:
    AdamOptimizer(Model& model, const OptimConfig& cfg) : cfg_(cfg) {
        for_each_param(model, [this](const std::string&, Tensor& t) {
            m_.emplace_back(t.values().size(), 0.0f);
            v_.emplace_back(t.values().size(), 0.0f);
        });
    }

    void zero_grad(Model& model) {
        for_each_param(model, [](const std::string&, Tensor& t) { t.zero_grad(); });
    }

    // Clips to cfg.clip_norm and applies one Adam update.
    void step(Model& model) {
        double sq = 0.0;
        for_each_param(model, [&sq](const std::string&, Tensor& t) {
            for (float g : t.grad()) sq += static_cast<double>(g) * g;
        });
        const double norm = std::sqrt(sq);
        const double scale = norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;

        ++step_count_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        std::size_t slot = 0;
        for_each_param(model, [&](const std::string&, Tensor& t) {
            std::vector<float>& m = m_[slot];
            std::vector<float>& v = v_[slot];
            ++slot;
            auto& vals = t.values();
            const auto& grads = t.grad();
            for (std::size_t i = 0; i < vals.size(); ++i) {
                const double g = static_cast<double>(grads[i]) * scale;
                const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                m[i] = static_cast<float>(mi);
                v[i] = static_cast<float>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                vals[i] = static_cast<float>(vals[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps));
            }
        });
    }

private:
    OptimConfig cfg_;
    std::vector<std::vector<float>> m_, v_;
    std::int64_t step_count_ = 0;
};

namespace detail {

struct EvalCounters {
    std::vector<std::vector<std::int64_t>> confusion;
    std::int64_t planted_total = 0;
    std::int64_t planted_argmax_correct = 0;
    std::int64_t planted_topk_hit = 0;
    std::vector<std::int64_t> window_histogram;

    EvalCounters(int num_classes, int num_windows)
        : confusion(static_cast<std::size_t>(num_classes),
                    std::vector<std::int64_t>(static_cast<std::size_t>(num_classes), 0)),
          window_histogram(static_cast<std::size_t>(num_windows), 0) {}

    void merge(const EvalCounters& other) {
        for (std::size_t g = 0; g < confusion.size(); ++g)
            for (std::size_t p = 0; p < confusion.size(); ++p)
                confusion[g][p] += other.confusion[g][p];
        planted_total += other.planted_total;
        planted_argmax_correct += other.planted_argmax_correct;
        planted_topk_hit += other.planted_topk_hit;
        for (std::size_t w = 0; w < window_histogram.size(); ++w)
            window_histogram[w] += other.window_histogram[w];
    }
};

inline void eval_conversation(const Model& model, const Conversation& conv,
                              const GateMode* mode_override, EvalCounters& counters) {
    for (int t = 0; t < static_cast<int>(conv.utterances.size()); ++t) {
        Tape tape(false);
        ModelOutput out = model_forward(tape, model, conv, t, false, nullptr, mode_override);
        const int pred = argmax_index(out.p_hat.values());
        const Utterance& u = conv.utterances[static_cast<std::size_t>(t)];
        ++counters.confusion[static_cast<std::size_t>(u.label)][static_cast<std::size_t>(pred)];

        const int selected = argmax_index(out.wd.q.values());
        ++counters.window_histogram[static_cast<std::size_t>(selected)];
        if (u.planted_window.has_value()) {
            ++counters.planted_total;
            if (selected == *u.planted_window) ++counters.planted_argmax_correct;
            for (int i : out.wd.active)
                if (i == *u.planted_window) {
                    ++counters.planted_topk_hit;
                    break;
                }
        }
    }
}

} // namespace detail

// Greedy argmax prediction over every utterance; window diagnostics are
// computed where planted metadata exists. Threads partition conversations and
// merge integer counters, so the report is independent of the thread count.
inline MetricsReport evaluate(const std::vector<Conversation>& corpus, const Model& model,
                              const GateMode* mode_override = nullptr, int threads = 1) {
    for (const Conversation& conv : corpus) {
        for (const Utterance& u : conv.utterances) {
            if (u.label < 0 || u.label >= model.cfg.num_classes) {
                throw DataError("evaluate: label index " + std::to_string(u.label) +
                                " outside the checkpoint's label map");
            }
        }
    }
    const int num_windows = model.cfg.gate.M + 1;
    detail::EvalCounters total(model.cfg.num_classes, num_windows);
    if (threads <= 1 || corpus.size() < 2) {
        for (const Conversation& conv : corpus)
            detail::eval_conversation(model, conv, mode_override, total);
    } else {
        const int n_threads = std::min<int>(threads, static_cast<int>(corpus.size()));
        std::vector<detail::EvalCounters> parts(
            static_cast<std::size_t>(n_threads),
            detail::EvalCounters(model.cfg.num_classes, num_windows));
        std::vector<std::thread> workers;
        for (int w = 0; w < n_threads; ++w) {
            workers.emplace_back([&, w]() {
                for (std::size_t i = static_cast<std::size_t>(w); i < corpus.size();
                     i += static_cast<std::size_t>(n_threads)) {
                    detail::eval_conversation(model, corpus[i], mode_override,
                                              parts[static_cast<std::size_t>(w)]);
                }
            });
        }
        for (std::thread& t : workers) t.join();
        for (const auto& part : parts) total.merge(part);
    }

    MetricsReport report = metrics_from_confusion(total.confusion, model.labels);
    report.window_histogram = total.window_histogram;
    if (total.planted_total > 0) {
        report.window_selection_accuracy = static_cast<double>(total.planted_argmax_correct) /
                                           static_cast<double>(total.planted_total);
        report.topk_hit_rate = static_cast<double>(total.planted_topk_hit) /
                               static_cast<double>(total.planted_total);
    }
    return report;
}

struct EpochLog {
    int epoch = 0;
    double train_loss_sum = 0.0;
    double train_loss_per_utterance = 0.0;
    double dev_macro_f1 = 0.0;
    double dev_micro_f1 = 0.0;
    double seconds = 0.0;
    bool improved = false;
};

inline nlohmann::json epoch_log_to_json(const EpochLog& e) {
    return {{"epoch", e.epoch},
            {"train_loss_sum", e.train_loss_sum},
            {"train_loss_per_utterance", e.train_loss_per_utterance},
            {"dev_macro_f1", e.dev_macro_f1},
            {"dev_micro_f1", e.dev_micro_f1},
            {"seconds", e.seconds},
            {"improved", e.improved}};
}

struct TrainResult {
    Model model; // parameters of the best dev epoch
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_dev_macro_f1 = 0.0;
};

// Early stopping: stop once the epochs since the last dev improvement exceed
// patience. patience = 0 stops right after the first non-improving epoch.
inline bool should_stop(int epochs_since_improvement, int patience) {
    return epochs_since_improvement > patience;
}

inline TrainResult train(const std::vector<Conversation>& train_corpus,
                         const std::vector<Conversation>& dev_corpus, const RunConfig& cfg,
                         const LabelMap& labels) {
    if (train_corpus.empty() || dev_corpus.empty()) {
        throw DataError("train: corpora must be nonempty");
    }
    Vocabulary vocab = build_vocab(train_corpus, cfg.model.min_count);
    TrainResult result;
    result.model = init_model(cfg.model_config(labels.num_labels()), std::move(vocab), labels,
                              collect_speakers(train_corpus), cfg.train.seed);
    Model& model = result.model;

    AdamOptimizer opt(model, cfg.train);
    Rng shuffle_rng(cfg.train.seed + 1);
    Rng dropout_rng(cfg.train.seed + 2);

    const std::int64_t n_utterances = count_utterances(train_corpus);
    std::vector<int> order(train_corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    std::vector<std::vector<float>> best_params;
    int epochs_since_improvement = 0;

    for (int epoch = 0; epoch < cfg.train.max_epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.train.batch_size)) {
            std::vector<const Conversation*> batch;
            for (std::size_t i = b;
                 i < std::min(order.size(), b + static_cast<std::size_t>(cfg.train.batch_size)); ++i) {
                batch.push_back(&train_corpus[static_cast<std::size_t>(order[i])]);
            }
            auto batch_diag = [&batch, epoch, b, &cfg]() {
                std::string ids;
                for (const Conversation* c : batch) ids += (ids.empty() ? "" : ", ") + c->id;
                return "epoch " + std::to_string(epoch) + ", batch " +
                       std::to_string(b / static_cast<std::size_t>(cfg.train.batch_size)) +
                       " (conversations: " + ids + ")";
            };
            opt.zero_grad(model);
            Tape tape;
            Tensor loss;
            try {
                loss = batch_loss(tape, model, batch, true, &dropout_rng);
            } catch (const NumericError& e) {
                throw DivergenceError("diverged in " + batch_diag() + ": " + e.what());
            }
            const float loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                throw DivergenceError("non-finite loss in " + batch_diag());
            }
            loss_sum += loss_value;
            tape.backward(loss);
            opt.step(model);
        }

        MetricsReport dev = evaluate(dev_corpus, model);
        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss_sum = loss_sum;
        entry.train_loss_per_utterance = loss_sum / static_cast<double>(n_utterances);
        entry.dev_macro_f1 = dev.macro_f1;
        entry.dev_micro_f1 = dev.micro_f1;
        entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        entry.improved = result.best_epoch < 0 || dev.macro_f1 > result.best_dev_macro_f1;
        result.log.push_back(entry);
        log_info("epoch " + std::to_string(epoch) + ": loss/utt " +
                 std::to_string(entry.train_loss_per_utterance) + ", dev macro-F1 " +
                 std::to_string(dev.macro_f1) + (entry.improved ? " *" : ""));

        if (entry.improved) {
            result.best_epoch = epoch;
            result.best_dev_macro_f1 = dev.macro_f1;
            best_params.clear();
            for_each_param(model, [&best_params](const std::string&, Tensor& t) {
                best_params.push_back(t.values());
            });
            epochs_since_improvement = 0;
        } else {
            ++epochs_since_improvement;
        }
        if (should_stop(epochs_since_improvement, cfg.train.patience)) break;
    }

    if (!best_params.empty()) {
        std::size_t slot = 0;
        for_each_param(model, [&best_params, &slot](const std::string&, Tensor& t) {
            t.values() = best_params[slot++];
        });
    }
    return result;
}

struct AblationRow {
    std::string variant;
    std::string mode;
    std::uint64_t seed = 0;
    double macro_f1 = 0.0;
    double micro_f1 = 0.0;
    double selection_accuracy = -1.0;
};

struct AblationCellSummary {
    std::string variant;
    std::string mode;
    double mean_macro_f1 = 0.0;
    double sd_macro_f1 = 0.0;
    double mean_micro_f1 = 0.0;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    std::vector<AblationCellSummary> cells;
};

// Trains every (speaker variant x gate mode) cell once per seed and reports
// test macro-F1 per run plus mean and standard deviation per cell.
inline AblationReport ablation_run(const std::vector<Conversation>& train_corpus,
                                   const std::vector<Conversation>& dev_corpus,
                                   const std::vector<Conversation>& test_corpus,
                                   const RunConfig& base_cfg, const LabelMap& labels) {
    AblationReport report;
    for (const auto& [variant, mode] : base_cfg.ablate.cells) {
        double sum = 0.0, sum_sq = 0.0, micro_sum = 0.0;
        for (std::uint64_t seed : base_cfg.ablate.seeds) {
            RunConfig cfg = base_cfg;
            cfg.model.variant = speaker_variant_from_string(variant);
            cfg.gate.mode = gate_mode_from_string(mode);
            cfg.train.seed = seed;
            log_info("ablation cell " + variant + " x " + mode + ", seed " + std::to_string(seed));
            TrainResult tr = train(train_corpus, dev_corpus, cfg, labels);
            MetricsReport test = evaluate(test_corpus, tr.model, nullptr, base_cfg.eval_threads);
            AblationRow row;
            row.variant = variant;
            row.mode = mode;
            row.seed = seed;
            row.macro_f1 = test.macro_f1;
            row.micro_f1 = test.micro_f1;
            if (test.window_selection_accuracy.has_value())
                row.selection_accuracy = *test.window_selection_accuracy;
            report.rows.push_back(row);
            sum += test.macro_f1;
            sum_sq += test.macro_f1 * test.macro_f1;
            micro_sum += test.micro_f1;
        }
        const double n = static_cast<double>(base_cfg.ablate.seeds.size());
        AblationCellSummary cell;
        cell.variant = variant;
        cell.mode = mode;
        cell.mean_macro_f1 = sum / n;
        cell.sd_macro_f1 = n > 1.0 ? std::sqrt(std::max(0.0, (sum_sq - sum * sum / n) / (n - 1.0))) : 0.0;
        cell.mean_micro_f1 = micro_sum / n;
        report.cells.push_back(cell);
    }
    return report;
}

inline nlohmann::json ablation_report_to_json(const AblationReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const AblationRow& r : report.rows) {
        rows.push_back({{"variant", r.variant},
                        {"mode", r.mode},
                        {"seed", r.seed},
                        {"macro_f1", r.macro_f1},
                        {"micro_f1", r.micro_f1},
                        {"selection_accuracy", r.selection_accuracy}});
    }
    nlohmann::json cells = nlohmann::json::array();
    for (const AblationCellSummary& c : report.cells) {
        cells.push_back({{"variant", c.variant},
                         {"mode", c.mode},
                         {"mean_macro_f1", c.mean_macro_f1},
                         {"sd_macro_f1", c.sd_macro_f1},
                         {"mean_micro_f1", c.mean_micro_f1}});
    }
    return {{"rows", std::move(rows)}, {"cells", std::move(cells)}};
}

} // namespace vwerc
