// vwerc: synthetic-benchmark generation, training, evaluation, ablation and
// inspection for the variable-context-window conversational emotion
// classifier.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vwerc/checkpoint.hpp"
#include "vwerc/config.hpp"
#include "vwerc/log.hpp"
#include "vwerc/synth.hpp"
#include "vwerc/train.hpp"

namespace {

using namespace vwerc;

struct SharedArgs {
    std::string config_path;
    std::string data;
    std::string out;
    std::string ckpt;
    std::string report;
    std::string mode;
    std::int64_t seed = -1;
    int eval_threads = 0;
    int n_samples = 5;
};

RunConfig load_config_or_default(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return load_run_config(path);
}

std::vector<Conversation> load_split(const std::filesystem::path& dir, const char* name,
                                     const LabelMap& labels) {
    const auto path = dir / (std::string(name) + ".jsonl");
    if (!std::filesystem::exists(path)) throw DataError("missing corpus file " + path.string());
    return load_corpus(path.string(), labels);
}

void print_corpus_stats(const char* split, const std::vector<Conversation>& corpus,
                        const LabelMap& labels, int max_window) {
    std::int64_t utts = 0;
    std::vector<std::int64_t> label_counts(static_cast<std::size_t>(labels.num_labels()), 0);
    std::vector<std::int64_t> window_counts(static_cast<std::size_t>(max_window) + 1, 0);
    for (const Conversation& conv : corpus) {
        for (const Utterance& u : conv.utterances) {
            ++utts;
            ++label_counts[static_cast<std::size_t>(u.label)];
            if (u.planted_window.has_value()) ++window_counts[static_cast<std::size_t>(*u.planted_window)];
        }
    }
    std::printf("%s: %zu conversations, %lld utterances\n", split, corpus.size(),
                static_cast<long long>(utts));
    std::printf("  labels:");
    for (int c = 0; c < labels.num_labels(); ++c)
        std::printf(" %s=%.3f", labels.name(c).c_str(),
                    utts > 0 ? static_cast<double>(label_counts[static_cast<std::size_t>(c)]) / utts : 0.0);
    std::printf("\n  planted windows:");
    for (int w = 0; w <= max_window; ++w)
        std::printf(" %d=%.3f", w,
                    utts > 0 ? static_cast<double>(window_counts[static_cast<std::size_t>(w)]) / utts : 0.0);
    std::printf("\n");
}

int cmd_gen(const SharedArgs& args) {
    RunConfig cfg = load_config_or_default(args.config_path);
    if (args.seed >= 0) cfg.synth.seed = static_cast<std::uint64_t>(args.seed);
    cfg.validate();
    log_info("effective synth config: " + synth_config_to_json(cfg.synth).dump());

    const std::filesystem::path dir(args.out);
    std::filesystem::create_directories(dir);
    SynthCorpus corpus = generate_synthetic(cfg.synth);
    save_corpus(corpus.train, corpus.labels, (dir / "train.jsonl").string());
    save_corpus(corpus.dev, corpus.labels, (dir / "dev.jsonl").string());
    save_corpus(corpus.test, corpus.labels, (dir / "test.jsonl").string());
    save_label_map(corpus.labels, (dir / "labels.json").string());

    print_corpus_stats("train", corpus.train, corpus.labels, cfg.synth.max_window);
    print_corpus_stats("dev", corpus.dev, corpus.labels, cfg.synth.max_window);
    print_corpus_stats("test", corpus.test, corpus.labels, cfg.synth.max_window);
    return 0;
}

int cmd_train(const SharedArgs& args) {
    RunConfig cfg = load_config_or_default(args.config_path);
    if (args.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(args.seed);
    cfg.validate();

    const std::filesystem::path dir(args.data);
    LabelMap labels = load_label_map((dir / "labels.json").string());
    std::vector<Conversation> train_corpus = load_split(dir, "train", labels);
    std::vector<Conversation> dev_corpus = load_split(dir, "dev", labels);

    const nlohmann::json config_echo = run_config_to_json(cfg);
    log_info("effective config: " + config_echo.dump());

    TrainResult result = train(train_corpus, dev_corpus, cfg, labels);
    save_checkpoint(result.model, config_echo, args.out);

    std::ofstream log_out(args.out + ".log.jsonl");
    log_out << nlohmann::json{{"config", config_echo}}.dump() << "\n";
    for (const EpochLog& e : result.log) log_out << epoch_log_to_json(e).dump() << "\n";
    log_out << nlohmann::json{{"best_epoch", result.best_epoch},
                              {"best_dev_macro_f1", result.best_dev_macro_f1}}
                   .dump()
            << "\n";

    std::printf("checkpoint written to %s\n", args.out.c_str());
    std::printf("best epoch %d, dev macro-F1 %.4f\n", result.best_epoch, result.best_dev_macro_f1);
    return 0;
}

void print_report(const MetricsReport& report) {
    std::printf("micro-F1 %.4f | macro-F1 %.4f | weighted-F1 %.4f\n", report.micro_f1,
                report.macro_f1, report.weighted_f1);
    std::printf("%-12s %9s %9s %9s %9s\n", "class", "precision", "recall", "f1", "support");
    for (const ClassMetrics& c : report.per_class)
        std::printf("%-12s %9.4f %9.4f %9.4f %9lld\n", c.label.c_str(), c.precision, c.recall,
                    c.f1, static_cast<long long>(c.support));
    if (report.window_selection_accuracy.has_value())
        std::printf("window selection accuracy %.4f, top-K hit rate %.4f\n",
                    *report.window_selection_accuracy, *report.topk_hit_rate);
    std::printf("selected-window histogram:");
    for (std::size_t w = 0; w < report.window_histogram.size(); ++w)
        std::printf(" %zu=%lld", w, static_cast<long long>(report.window_histogram[w]));
    std::printf("\n");
}

int cmd_eval(const SharedArgs& args) {
    Checkpoint ckpt = load_checkpoint(args.ckpt);
    std::vector<Conversation> corpus = load_corpus(args.data, ckpt.model.labels);

    const GateMode* override_ptr = nullptr;
    GateMode mode{};
    if (!args.mode.empty()) {
        mode = gate_mode_from_string(args.mode);
        override_ptr = &mode;
    }
    const int threads = args.eval_threads > 0 ? args.eval_threads : 1;
    MetricsReport report = evaluate(corpus, ckpt.model, override_ptr, threads);

    if (!args.report.empty()) {
        std::ofstream out(args.report);
        if (!out) throw DataError("cannot write report " + args.report);
        out << metrics_to_json(report).dump(2) << "\n";
    }
    print_report(report);
    return 0;
}

int cmd_ablate(const SharedArgs& args) {
    RunConfig cfg = load_config_or_default(args.config_path);
    if (args.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(args.seed);
    cfg.validate();

    const std::filesystem::path dir(args.data);
    LabelMap labels = load_label_map((dir / "labels.json").string());
    std::vector<Conversation> train_corpus = load_split(dir, "train", labels);
    std::vector<Conversation> dev_corpus = load_split(dir, "dev", labels);
    std::vector<Conversation> test_corpus = load_split(dir, "test", labels);

    AblationReport report = ablation_run(train_corpus, dev_corpus, test_corpus, cfg, labels);
    std::ofstream out(args.out);
    if (!out) throw DataError("cannot write report " + args.out);
    out << ablation_report_to_json(report).dump(2) << "\n";

    std::printf("%-16s %-12s %14s %14s\n", "variant", "mode", "macro-F1 mean", "macro-F1 sd");
    for (const AblationCellSummary& c : report.cells)
        std::printf("%-16s %-12s %14.4f %14.4f\n", c.variant.c_str(), c.mode.c_str(),
                    c.mean_macro_f1, c.sd_macro_f1);
    return 0;
}

int cmd_inspect(const SharedArgs& args) {
    Checkpoint ckpt = load_checkpoint(args.ckpt);
    std::vector<Conversation> corpus = load_corpus(args.data, ckpt.model.labels);
    const Model& model = ckpt.model;

    int printed = 0;
    for (const Conversation& conv : corpus) {
        for (int t = 0; t < static_cast<int>(conv.utterances.size()) && printed < args.n_samples; ++t) {
            Tape tape(false);
            ModelOutput out = model_forward(tape, model, conv, t, false);
            const Utterance& u = conv.utterances[static_cast<std::size_t>(t)];
            std::printf("== %s @ %d | speaker %s | gold %s | predicted %s\n", conv.id.c_str(), t,
                        u.speaker.c_str(), model.labels.name(u.label).c_str(),
                        model.labels.name(argmax_index(out.p_hat.values())).c_str());
            std::printf("   text: %s\n", u.text.c_str());
            if (u.planted_window.has_value()) std::printf("   planted window: %d\n", *u.planted_window);
            std::printf("   active windows:");
            for (int i : out.wd.active) std::printf(" %d (q=%.3f)", i, out.wd.q.at(i));
            std::printf("\n");
            for (int i : out.wd.active) {
                std::printf("   field %d:", i);
                for (int c = 0; c < model.cfg.num_classes; ++c)
                    std::printf(" %s=%.3f", model.labels.name(c).c_str(), out.per_field.at(i).at(c));
                std::printf("\n");
            }
            ++printed;
        }
        if (printed >= args.n_samples) break;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"variable-context-window conversational emotion classifier"};
    app.require_subcommand(1);

    SharedArgs args;

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic corpus");
    gen->add_option("--config", args.config_path, "run configuration JSON");
    gen->add_option("--seed", args.seed, "override synth.seed");
    gen->add_option("--out", args.out, "output directory")->required();

    CLI::App* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--config", args.config_path, "run configuration JSON");
    train_cmd->add_option("--seed", args.seed, "override train.seed");
    train_cmd->add_option("--data", args.data, "corpus directory (train/dev JSONL + labels.json)")
        ->required();
    train_cmd->add_option("--out", args.out, "checkpoint output path")->required();

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--ckpt", args.ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--data", args.data, "corpus JSONL file")->required();
    eval_cmd->add_option("--report", args.report, "metrics report JSON output");
    eval_cmd->add_option("--mode", args.mode, "gate mode override");
    eval_cmd->add_option("--eval-threads", args.eval_threads, "parallel evaluation threads");

    CLI::App* ablate = app.add_subcommand("ablate", "train and evaluate the ablation grid");
    ablate->add_option("--config", args.config_path, "run configuration JSON");
    ablate->add_option("--seed", args.seed, "override train.seed");
    ablate->add_option("--data", args.data, "corpus directory")->required();
    ablate->add_option("--out", args.out, "grid report JSON output")->required();

    CLI::App* inspect = app.add_subcommand("inspect", "print window selections for sampled utterances");
    inspect->add_option("--ckpt", args.ckpt, "checkpoint path")->required();
    inspect->add_option("--data", args.data, "corpus JSONL file")->required();
    inspect->add_option("--n", args.n_samples, "number of utterances to print");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help() << "\n";
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(args);
        if (train_cmd->parsed()) return cmd_train(args);
        if (eval_cmd->parsed()) return cmd_eval(args);
        if (ablate->parsed()) return cmd_ablate(args);
        if (inspect->parsed()) return cmd_inspect(args);
    } catch (const vwerc::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const vwerc::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
