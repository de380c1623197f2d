#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include <json.hpp>

#ifndef VWERC_CLI_PATH
#error "VWERC_CLI_PATH must point to the built CLI binary"
#endif

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("vwerc_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static inline int counter = 0;
};

int run(const std::string& cli_args) {
    const std::string cmd = std::string(VWERC_CLI_PATH) + " " + cli_args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_tiny_config(const std::string& path) {
    nlohmann::json cfg{
        {"synth",
         {{"n_train", 14}, {"n_dev", 4}, {"n_test", 6}, {"conv_len_min", 4}, {"conv_len_max", 7},
          {"max_window", 2}, {"seed", 77}}},
        {"encoder",
         {{"d", 8}, {"n_layers", 1}, {"n_heads", 2}, {"d_ff", 16}, {"max_tokens", 64}}},
        {"gate", {{"M", 2}, {"K", 2}, {"d_h", 8}}},
        {"train", {{"max_epochs", 2}, {"batch_size", 4}, {"seed", 3}}},
    };
    nlohmann::json cells = nlohmann::json::array();
    cells.push_back(nlohmann::json::array({"speaker_aware", "topk_soft"}));
    cfg["ablate"] = {{"cells", cells}, {"seeds", nlohmann::json::array({1})}};
    std::ofstream out(path);
    out << cfg.dump(2) << "\n";
}

} // namespace

TEST_CASE("cli pipeline: gen, train, eval, inspect, ablate") {
    TempDir dir;
    write_tiny_config(dir.file("run.json"));

    REQUIRE(run("gen --config " + dir.file("run.json") + " --out " + dir.file("data")) == 0);
    CHECK(fs::exists(dir.file("data/train.jsonl")));
    CHECK(fs::exists(dir.file("data/dev.jsonl")));
    CHECK(fs::exists(dir.file("data/test.jsonl")));
    CHECK(fs::exists(dir.file("data/labels.json")));

    // same seed twice: byte-identical corpus files
    REQUIRE(run("gen --config " + dir.file("run.json") + " --out " + dir.file("data2")) == 0);
    CHECK(slurp(dir.file("data/train.jsonl")) == slurp(dir.file("data2/train.jsonl")));
    CHECK(slurp(dir.file("data/labels.json")) == slurp(dir.file("data2/labels.json")));

    // a different seed changes the corpus
    REQUIRE(run("gen --config " + dir.file("run.json") + " --seed 123 --out " + dir.file("data3")) == 0);
    CHECK(slurp(dir.file("data/train.jsonl")) != slurp(dir.file("data3/train.jsonl")));

    REQUIRE(run("train --config " + dir.file("run.json") + " --data " + dir.file("data") +
                " --out " + dir.file("model.bin")) == 0);
    CHECK(fs::exists(dir.file("model.bin")));
    CHECK(fs::exists(dir.file("model.bin.log.jsonl")));

    { // epoch log: config echo line plus one JSON line per epoch
        std::ifstream log(dir.file("model.bin.log.jsonl"));
        std::string line;
        int lines = 0;
        while (std::getline(log, line)) {
            if (line.empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            CHECK_FALSE(j.is_discarded());
            if (lines == 0) CHECK(j.contains("config"));
            ++lines;
        }
        CHECK(lines >= 3); // config + >=1 epoch + summary
    }

    REQUIRE(run("eval --ckpt " + dir.file("model.bin") + " --data " + dir.file("data/test.jsonl") +
                " --report " + dir.file("report.json")) == 0);
    {
        nlohmann::json report = nlohmann::json::parse(slurp(dir.file("report.json")));
        for (const char* key : {"micro_f1", "macro_f1", "weighted_f1", "per_class", "confusion",
                                "window_selection_accuracy", "topk_hit_rate", "window_histogram"}) {
            INFO(key);
            CHECK(report.contains(key));
        }
        CHECK(report["confusion"].size() == 4);
    }

    // eval is idempotent: identical report bytes on a second run
    REQUIRE(run("eval --ckpt " + dir.file("model.bin") + " --data " + dir.file("data/test.jsonl") +
                " --report " + dir.file("report2.json")) == 0);
    CHECK(slurp(dir.file("report.json")) == slurp(dir.file("report2.json")));

    // gate-mode override is accepted
    CHECK(run("eval --ckpt " + dir.file("model.bin") + " --data " + dir.file("data/test.jsonl") +
              " --mode all_hard --report " + dir.file("report3.json")) == 0);
    CHECK(slurp(dir.file("report.json")) != slurp(dir.file("report3.json")));

    REQUIRE(run("inspect --ckpt " + dir.file("model.bin") + " --data " + dir.file("data/test.jsonl") +
                " --n 5") == 0);

    REQUIRE(run("ablate --config " + dir.file("run.json") + " --data " + dir.file("data") +
                " --out " + dir.file("grid.json")) == 0);
    {
        nlohmann::json grid = nlohmann::json::parse(slurp(dir.file("grid.json")));
        CHECK(grid["rows"].size() == 1);
        CHECK(grid["cells"].size() == 1);
    }
}

TEST_CASE("cli exit codes") {
    TempDir dir;
    write_tiny_config(dir.file("run.json"));

    // usage error: missing required --out
    CHECK(run("gen --config " + dir.file("run.json")) == 2);
    CHECK(run("nonsense") == 2);

    // file errors
    CHECK(run("train --config " + dir.file("run.json") + " --data " + dir.file("missing") +
              " --out " + dir.file("m.bin")) == 1);
    CHECK(run("eval --ckpt " + dir.file("missing.bin") + " --data " + dir.file("x.jsonl")) == 1);

    // malformed config
    {
        std::ofstream out(dir.file("bad.json"));
        out << "{\"unknown_section\": 1}\n";
    }
    CHECK(run("gen --config " + dir.file("bad.json") + " --out " + dir.file("d")) == 1);

    // divergent training exits with code 3
    {
        nlohmann::json cfg = nlohmann::json::parse(slurp(dir.file("run.json")));
        cfg["train"]["lr"] = 1e12;
        cfg["train"]["clip_norm"] = 1e30;
        std::ofstream out(dir.file("diverge.json"));
        out << cfg.dump() << "\n";
    }
    REQUIRE(run("gen --config " + dir.file("run.json") + " --out " + dir.file("data")) == 0);
    CHECK(run("train --config " + dir.file("diverge.json") + " --data " + dir.file("data") +
              " --out " + dir.file("d.bin")) == 3);
}
