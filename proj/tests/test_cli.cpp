#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

using namespace std::string_literals;
namespace fs = std::filesystem;

namespace {

const std::string kCli = RAMER_CLI_PATH;

int run(const std::string& args) {
    const std::string cmd = kCli + " " + args + " > cli_test.log 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_config(const std::string& path, const std::string& out_dir, uint64_t seed = 11,
                  const std::string& extra = "") {
    std::ofstream out(path);
    out << R"({
  "seed": )" << seed << R"(,
  "out_dir": ")" << out_dir << R"(",
  "dataset": {
    "type": "synthetic",
    "n_labeled": 90,
    "n_unlabeled": 24,
    "class_priors": [0.166666666666667, 0.166666666666667, 0.166666666666667,
                     0.166666666666667, 0.166666666666667, 0.166666666666665],
    "dims": {"audio": 24, "video": 16, "text": 40},
    "latent_dim": 8
  },
  "train": {"epochs": 3, "batch_size": 32, "learning_rate": 0.01},
  "completion": {"k": 5},
  "tier": "turbo",
  "freeze_encoders": true,
  "cv": {"folds": 5, "repeats": 3})" << extra << R"(
})";
}

struct TempTree {
    std::string root;
    explicit TempTree(const std::string& name) : root("tmp_cli_" + name) {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~TempTree() { fs::remove_all(root); }
};

}  // namespace

TEST_CASE("full pipeline smoke: gen-data, pretrain, build-db, train, eval") {
    TempTree t("smoke");
    const std::string cfg = t.root + "/cfg.json";
    write_config(cfg, t.root + "/out");

    CHECK(run("gen-data --config " + cfg) == 0);
    CHECK(fs::exists(t.root + "/out/corpus.manifest.jsonl"));
    CHECK(fs::exists(t.root + "/out/features_audio.rfv"));
    CHECK(fs::exists(t.root + "/out/features_video.rfv"));
    CHECK(fs::exists(t.root + "/out/features_text.rfv"));

    CHECK(run("pretrain --config " + cfg) == 0);
    CHECK(fs::exists(t.root + "/out/checkpoint.rck"));

    CHECK(run("build-db --config " + cfg) == 0);
    CHECK(fs::exists(t.root + "/out/store_turbo/store.json"));

    CHECK(run("train --config " + cfg + " --condition a") == 0);
    CHECK(fs::exists(t.root + "/out/model_a.rck"));

    CHECK(run("eval --config " + cfg) == 0);
    CHECK(fs::exists(t.root + "/out/reports/results.md"));
    CHECK(fs::exists(t.root + "/out/reports/results.csv"));
    CHECK(fs::exists(t.root + "/out/reports/runs.jsonl"));

    // the grid covers all six conditions plus the Avg row
    const std::string csv = slurp(t.root + "/out/reports/results.csv");
    for (const std::string cond : {"a", "v", "l", "av", "al", "vl", "Avg"})
        CHECK(csv.find("ramer,15," + cond + ",") != std::string::npos);

    // report merging
    CHECK(run("report " + t.root + "/out/reports/results.csv -o " + t.root + "/merged.md") == 0);
    CHECK(fs::exists(t.root + "/merged.md"));

    // export-hidden
    CHECK(run("export-hidden --config " + cfg + " --n 4") == 0);
    CHECK(fs::exists(t.root + "/out/hidden_sample.csv"));

    SUBCASE("rerun eval with --force is byte-identical") {
        const std::string before = slurp(t.root + "/out/reports/results.csv");
        CHECK(run("eval --config " + cfg + " --force") == 0);
        CHECK(slurp(t.root + "/out/reports/results.csv") == before);
    }

    SUBCASE("refuses to overwrite without --force") {
        CHECK(run("gen-data --config " + cfg) == 3);
        CHECK(run("eval --config " + cfg) == 3);
    }
}

TEST_CASE("gen-data is deterministic per seed") {
    TempTree t("det");
    const std::string cfg1 = t.root + "/c1.json", cfg2 = t.root + "/c2.json";
    write_config(cfg1, t.root + "/o1", 42);
    write_config(cfg2, t.root + "/o2", 42);
    CHECK(run("gen-data --config " + cfg1) == 0);
    CHECK(run("gen-data --config " + cfg2) == 0);
    CHECK(slurp(t.root + "/o1/features_audio.rfv") == slurp(t.root + "/o2/features_audio.rfv"));
    CHECK(slurp(t.root + "/o1/features_text.rfv") == slurp(t.root + "/o2/features_text.rfv"));
    CHECK(slurp(t.root + "/o1/corpus.manifest.jsonl") ==
          slurp(t.root + "/o2/corpus.manifest.jsonl"));
}

TEST_CASE("config errors exit with code 2") {
    TempTree t("cfgerr");
    const std::string cfg = t.root + "/bad.json";
    {
        std::ofstream out(cfg);
        out << R"({"dataset": {"type": "synthetic",
                   "class_priors": [0.5, 0.5, 0.5, 0, 0, 0],
                   "dims": {"audio": 24, "video": 16, "text": 40}, "latent_dim": 8}})";
    }
    CHECK(run("gen-data --config " + cfg) == 2);

    // unknown condition code and out-of-grid condition
    const std::string good = t.root + "/good.json";
    write_config(good, t.root + "/out");
    CHECK(run("train --config " + good + " --condition avl") == 2);
    CHECK(run("train --config " + good + " --condition x") == 2);
    CHECK(run("train --config " + good) == 2);  // --condition required
    CHECK(run("eval") == 2);                    // --config required
}

TEST_CASE("missing or stale artifacts exit with code 3") {
    TempTree t("stale");
    const std::string cfg = t.root + "/cfg.json";
    write_config(cfg, t.root + "/out");

    // nothing generated yet
    CHECK(run("pretrain --config " + cfg) == 3);
    CHECK(run("eval --config " + cfg) == 3);

    CHECK(run("gen-data --config " + cfg) == 0);
    CHECK(run("train --config " + cfg + " --condition a") == 3);  // no checkpoint
    CHECK(run("pretrain --config " + cfg) == 0);
    CHECK(run("train --config " + cfg + " --condition a") == 3);  // no store
    CHECK(run("build-db --config " + cfg) == 0);

    // a config change invalidates the checkpoint hash chain
    const std::string cfg2 = t.root + "/cfg2.json";
    write_config(cfg2, t.root + "/out", 11, R"(,
  "extra_unused": 0)");
    std::ofstream(t.root + "/cfg3.json") << slurp(cfg2);  // same semantics, same hash
    write_config(t.root + "/cfg_seed.json", t.root + "/out", 12);
    CHECK(run("build-db --config " + t.root + "/cfg_seed.json --force") == 3);
    CHECK(run("train --config " + t.root + "/cfg_seed.json --condition a --force") == 3);
}
