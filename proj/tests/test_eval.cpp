#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ramer/eval.hpp"
#include "ramer/rng.hpp"

using namespace ramer;
namespace fs = std::filesystem;

namespace {

Corpus eval_corpus(int n_labeled, int n_unlabeled, uint64_t seed) {
    SyntheticConfig cfg;
    cfg.n_labeled = n_labeled;
    cfg.n_unlabeled = n_unlabeled;
    cfg.class_priors = {1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6};
    cfg.dims = {24, 16, 40};
    cfg.latent_dim = 8;
    cfg.cross_modal_correlation = 0.8;
    cfg.seed = seed;
    return split_corpus(generate_synthetic(cfg), seed);
}

EvalSetup tiny_setup(uint64_t seed) {
    EvalSetup s;
    s.stage1.epochs = 3;
    s.stage1.batch_size = 32;
    s.stage1.learning_rate = 0.01;
    s.stage3 = s.stage1;
    s.completion.k = 5;
    s.tier = ScaleTier::Turbo;
    s.freeze_encoders = true;
    s.master_seed = seed;
    s.folds = 5;
    s.repeats = 3;
    return s;
}

// direct tally oracle
Metrics tally_oracle(const std::vector<int>& preds, const std::vector<int>& truths) {
    long correct = 0;
    std::array<long, 6> per_class_total{}, per_class_hit{};
    for (size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == truths[i]) ++correct;
        ++per_class_total[truths[i]];
        if (preds[i] == truths[i]) ++per_class_hit[truths[i]];
    }
    double recall_sum = 0.0;
    int reps = 0;
    for (int c = 0; c < 6; ++c) {
        if (per_class_total[c] == 0) continue;
        recall_sum += static_cast<double>(per_class_hit[c]) / per_class_total[c];
        ++reps;
    }
    return {100.0 * correct / preds.size(), 100.0 * recall_sum / reps};
}

}  // namespace

TEST_CASE("confusion matrix") {
    const std::vector<int> all = {0, 1, 2, 3, 4, 5};
    const ConfusionMatrix diag = confusion(all, all);
    for (int c = 0; c < 6; ++c) CHECK(diag.counts[c][c] == 1);
    CHECK(diag.total() == 6);
    CHECK(diag.diagonal() == 6);

    const ConfusionMatrix empty = confusion({}, {});
    CHECK(empty.total() == 0);

    Rng rng(101);
    std::vector<int> preds, truths;
    for (int i = 0; i < 50; ++i) {
        preds.push_back(static_cast<int>(rng.uniform_int(6)));
        truths.push_back(static_cast<int>(rng.uniform_int(6)));
    }
    const ConfusionMatrix cm = confusion(preds, truths);
    long tally[6][6] = {};
    for (int i = 0; i < 50; ++i) ++tally[truths[i]][preds[i]];
    for (int t = 0; t < 6; ++t)
        for (int p = 0; p < 6; ++p) CHECK(cm.counts[t][p] == tally[t][p]);

    CHECK_THROWS_AS(confusion(std::vector<int>{1}, std::vector<int>{}), Error);
    CHECK_THROWS_AS(confusion(std::vector<int>{9}, std::vector<int>{0}), Error);
}

TEST_CASE("weighted accuracy") {
    const std::vector<int> all = {0, 1, 2};
    CHECK(weighted_accuracy(confusion(all, all)) == doctest::Approx(100.0));

    // per-class (correct/total) = (8/10, 5/5, 2/5) -> 15/20 = 75%
    std::vector<int> preds, truths;
    for (int i = 0; i < 10; ++i) {
        truths.push_back(0);
        preds.push_back(i < 8 ? 0 : 1);
    }
    for (int i = 0; i < 5; ++i) {
        truths.push_back(1);
        preds.push_back(1);
    }
    for (int i = 0; i < 5; ++i) {
        truths.push_back(2);
        preds.push_back(i < 2 ? 2 : 0);
    }
    const ConfusionMatrix cm = confusion(preds, truths);
    CHECK(weighted_accuracy(cm) == doctest::Approx(75.0));
    // same matrix, UA = (0.8 + 1.0 + 0.4)/3
    CHECK(unweighted_accuracy(cm) == doctest::Approx(100.0 * (0.8 + 1.0 + 0.4) / 3.0));

    CHECK_THROWS_AS(weighted_accuracy(ConfusionMatrix{}), Error);

    // uniform random predictions over balanced classes: expectation 1/6
    Rng rng(102);
    std::vector<int> rp, rt;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        rp.push_back(static_cast<int>(rng.uniform_int(6)));
        rt.push_back(i % 6);
    }
    const double wa = weighted_accuracy(confusion(rp, rt));
    const double p = 1.0 / 6.0;
    const double sigma = 100.0 * std::sqrt(p * (1 - p) / n);
    CHECK(std::abs(wa - 100.0 * p) <= 3.0 * sigma);
}

TEST_CASE("unweighted accuracy edge rules") {
    const std::vector<int> all = {0, 1, 2, 3, 4, 5};
    CHECK(unweighted_accuracy(confusion(all, all)) == doctest::Approx(100.0));

    // balanced support: WA == UA
    Rng rng(103);
    std::vector<int> preds, truths;
    for (int i = 0; i < 600; ++i) {
        truths.push_back(i % 6);
        preds.push_back(static_cast<int>(rng.uniform_int(6)));
    }
    const ConfusionMatrix cm = confusion(preds, truths);
    CHECK(std::abs(weighted_accuracy(cm) - unweighted_accuracy(cm)) < 1e-9);
}

TEST_CASE("metrics match the tally oracle on random data") {
    Rng rng(104);
    for (int t = 0; t < 100; ++t) {
        std::vector<int> preds, truths;
        const int n = 20 + static_cast<int>(rng.uniform_int(80));
        for (int i = 0; i < n; ++i) {
            preds.push_back(static_cast<int>(rng.uniform_int(6)));
            truths.push_back(static_cast<int>(rng.uniform_int(6)));
        }
        const Metrics got = metrics_from(confusion(preds, truths));
        const Metrics want = tally_oracle(preds, truths);
        CHECK(got.wa == doctest::Approx(want.wa).epsilon(1e-12));
        CHECK(got.ua == doctest::Approx(want.ua).epsilon(1e-12));
    }
}

TEST_CASE("WA bounded by the extreme per-class recalls") {
    Rng rng(105);
    std::vector<int> preds, truths;
    for (int i = 0; i < 300; ++i) {
        truths.push_back(static_cast<int>(rng.uniform_int(6)));
        preds.push_back(rng.uniform() < 0.6 ? truths.back()
                                            : static_cast<int>(rng.uniform_int(6)));
    }
    const ConfusionMatrix cm = confusion(preds, truths);
    double lo = 101.0, hi = -1.0;
    for (int c = 0; c < 6; ++c) {
        if (cm.row_total(c) == 0) continue;
        const double r = 100.0 * cm.counts[c][c] / cm.row_total(c);
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
    const double wa = weighted_accuracy(cm);
    CHECK(wa >= lo - 1e-9);
    CHECK(wa <= hi + 1e-9);
}

TEST_CASE("stratified folds partition the labeled set") {
    const Corpus corpus = eval_corpus(90, 0, 111);
    const auto folds = stratified_folds(corpus, 5, 3);
    REQUIRE(folds.size() == 5);
    std::set<int> seen;
    size_t total = 0;
    for (const auto& f : folds) {
        total += f.size();
        for (int i : f) CHECK(seen.insert(i).second);  // disjoint
    }
    CHECK(total == corpus.labeled_indices().size());
}

TEST_CASE("cross_validate: 15 runs, determinism") {
    const Corpus corpus = eval_corpus(90, 20, 112);
    const EvalSetup setup = tiny_setup(5);
    const auto cond = MissingCondition::parse("a");

    const ConditionSummary s1 = cross_validate(corpus, cond, setup);
    CHECK(s1.cell.runs == 15);
    CHECK(s1.runs.size() == 15);
    long leaked = 0;
    for (const auto& r : s1.runs) leaked += r.stats.leaked;
    CHECK(leaked == 0);

    const ConditionSummary s2 = cross_validate(corpus, cond, setup);
    CHECK(s1.cell.wa_mean == s2.cell.wa_mean);
    CHECK(s1.cell.wa_std == s2.cell.wa_std);
    CHECK(s1.cell.ua_mean == s2.cell.ua_mean);

    // non-grid condition rejected
    CHECK_THROWS_AS(cross_validate(corpus, MissingCondition::parse("avl"), setup), Error);
}

TEST_CASE("report rendering") {
    RunGrid g;
    g.system = "ramer";
    GridCell cell;
    cell.runs = 15;
    cell.wa_mean = 83.333;
    cell.wa_std = 1.25;
    cell.ua_mean = 77.777;
    cell.ua_std = 2.225;
    for (const auto& c : MissingCondition::grid()) g.cells.push_back({c.code(), cell});

    SUBCASE("markdown layout: 16 columns") {
        const std::string md = render_report({g}, ReportFormat::Markdown);
        std::stringstream ss(md);
        std::string header;
        std::getline(ss, header);
        // N columns = N+1 pipe separators
        CHECK(std::count(header.begin(), header.end(), '|') == 17);
        CHECK(header.find("Avg WA") != std::string::npos);
        std::string sep, row;
        std::getline(ss, sep);
        std::getline(ss, row);
        CHECK(row.find("83.33") != std::string::npos);
        CHECK(row.find("77.78") != std::string::npos);
    }

    SUBCASE("csv round trips at two decimals") {
        const std::string dir = "tmp_eval_report";
        fs::create_directories(dir);
        emit_report({g}, ReportFormat::Csv, dir + "/r.csv");
        std::ifstream in(dir + "/r.csv");
        std::string header;
        std::getline(in, header);
        CHECK(header == "system,runs,condition,wa_mean,wa_std,ua_mean,ua_std");
        std::string line;
        int rows = 0;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            ++rows;
            if (rows == 1) {
                std::stringstream fs2(line);
                std::string tok;
                std::vector<std::string> f;
                while (std::getline(fs2, tok, ',')) f.push_back(tok);
                REQUIRE(f.size() == 7);
                CHECK(f[0] == "ramer");
                CHECK(f[2] == "a");
                CHECK(std::stod(f[3]) == doctest::Approx(83.33));
                CHECK(std::stod(f[4]) == doctest::Approx(1.25));
                CHECK(std::stod(f[5]) == doctest::Approx(77.78));
            }
        }
        CHECK(rows == 7);  // six conditions + Avg
        fs::remove_all(dir);
    }

    SUBCASE("byte-stable emission and empty grid") {
        const std::string a = render_report({g}, ReportFormat::Csv);
        const std::string b = render_report({g}, ReportFormat::Csv);
        CHECK(a == b);
        const std::string empty = render_report({}, ReportFormat::Csv);
        CHECK(empty == "system,runs,condition,wa_mean,wa_std,ua_mean,ua_std\n");
        // Avg equals the arithmetic mean over the six conditions
        const GridCell avg = g.average();
        CHECK(avg.wa_mean == doctest::Approx(cell.wa_mean));
        CHECK(avg.ua_mean == doctest::Approx(cell.ua_mean));
    }
}

TEST_CASE("ablation specs and the zero-vector cell") {
    const auto desk = default_ablation_specs(false);
    const auto full = default_ablation_specs(true);
    CHECK(desk.size() == 9);   // 2 tiers x 3 ks + 3 variants
    CHECK(full.size() == 19);  // 4 tiers x 4 ks + 3 variants
    bool has_wo = false;
    for (const auto& s : desk)
        if (s.name == "wo_retrieval") {
            has_wo = true;
            CHECK(!s.completion.retrieval);
        }
    CHECK(has_wo);
}

TEST_CASE("export_hidden_csv") {
    const Corpus corpus = eval_corpus(60, 10, 113);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 32;
    tc.seed = 1;
    const Checkpoint ck = pretrain_full_modality(corpus, tc);
    const AlignedStore store =
        build_store_tier(corpus, ck, ScaleTier::Turbo, 1, StoreSource::Hidden);
    std::map<std::string, EmotionLabel> labels;
    for (const auto& s : corpus.samples)
        if (s.label) labels[s.id] = *s.label;

    const std::string dir = "tmp_export";
    fs::create_directories(dir);

    SUBCASE("n rows per modality, deterministic") {
        export_hidden_csv(store, 5, 9, dir + "/a.csv", &labels);
        export_hidden_csv(store, 5, 9, dir + "/b.csv", &labels);
        std::ifstream fa(dir + "/a.csv"), fb(dir + "/b.csv");
        const std::string ca((std::istreambuf_iterator<char>(fa)),
                             std::istreambuf_iterator<char>());
        const std::string cb((std::istreambuf_iterator<char>(fb)),
                             std::istreambuf_iterator<char>());
        CHECK(ca == cb);
        std::stringstream ss(ca);
        std::string line;
        int lines = 0;
        while (std::getline(ss, line))
            if (!line.empty()) ++lines;
        CHECK(lines == 1 + 3 * 5);
    }

    SUBCASE("n = 0 gives a header-only file") {
        export_hidden_csv(store, 0, 9, dir + "/zero.csv");
        std::ifstream in(dir + "/zero.csv");
        std::string line;
        int lines = 0;
        while (std::getline(in, line))
            if (!line.empty()) ++lines;
        CHECK(lines == 1);
    }

    SUBCASE("n = store size exports everything; larger n errors") {
        export_hidden_csv(store, store.count(), 9, dir + "/all.csv");
        CHECK_THROWS_AS(export_hidden_csv(store, store.count() + 1, 9, dir + "/x.csv"), Error);
    }
    fs::remove_all(dir);
}

TEST_CASE("ablation runner covers the variant cells") {
    const Corpus corpus = eval_corpus(90, 24, 114);
    EvalSetup setup = tiny_setup(6);
    setup.folds = 3;
    setup.repeats = 1;
    const std::vector<AblationSpec> specs = {
        {"small_top5", CompletionConfig{.k = 5}, ScaleTier::Small},
        {"wo_retrieval", CompletionConfig{.retrieval = false}, ScaleTier::Turbo},
        {"raw_db_top5", CompletionConfig{.k = 5, .db_source = DbSource::Raw}, ScaleTier::Turbo},
        {"euclidean_top5", CompletionConfig{.k = 5, .metric = kernels::Metric::Euclidean},
         ScaleTier::Turbo},
    };
    const std::vector<MissingCondition> conds = {MissingCondition::parse("a")};
    std::vector<std::pair<std::string, RunRecord>> runs;
    const auto grids = run_ablations(corpus, specs, conds, setup, &runs);
    REQUIRE(grids.size() == 4);
    for (const auto& g : grids) {
        REQUIRE(g.cells.size() == 1);
        CHECK(g.cells[0].second.runs == 3);
        CHECK(g.cells[0].second.wa_mean > 0.0);
    }
    CHECK(runs.size() == 4 * 3);
    long leaked = 0;
    for (const auto& [label, r] : runs) leaked += r.stats.leaked;
    CHECK(leaked == 0);
    // grid shape on emission: |specs| rows x (2 + 2*7) columns
    const std::string md = render_report(grids, ReportFormat::Markdown);
    CHECK(std::count(md.begin(), md.end(), '\n') == 2 + 4);
}
