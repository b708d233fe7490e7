// Command-line front end for the retrieval-augmented missing-modality
// classifier. Stages: gen-data -> pretrain -> build-db -> train, plus the
// cross-validation grid (eval), the ablation runner, report merging and the
// hidden-feature CSV export. Every artifact records the config hash of its
// inputs; stale artifacts are rejected.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "ramer/config.hpp"
#include "ramer/io.hpp"
#include "ramer/rng.hpp"

namespace fs = std::filesystem;
using namespace ramer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitArtifact = 3;
constexpr int kExitRuntime = 4;

struct CliOptions {
    std::string config_path;
    bool force = false;
    std::string condition;
    std::string report_out = "report.md";
    std::vector<std::string> report_inputs;
    int export_n = 1000;
    bool ablate_full = false;
    // config overrides
    std::optional<uint64_t> seed;
    std::optional<std::string> tier;
    std::optional<int> k;
    std::optional<std::string> metric;
    std::optional<std::string> db_source;
    std::optional<std::string> keep_miss;
    std::optional<bool> freeze;
    std::optional<int> jobs;
};

RunConfig load_config(const CliOptions& opt) {
    if (opt.config_path.empty())
        throw_error(ErrorKind::Config, "--config is required");
    RunConfig cfg = RunConfig::from_file(opt.config_path);
    if (opt.seed) {
        cfg.seed = *opt.seed;
        cfg.synth.seed = *opt.seed;
        cfg.train.seed = *opt.seed;
    }
    if (opt.tier) {
        const auto t = parse_tier(*opt.tier);
        if (!t) throw_error(ErrorKind::Config, "unknown tier: " + *opt.tier);
        cfg.tier = *t;
    }
    if (opt.k) {
        if (*opt.k < 1) throw_error(ErrorKind::Config, "--k must be >= 1");
        cfg.completion.k = *opt.k;
    }
    if (opt.metric) {
        if (*opt.metric == "cosine")
            cfg.completion.metric = kernels::Metric::Cosine;
        else if (*opt.metric == "euclidean")
            cfg.completion.metric = kernels::Metric::Euclidean;
        else
            throw_error(ErrorKind::Config, "--metric must be cosine or euclidean");
    }
    if (opt.db_source) {
        if (*opt.db_source == "hidden")
            cfg.completion.db_source = DbSource::Hidden;
        else if (*opt.db_source == "raw")
            cfg.completion.db_source = DbSource::Raw;
        else
            throw_error(ErrorKind::Config, "--db-source must be hidden or raw");
    }
    if (opt.keep_miss) {
        if (*opt.keep_miss == "replace")
            cfg.completion.keep_miss = KeepMiss::Replace;
        else if (*opt.keep_miss == "avg")
            cfg.completion.keep_miss = KeepMiss::Average;
        else
            throw_error(ErrorKind::Config, "--keep-miss must be replace or avg");
    }
    if (opt.freeze) cfg.freeze_encoders = *opt.freeze;
    if (opt.jobs) cfg.jobs = std::max(1, *opt.jobs);
    return cfg;
}

void refuse_overwrite(const std::string& path, bool force) {
    if (!force && fs::exists(path))
        throw_error(ErrorKind::Artifact, path + " already exists (use --force to overwrite)");
}

Corpus load_corpus(const RunConfig& cfg) {
    const std::string manifest = cfg.synthetic ? cfg.manifest_file() : cfg.manifest_path;
    if (!fs::exists(manifest))
        throw_error(ErrorKind::Artifact,
                    "missing corpus manifest " + manifest + " (run gen-data first)");
    Corpus corpus = load_manifest(manifest);
    for (Modality m : kAllModalities) {
        const std::string path =
            cfg.synthetic ? cfg.features_file(m) : cfg.feature_paths[static_cast<int>(m)];
        if (!fs::exists(path))
            throw_error(ErrorKind::Artifact, "missing feature file " + path);
        load_features(corpus, m, path);
    }
    bool has_splits = false;
    for (const auto& s : corpus.samples)
        if (s.split != Split::Unlabeled) has_splits = true;
    if (!has_splits) corpus = split_corpus(std::move(corpus), cfg.seed);
    return corpus;
}

Checkpoint load_checkpoint_checked(const RunConfig& cfg) {
    const std::string path = cfg.checkpoint_file();
    if (!fs::exists(path))
        throw_error(ErrorKind::Artifact, "missing checkpoint " + path + " (run pretrain first)");
    Checkpoint ck = load_checkpoint(path);
    if (ck.config_hash != cfg.pretrain_hash())
        throw_error(ErrorKind::Artifact,
                    "checkpoint " + path + " was built from a different config (recorded hash " +
                        std::to_string(ck.config_hash) + ", current " +
                        std::to_string(cfg.pretrain_hash()) + "); rerun pretrain");
    return ck;
}

AlignedStore load_store_checked(const RunConfig& cfg, StoreSource source) {
    const std::string dir = cfg.store_dir(source);
    if (!fs::exists(dir + "/store.json"))
        throw_error(ErrorKind::Artifact, "missing store " + dir + " (run build-db first)");
    AlignedStore store = load_store(dir);
    const uint64_t ck_hash = io::file_hash(cfg.checkpoint_file());
    if (store.checkpoint_hash != ck_hash)
        throw_error(ErrorKind::Artifact,
                    "store " + dir + " was built from a different checkpoint (recorded hash " +
                        std::to_string(store.checkpoint_hash) + ", checkpoint file hash " +
                        std::to_string(ck_hash) + "); rerun build-db");
    return store;
}

std::unordered_set<std::string> heldout_ids(const Corpus& corpus) {
    std::unordered_set<std::string> out;
    for (const auto& s : corpus.samples)
        if (s.split == Split::Val || s.split == Split::Test) out.insert(s.id);
    return out;
}

int cmd_gen_data(const CliOptions& opt) {
    RunConfig cfg = load_config(opt);
    if (!cfg.synthetic)
        throw_error(ErrorKind::Config, "gen-data needs a synthetic dataset section");
    refuse_overwrite(cfg.manifest_file(), opt.force);
    fs::create_directories(cfg.out_dir);
    std::cout << "[gen-data] generating " << cfg.synth.n_labeled << " labeled + "
              << cfg.synth.n_unlabeled << " unlabeled samples\n";
    Corpus corpus = generate_synthetic(cfg.synth);
    corpus = split_corpus(std::move(corpus), cfg.seed);
    save_manifest(corpus, cfg.manifest_file());
    for (Modality m : kAllModalities) save_features(corpus, m, cfg.features_file(m));
    const auto hist = label_histogram(corpus);
    std::cout << "[gen-data] class histogram:";
    for (int c = 0; c < kNumClasses; ++c)
        std::cout << " " << label_name(static_cast<EmotionLabel>(c)) << "=" << hist[c];
    std::cout << "\n[gen-data] wrote " << cfg.manifest_file() << "\n";
    return kExitOk;
}

int cmd_pretrain(const CliOptions& opt) {
    RunConfig cfg = load_config(opt);
    refuse_overwrite(cfg.checkpoint_file(), opt.force);
    const Corpus corpus = load_corpus(cfg);
    std::cout << "[pretrain] " << cfg.train.epochs << " epochs, batch " << cfg.train.batch_size
              << "\n";
    const Checkpoint ck = pretrain_full_modality(corpus, cfg.train, cfg.pretrain_hash());
    fs::create_directories(cfg.out_dir);
    save_checkpoint(cfg.checkpoint_file(), ck);
    std::cout << "[pretrain] best epoch " << ck.best_epoch << ", val WA " << ck.val_wa << "\n";
    std::cout << "[pretrain] wrote " << cfg.checkpoint_file() << "\n";
    return kExitOk;
}

int cmd_build_db(const CliOptions& opt) {
    RunConfig cfg = load_config(opt);
    const Corpus corpus = load_corpus(cfg);
    const Checkpoint ck = load_checkpoint_checked(cfg);
    const uint64_t ck_hash = io::file_hash(cfg.checkpoint_file());

    refuse_overwrite(cfg.store_dir(StoreSource::Hidden) + "/store.json", opt.force);
    AlignedStore hidden =
        build_store_tier(corpus, ck, cfg.tier, derive_seed(cfg.seed, "tier"), StoreSource::Hidden);
    hidden.checkpoint_hash = ck_hash;
    save_store(cfg.store_dir(StoreSource::Hidden), hidden);
    std::cout << "[build-db] " << hidden.count() << " records per modality -> "
              << cfg.store_dir(StoreSource::Hidden) << "\n";

    if (cfg.completion.db_source == DbSource::Raw) {
        refuse_overwrite(cfg.store_dir(StoreSource::Raw) + "/store.json", opt.force);
        AlignedStore raw = build_store_tier(corpus, ck, cfg.tier, derive_seed(cfg.seed, "tier"),
                                            StoreSource::Raw);
        raw.checkpoint_hash = ck_hash;
        save_store(cfg.store_dir(StoreSource::Raw), raw);
        std::cout << "[build-db] raw key store -> " << cfg.store_dir(StoreSource::Raw) << "\n";
    }
    return kExitOk;
}

int cmd_train(const CliOptions& opt) {
    RunConfig cfg = load_config(opt);
    if (opt.condition.empty())
        throw_error(ErrorKind::Config, "train requires --condition (one of a v l av al vl)");
    const MissingCondition cond = MissingCondition::parse(opt.condition);
    if (!cond.is_grid_condition())
        throw_error(ErrorKind::Config,
                    "condition '" + cond.code() +
                        "' is not in the missing-modality grid {a, v, l, av, al, vl}");
    refuse_overwrite(cfg.model_file(cond), opt.force);

    const Corpus corpus = load_corpus(cfg);
    const Checkpoint ck = load_checkpoint_checked(cfg);
    const AlignedStore hidden = load_store_checked(cfg, StoreSource::Hidden);
    AlignedStore raw;
    const bool need_raw = cfg.completion.db_source == DbSource::Raw;
    if (need_raw) raw = load_store_checked(cfg, StoreSource::Raw);

    const Completer completer(hidden, need_raw ? &raw : nullptr, cfg.completion,
                              heldout_ids(corpus));
    RunStats stats;
    std::cout << "[train] condition " << cond.code() << ", k=" << cfg.completion.k
              << (cfg.freeze_encoders ? ", frozen encoders" : "") << "\n";
    Stage3Model model =
        train_missing(corpus, cond, ck, completer, cfg.train, cfg.freeze_encoders, &stats);
    model.checkpoint_hash = io::file_hash(cfg.checkpoint_file());
    model.store_hash = io::file_hash(cfg.store_dir(StoreSource::Hidden) + "/store.json");
    save_stage3(cfg.model_file(cond), model);

    const auto test_idx = corpus.indices_with_split(Split::Test);
    std::vector<int> truths(test_idx.size());
    for (size_t i = 0; i < test_idx.size(); ++i)
        truths[i] = static_cast<int>(*corpus.samples[test_idx[i]].label);
    const auto preds = predict_split(corpus, Split::Test, model, completer, &stats);
    const Metrics m = metrics_from(confusion(preds, truths));
    std::cout << "[train] val WA " << model.val_wa << ", test WA " << m.wa << ", test UA " << m.ua
              << "\n";
    if (stats.leaked > 0) {
        std::cerr << "[train] leak audit FAILED: " << stats.leaked << " excluded ids retrieved\n";
        return kExitRuntime;
    }
    std::cout << "[train] wrote " << cfg.model_file(cond) << "\n";
    return kExitOk;
}

int cmd_eval(const CliOptions& opt) {
    RunConfig cfg = load_config(opt);
    const std::string dir = cfg.reports_dir();
    refuse_overwrite(dir + "/results.csv", opt.force);
    const Corpus corpus = load_corpus(cfg);
    std::cout << "[eval] " << cfg.cv_folds << "-fold x " << cfg.cv_repeats
              << " cross-validation over " << cfg.conditions.size() << " conditions\n";
    std::vector<RunRecord> runs;
    const RunGrid grid =
        cross_validate_grid(corpus, cfg.conditions, cfg.eval_setup(), "ramer", &runs);
    fs::create_directories(dir);
    emit_report({grid}, ReportFormat::Markdown, dir + "/results.md");
    emit_report({grid}, ReportFormat::Csv, dir + "/results.csv");
    std::vector<std::pair<std::string, RunRecord>> rows;
    long leaked = 0;
    for (const auto& r : runs) {
        rows.push_back({"ramer", r});
        leaked += r.stats.leaked;
    }
    write_run_log(rows, cfg.full_hash(), dir + "/runs.jsonl");
    std::cout << render_report({grid}, ReportFormat::Markdown);
    if (leaked > 0) {
        std::cerr << "[eval] leak audit FAILED: " << leaked << " excluded ids retrieved\n";
        return kExitRuntime;
    }
    std::cout << "[eval] wrote " << dir << "/results.{md,csv}\n";
    return kExitOk;
}

int cmd_ablate(const CliOptions& opt) {
    RunConfig cfg = load_config(opt);
    const std::string dir = cfg.out_dir + "/ablation";
    refuse_overwrite(dir + "/ablation.csv", opt.force);
    const Corpus corpus = load_corpus(cfg);
    const auto specs = default_ablation_specs(opt.ablate_full);
    std::cout << "[ablate] " << specs.size() << " cells x " << cfg.conditions.size()
              << " conditions\n";
    std::vector<std::pair<std::string, RunRecord>> runs;
    const auto grids = run_ablations(corpus, specs, cfg.conditions, cfg.eval_setup(), &runs);
    fs::create_directories(dir);
    emit_report(grids, ReportFormat::Markdown, dir + "/ablation.md");
    emit_report(grids, ReportFormat::Csv, dir + "/ablation.csv");
    write_run_log(runs, cfg.full_hash(), dir + "/runs.jsonl");
    std::cout << render_report(grids, ReportFormat::Markdown);
    long leaked = 0;
    for (const auto& [label, r] : runs) leaked += r.stats.leaked;
    if (leaked > 0) {
        std::cerr << "[ablate] leak audit FAILED: " << leaked << " excluded ids retrieved\n";
        return kExitRuntime;
    }
    std::cout << "[ablate] wrote " << dir << "/ablation.{md,csv}\n";
    return kExitOk;
}

// Parse a results CSV back into grids so reports can be merged.
std::vector<RunGrid> parse_csv_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw_error(ErrorKind::Artifact, "cannot open report csv: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "system,runs,condition,wa_mean,wa_std,ua_mean,ua_std")
        throw_error(ErrorKind::Parse, path + ": unexpected csv header");
    std::vector<RunGrid> grids;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) f.push_back(tok);
        if (f.size() != 7) throw_error(ErrorKind::Parse, path + ": bad csv row: " + line);
        if (f[2] == "Avg") continue;  // recomputed on emission
        if (grids.empty() || grids.back().system != f[0]) {
            grids.push_back({f[0], {}});
        }
        GridCell cell;
        cell.runs = std::stoi(f[1]);
        cell.wa_mean = std::stod(f[3]);
        cell.wa_std = std::stod(f[4]);
        cell.ua_mean = std::stod(f[5]);
        cell.ua_std = std::stod(f[6]);
        grids.back().cells.push_back({f[2], cell});
    }
    return grids;
}

int cmd_report(const CliOptions& opt) {
    if (opt.report_inputs.empty())
        throw_error(ErrorKind::Config, "report needs at least one results csv");
    std::vector<RunGrid> grids;
    for (const auto& p : opt.report_inputs) {
        auto g = parse_csv_report(p);
        grids.insert(grids.end(), g.begin(), g.end());
    }
    refuse_overwrite(opt.report_out, opt.force);
    emit_report(grids, ReportFormat::Markdown, opt.report_out);
    std::cout << "[report] merged " << opt.report_inputs.size() << " file(s) -> "
              << opt.report_out << "\n";
    return kExitOk;
}

int cmd_export_hidden(const CliOptions& opt) {
    RunConfig cfg = load_config(opt);
    const std::string path = cfg.out_dir + "/hidden_sample.csv";
    refuse_overwrite(path, opt.force);
    const AlignedStore store = load_store_checked(cfg, StoreSource::Hidden);
    const Corpus corpus = load_corpus(cfg);
    std::map<std::string, EmotionLabel> labels;
    for (const auto& s : corpus.samples)
        if (s.label) labels[s.id] = *s.label;
    export_hidden_csv(store, opt.export_n, cfg.seed, path, &labels);
    std::cout << "[export-hidden] wrote " << path << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"retrieval-augmented missing-modality emotion classifier"};
    app.require_subcommand(1);
    CliOptions opt;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "run configuration (json)");
        sub->add_flag("--force", opt.force, "overwrite existing artifacts");
        sub->add_option("--seed", opt.seed, "override master seed");
        sub->add_option("--tier", opt.tier, "override store tier (small|medium|large|turbo)");
        sub->add_option("--k", opt.k, "override top-k");
        sub->add_option("--metric", opt.metric, "override metric (cosine|euclidean)");
        sub->add_option("--db-source", opt.db_source, "override db source (hidden|raw)");
        sub->add_option("--keep-miss", opt.keep_miss, "missing-feature policy (replace|avg)");
        sub->add_flag("--freeze-encoders", [&](int64_t) { opt.freeze = true; },
                      "freeze encoders in stage 3");
        sub->add_option("--jobs", opt.jobs, "parallel cross-validation runs");
    };

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    add_common(gen);
    auto* pre = app.add_subcommand("pretrain", "stage 1: full-modality pretraining");
    add_common(pre);
    auto* db = app.add_subcommand("build-db", "stage 2: build the retrieval stores");
    add_common(db);
    auto* tr = app.add_subcommand("train", "stage 3: train under a missing condition");
    add_common(tr);
    tr->add_option("--condition", opt.condition, "missing condition (a|v|l|av|al|vl)");
    auto* ev = app.add_subcommand("eval", "cross-validated six-condition grid");
    add_common(ev);
    auto* ab = app.add_subcommand("ablate", "ablation grid");
    add_common(ab);
    ab->add_flag("--full", opt.ablate_full, "all tiers and k values");
    auto* rp = app.add_subcommand("report", "merge results csv files into one markdown table");
    rp->add_option("inputs", opt.report_inputs, "results csv files");
    rp->add_option("-o,--out", opt.report_out, "output markdown path");
    rp->add_flag("--force", opt.force, "overwrite existing output");
    auto* ex = app.add_subcommand("export-hidden", "sample stored hidden features to csv");
    add_common(ex);
    ex->add_option("--n", opt.export_n, "records per modality");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(opt);
        if (pre->parsed()) return cmd_pretrain(opt);
        if (db->parsed()) return cmd_build_db(opt);
        if (tr->parsed()) return cmd_train(opt);
        if (ev->parsed()) return cmd_eval(opt);
        if (ab->parsed()) return cmd_ablate(opt);
        if (rp->parsed()) return cmd_report(opt);
        if (ex->parsed()) return cmd_export_hidden(opt);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.kind()) {
            case ErrorKind::Config: return kExitConfig;
            case ErrorKind::Parse: return kExitArtifact;
            case ErrorKind::Artifact: return kExitArtifact;
            default: return kExitRuntime;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
