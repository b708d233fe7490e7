#include "ramer/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "ramer/rng.hpp"

namespace ramer {

long ConfusionMatrix::total() const {
    long t = 0;
    for (const auto& row : counts)
        for (long v : row) t += v;
    return t;
}

long ConfusionMatrix::diagonal() const {
    long t = 0;
    for (int c = 0; c < kNumClasses; ++c) t += counts[c][c];
    return t;
}

long ConfusionMatrix::row_total(int c) const {
    long t = 0;
    for (long v : counts[c]) t += v;
    return t;
}

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> truths) {
    if (preds.size() != truths.size())
        throw_error(ErrorKind::Config, "confusion: length mismatch");
    ConfusionMatrix cm;
    for (size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] < 0 || preds[i] >= kNumClasses || truths[i] < 0 ||
            truths[i] >= kNumClasses)
            throw_error(ErrorKind::Config, "confusion: label out of range");
        ++cm.counts[truths[i]][preds[i]];
    }
    return cm;
}

double weighted_accuracy(const ConfusionMatrix& cm) {
    const long tot = cm.total();
    if (tot == 0) throw_error(ErrorKind::Config, "weighted_accuracy: empty confusion matrix");
    return 100.0 * static_cast<double>(cm.diagonal()) / static_cast<double>(tot);
}

double unweighted_accuracy(const ConfusionMatrix& cm) {
    double sum = 0.0;
    int represented = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        const long rt = cm.row_total(c);
        if (rt == 0) continue;  // classes without support are excluded
        sum += static_cast<double>(cm.counts[c][c]) / static_cast<double>(rt);
        ++represented;
    }
    if (represented == 0)
        throw_error(ErrorKind::Config, "unweighted_accuracy: no represented classes");
    return 100.0 * sum / represented;
}

Metrics metrics_from(const ConfusionMatrix& cm) {
    return {weighted_accuracy(cm), unweighted_accuracy(cm)};
}

GridCell summarize(const std::vector<Metrics>& ms) {
    GridCell c;
    c.runs = static_cast<int>(ms.size());
    if (ms.empty()) return c;
    for (const auto& m : ms) {
        c.wa_mean += m.wa;
        c.ua_mean += m.ua;
    }
    c.wa_mean /= c.runs;
    c.ua_mean /= c.runs;
    if (c.runs > 1) {
        double vw = 0.0, vu = 0.0;
        for (const auto& m : ms) {
            vw += (m.wa - c.wa_mean) * (m.wa - c.wa_mean);
            vu += (m.ua - c.ua_mean) * (m.ua - c.ua_mean);
        }
        c.wa_std = std::sqrt(vw / (c.runs - 1));
        c.ua_std = std::sqrt(vu / (c.runs - 1));
    }
    return c;
}

GridCell RunGrid::average() const {
    GridCell avg;
    if (cells.empty()) return avg;
    for (const auto& [code, cell] : cells) {
        avg.wa_mean += cell.wa_mean;
        avg.ua_mean += cell.ua_mean;
        avg.wa_std += cell.wa_std;
        avg.ua_std += cell.ua_std;
        avg.runs = cell.runs;
    }
    const double n = static_cast<double>(cells.size());
    avg.wa_mean /= n;
    avg.ua_mean /= n;
    avg.wa_std /= n;
    avg.ua_std /= n;
    return avg;
}

namespace {

// Splits for one CV run: fold f is test, fold (f+1)%k val, the rest train.
Corpus assign_fold_splits(Corpus c, const std::vector<std::vector<int>>& folds, int f) {
    const int k = static_cast<int>(folds.size());
    for (auto& s : c.samples)
        if (s.label) s.split = Split::Train;
    for (int i : folds[(f + 1) % k]) c.samples[i].split = Split::Val;
    for (int i : folds[f]) c.samples[i].split = Split::Test;
    return c;
}

std::unordered_set<std::string> heldout_ids(const Corpus& c) {
    std::unordered_set<std::string> out;
    for (const auto& s : c.samples)
        if (s.split == Split::Val || s.split == Split::Test) out.insert(s.id);
    return out;
}

struct RunOutput {
    std::vector<std::pair<std::string, Metrics>> per_condition;  // condition code -> metrics
    std::vector<std::pair<std::string, RunStats>> per_condition_stats;
};

// One full-pipeline run on an already-split corpus, shared across conditions
// and completion variants.
RunOutput run_once(const Corpus& corpus, const std::vector<MissingCondition>& conds,
                   const std::vector<std::pair<std::string, CompletionConfig>>& systems,
                   const EvalSetup& setup, uint64_t run_seed,
                   std::vector<SingleRunResult>* detail = nullptr) {
    TrainConfig s1 = setup.stage1;
    s1.seed = derive_seed(run_seed, "stage1");
    const Checkpoint ckpt = pretrain_full_modality(corpus, s1);

    bool need_raw = false;
    for (const auto& [name, cc] : systems)
        if (cc.db_source == DbSource::Raw) need_raw = true;

    const uint64_t tier_seed = derive_seed(run_seed, "tier");
    const AlignedStore hidden_store =
        build_store_tier(corpus, ckpt, setup.tier, tier_seed, StoreSource::Hidden);
    AlignedStore raw_store;
    if (need_raw)
        raw_store = build_store_tier(corpus, ckpt, setup.tier, tier_seed, StoreSource::Raw);

    const auto excluded = heldout_ids(corpus);
    const auto test_idx = corpus.indices_with_split(Split::Test);
    std::vector<int> truths(test_idx.size());
    for (size_t i = 0; i < test_idx.size(); ++i)
        truths[i] = static_cast<int>(*corpus.samples[test_idx[i]].label);

    RunOutput out;
    for (const auto& [sys_name, completion] : systems) {
        Completer completer(hidden_store, need_raw ? &raw_store : nullptr, completion, excluded);
        for (const auto& cond : conds) {
            TrainConfig s3 = setup.stage3;
            s3.seed = derive_seed(run_seed, "stage3", std::hash<std::string>{}(sys_name),
                                  std::hash<std::string>{}(cond.code()));
            RunStats stats;
            const Stage3Model model = train_missing(corpus, cond, ckpt, completer, s3,
                                                    setup.freeze_encoders, &stats);
            const std::vector<int> preds = predict_split(corpus, Split::Test, model, completer,
                                                         &stats);
            const Metrics m = metrics_from(confusion(preds, truths));
            out.per_condition.push_back({cond.code(), m});
            out.per_condition_stats.push_back({cond.code(), stats});
            if (detail)
                detail->push_back({sys_name, cond.code(), m, stats, model.val_wa});
        }
    }
    return out;
}

}  // namespace

RunGrid cross_validate_grid(const Corpus& corpus, const std::vector<MissingCondition>& conds,
                            const EvalSetup& setup, const std::string& system_name,
                            std::vector<RunRecord>* all_runs) {
    for (const auto& c : conds)
        if (!c.is_grid_condition())
            throw_error(ErrorKind::Config, "cross_validate: condition '" + c.code() +
                                               "' is not a grid condition");
    if (setup.folds < 3)
        throw_error(ErrorKind::Config,
                    "cross_validate: needs >= 3 folds (one test, one val, rest train)");
    struct RunTask {
        int repeat, fold;
        uint64_t seed;
    };
    std::vector<RunTask> tasks;
    for (int r = 0; r < setup.repeats; ++r)
        for (int f = 0; f < setup.folds; ++f)
            tasks.push_back({r, f, derive_seed(setup.master_seed, "cv-run",
                                               static_cast<uint64_t>(r),
                                               static_cast<uint64_t>(f))});

    std::vector<RunOutput> outputs(tasks.size());
    const std::vector<std::pair<std::string, CompletionConfig>> systems = {
        {system_name, setup.completion}};

    auto run_task = [&](size_t t) {
        const auto folds = stratified_folds(
            corpus, setup.folds,
            derive_seed(setup.master_seed, "cv-folds", static_cast<uint64_t>(tasks[t].repeat)));
        const Corpus run_corpus = assign_fold_splits(corpus, folds, tasks[t].fold);
        outputs[t] = run_once(run_corpus, conds, systems, setup, tasks[t].seed);
    };

    const int jobs = std::max(1, setup.jobs);
    if (jobs <= 1) {
        for (size_t t = 0; t < tasks.size(); ++t) run_task(t);
    } else {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        for (int j = 0; j < jobs; ++j)
            pool.emplace_back([&] {
                for (;;) {
                    const size_t t = next.fetch_add(1);
                    if (t >= tasks.size()) return;
                    run_task(t);
                }
            });
        for (auto& th : pool) th.join();
    }

    RunGrid grid;
    grid.system = system_name;
    for (const auto& cond : conds) {
        std::vector<Metrics> ms;
        for (size_t t = 0; t < tasks.size(); ++t) {
            for (size_t i = 0; i < outputs[t].per_condition.size(); ++i) {
                if (outputs[t].per_condition[i].first != cond.code()) continue;
                const Metrics m = outputs[t].per_condition[i].second;
                ms.push_back(m);
                if (all_runs)
                    all_runs->push_back({tasks[t].repeat, tasks[t].fold, tasks[t].seed, m,
                                         outputs[t].per_condition_stats[i].second});
            }
        }
        grid.cells.push_back({cond.code(), summarize(ms)});
    }
    return grid;
}

ConditionSummary cross_validate(const Corpus& corpus, const MissingCondition& cond,
                                const EvalSetup& setup) {
    std::vector<RunRecord> runs;
    const RunGrid grid = cross_validate_grid(corpus, {cond}, setup, "ramer", &runs);
    ConditionSummary s;
    s.cell = grid.cells.at(0).second;
    s.runs = std::move(runs);
    return s;
}

std::vector<AblationSpec> default_ablation_specs(bool full) {
    std::vector<AblationSpec> specs;
    const std::vector<ScaleTier> tiers = full ? std::vector<ScaleTier>{ScaleTier::Small,
                                                                       ScaleTier::Medium,
                                                                       ScaleTier::Large,
                                                                       ScaleTier::Turbo}
                                              : std::vector<ScaleTier>{ScaleTier::Small,
                                                                       ScaleTier::Turbo};
    const std::vector<int> ks = full ? std::vector<int>{1, 5, 10, 15}
                                     : std::vector<int>{1, 5, 10};
    for (ScaleTier t : tiers)
        for (int k : ks) {
            CompletionConfig cc;
            cc.k = k;
            specs.push_back({std::string(tier_name(t)) + "_top" + std::to_string(k), cc, t});
        }
    CompletionConfig off;
    off.retrieval = false;
    specs.push_back({"wo_retrieval", off, ScaleTier::Turbo});
    CompletionConfig raw;
    raw.db_source = DbSource::Raw;
    specs.push_back({"raw_db_top10", raw, ScaleTier::Turbo});
    CompletionConfig euc;
    euc.metric = kernels::Metric::Euclidean;
    specs.push_back({"euclidean_top10", euc, ScaleTier::Turbo});
    return specs;
}

std::vector<RunGrid> run_ablations(
    const Corpus& corpus, const std::vector<AblationSpec>& specs,
    const std::vector<MissingCondition>& conds, const EvalSetup& setup,
    std::vector<std::pair<std::string, RunRecord>>* labeled_runs) {
    std::vector<RunGrid> grids;
    for (const auto& spec : specs) {
        EvalSetup s = setup;
        s.completion = spec.completion;
        s.tier = spec.tier;
        std::vector<RunRecord> runs;
        grids.push_back(
            cross_validate_grid(corpus, conds, s, spec.name, labeled_runs ? &runs : nullptr));
        if (labeled_runs)
            for (const auto& r : runs) labeled_runs->push_back({spec.name, r});
    }
    return grids;
}

std::vector<SingleRunResult> evaluate_single_split(
    const Corpus& corpus, const std::vector<MissingCondition>& conds,
    const std::vector<std::pair<std::string, CompletionConfig>>& systems,
    const EvalSetup& setup) {
    std::vector<SingleRunResult> detail;
    run_once(corpus, conds, systems, setup, setup.master_seed, &detail);
    return detail;
}

namespace {

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

std::string render_report(const std::vector<RunGrid>& grids, ReportFormat format) {
    std::ostringstream os;
    const auto& order = MissingCondition::grid();
    if (format == ReportFormat::Markdown) {
        os << "| System | Runs |";
        for (const auto& c : order) os << " " << c.code() << " WA | " << c.code() << " UA |";
        os << " Avg WA | Avg UA |\n";
        os << "|---|---|";
        for (size_t i = 0; i < order.size() + 1; ++i) os << "---|---|";
        os << "\n";
        for (const auto& g : grids) {
            os << "| " << g.system << " | " << (g.cells.empty() ? 0 : g.cells[0].second.runs)
               << " |";
            for (const auto& c : order) {
                const GridCell* cell = nullptr;
                for (const auto& [code, cl] : g.cells)
                    if (code == c.code()) cell = &cl;
                if (cell)
                    os << " " << fmt2(cell->wa_mean) << " | " << fmt2(cell->ua_mean) << " |";
                else
                    os << " - | - |";
            }
            const GridCell avg = g.average();
            os << " " << fmt2(avg.wa_mean) << " | " << fmt2(avg.ua_mean) << " |\n";
        }
    } else {
        os << "system,runs,condition,wa_mean,wa_std,ua_mean,ua_std\n";
        for (const auto& g : grids) {
            for (const auto& [code, cell] : g.cells)
                os << g.system << "," << cell.runs << "," << code << "," << fmt2(cell.wa_mean)
                   << "," << fmt2(cell.wa_std) << "," << fmt2(cell.ua_mean) << ","
                   << fmt2(cell.ua_std) << "\n";
            if (!g.cells.empty()) {
                const GridCell avg = g.average();
                os << g.system << "," << avg.runs << ",Avg," << fmt2(avg.wa_mean) << ","
                   << fmt2(avg.wa_std) << "," << fmt2(avg.ua_mean) << "," << fmt2(avg.ua_std)
                   << "\n";
            }
        }
    }
    return os.str();
}

void emit_report(const std::vector<RunGrid>& grids, ReportFormat format,
                 const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw_error(ErrorKind::Runtime, "cannot open report for writing: " + path);
    out << render_report(grids, format);
    if (!out) throw_error(ErrorKind::Runtime, "report write failed: " + path);
}

void write_run_log(const std::vector<std::pair<std::string, RunRecord>>& rows,
                   uint64_t config_hash, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw_error(ErrorKind::Runtime, "cannot open run log: " + path);
    for (const auto& [label, r] : rows) {
        nlohmann::json j;
        j["label"] = label;
        j["repeat"] = r.repeat;
        j["fold"] = r.fold;
        j["seed"] = r.seed;
        j["config_hash"] = config_hash;
        j["wa"] = r.metrics.wa;
        j["ua"] = r.metrics.ua;
        j["degenerate_fusions"] = r.stats.degenerate_fusions;
        j["leaked"] = r.stats.leaked;
        j["retrievals"] = r.stats.retrievals;
        out << j.dump() << "\n";
    }
}

void export_hidden_csv(const AlignedStore& store, int n, uint64_t seed, const std::string& path,
                       const std::map<std::string, EmotionLabel>* labels) {
    if (n < 0 || n > store.count())
        throw_error(ErrorKind::Config, "export_hidden_csv: n out of range (store holds " +
                                           std::to_string(store.count()) + ")");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw_error(ErrorKind::Runtime, "cannot open csv for writing: " + path);
    out << "modality,id,label";
    for (int j = 0; j < store.stores[0].dim; ++j) out << ",h" << j;
    out << "\n";
    char buf[64];
    for (Modality m : kAllModalities) {
        const ModalityStore& st = store.of(m);
        std::vector<int> rows(st.count());
        for (int i = 0; i < st.count(); ++i) rows[i] = i;
        Rng rng(derive_seed(seed, "export", static_cast<uint64_t>(m)));
        rng.shuffle(rows);
        rows.resize(n);
        for (int r : rows) {
            out << modality_name(m) << "," << st.ids[r] << ",";
            if (labels) {
                auto it = labels->find(st.ids[r]);
                if (it != labels->end()) out << label_name(it->second);
            }
            const auto row = st.row(r);
            for (float x : row) {
                std::snprintf(buf, sizeof(buf), ",%.9g", static_cast<double>(x));
                out << buf;
            }
            out << "\n";
        }
    }
}

}  // namespace ramer
