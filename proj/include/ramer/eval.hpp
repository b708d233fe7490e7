#pragma once

#include <map>
#include <string>
#include <vector>

#include "ramer/pipeline.hpp"

namespace ramer {

struct ConfusionMatrix {
    std::array<std::array<long, kNumClasses>, kNumClasses> counts{};  // [true][pred]
    long total() const;
    long diagonal() const;
    long row_total(int c) const;
};

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> truths);

// WA: overall accuracy (percent). UA: mean per-class recall over classes with
// support (percent).
double weighted_accuracy(const ConfusionMatrix& cm);
double unweighted_accuracy(const ConfusionMatrix& cm);

struct Metrics {
    double wa = 0.0;
    double ua = 0.0;
};
Metrics metrics_from(const ConfusionMatrix& cm);

struct EvalSetup {
    TrainConfig stage1;
    TrainConfig stage3;
    CompletionConfig completion;
    ScaleTier tier = ScaleTier::Turbo;
    bool freeze_encoders = false;
    uint64_t master_seed = 1;
    int folds = 5;
    int repeats = 3;
    int jobs = 1;
};

struct RunRecord {
    int repeat = 0;
    int fold = 0;
    uint64_t seed = 0;
    Metrics metrics;
    RunStats stats;
};

struct GridCell {
    double wa_mean = 0.0, wa_std = 0.0;
    double ua_mean = 0.0, ua_std = 0.0;
    int runs = 0;
};
GridCell summarize(const std::vector<Metrics>& ms);

struct ConditionSummary {
    GridCell cell;
    std::vector<RunRecord> runs;
};

struct RunGrid {
    std::string system;
    // condition code -> cell, in grid order; "Avg" is appended on emission
    std::vector<std::pair<std::string, GridCell>> cells;
    GridCell average() const;
};

// folds x repeats stratified cross-validation of the full pipeline for one
// condition: per run the fold is the test set, the next fold the validation
// set, the rest train; stage 1 is re-trained per run on that train split and
// the store rebuilt from it, and the run's val/test ids are excluded from
// retrieval.
ConditionSummary cross_validate(const Corpus& corpus, const MissingCondition& cond,
                                const EvalSetup& setup);

// Same protocol, sharing the per-run pretraining and store across conditions.
RunGrid cross_validate_grid(const Corpus& corpus, const std::vector<MissingCondition>& conds,
                            const EvalSetup& setup, const std::string& system_name,
                            std::vector<RunRecord>* all_runs = nullptr);

struct AblationSpec {
    std::string name;
    CompletionConfig completion;
    ScaleTier tier = ScaleTier::Turbo;
};
// Desk-scale grid: tiers {small, turbo} x k {1, 5, 10} plus the
// no-retrieval, raw-database and euclidean variants; full adds the medium
// and large tiers and k = 15.
std::vector<AblationSpec> default_ablation_specs(bool full);

std::vector<RunGrid> run_ablations(
    const Corpus& corpus, const std::vector<AblationSpec>& specs,
    const std::vector<MissingCondition>& conds, const EvalSetup& setup,
    std::vector<std::pair<std::string, RunRecord>>* labeled_runs = nullptr);

// One 8:1:1-split run per system sharing stage 1 and the stores; used by the
// trend checks and the CLI train command.
struct SingleRunResult {
    std::string system;
    std::string condition;
    Metrics metrics;
    RunStats stats;
    double stage3_val_wa = 0.0;
};
std::vector<SingleRunResult> evaluate_single_split(
    const Corpus& corpus, const std::vector<MissingCondition>& conds,
    const std::vector<std::pair<std::string, CompletionConfig>>& systems,
    const EvalSetup& setup);

enum class ReportFormat { Markdown, Csv };
// Stable layout: one row per system; per condition a WA and a UA column plus
// the Avg pair; numbers at two decimals.
void emit_report(const std::vector<RunGrid>& grids, ReportFormat format,
                 const std::string& path);
std::string render_report(const std::vector<RunGrid>& grids, ReportFormat format);

void write_run_log(const std::vector<std::pair<std::string, RunRecord>>& rows,
                   uint64_t config_hash, const std::string& path);

// Seeded sample of n records per modality as CSV (id, label when known, and
// the stored vector).
void export_hidden_csv(const AlignedStore& store, int n, uint64_t seed, const std::string& path,
                       const std::map<std::string, EmotionLabel>* labels = nullptr);

}  // namespace ramer
