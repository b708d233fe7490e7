#pragma once

#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "ramer/vecstore.hpp"

namespace ramer {

// Which modalities are present at train/test time. The evaluation grid
// enumerates the six conditions a, v, l, av, al, vl; the full "avl" code is
// accepted only where an all-modalities completion is explicitly wanted.
struct MissingCondition {
    std::array<bool, 3> available{false, false, false};

    static MissingCondition parse(std::string_view code);  // throws Config
    std::string code() const;
    bool is_available(Modality m) const { return available[static_cast<int>(m)]; }
    int n_available() const;
    bool is_grid_condition() const {
        const int n = n_available();
        return n >= 1 && n <= 2;
    }
    static const std::vector<MissingCondition>& grid();
    bool operator==(const MissingCondition&) const = default;
};

enum class DbSource : int { Hidden = 0, Raw = 1 };
enum class KeepMiss : int { Replace = 0, Average = 1 };

struct CompletionConfig {
    int k = 10;
    kernels::Metric metric = kernels::Metric::Cosine;
    DbSource db_source = DbSource::Hidden;
    KeepMiss keep_miss = KeepMiss::Replace;
    bool retrieval = true;  // false: missing slots are zero vectors
};

struct RunStats {
    long degenerate_fusions = 0;
    long leaked = 0;      // retrieved ids found in the exclusion set (must stay 0)
    long retrievals = 0;  // completed queries
    void merge(const RunStats& o) {
        degenerate_fusions += o.degenerate_fusions;
        leaked += o.leaked;
        retrievals += o.retrievals;
    }
};

// Sum the retrieved features and L2-normalize the sum. A degenerate sum
// (norm below threshold) falls back to the first vector normalized and is
// counted by the caller.
struct FuseResult {
    num::Vec vec;
    bool degenerate = false;
};
FuseResult fuse_topk(const std::vector<num::Vec>& vs);

// Concatenate per-modality features in fixed order (audio, video, text).
// Each slot must be covered exactly once across the two maps.
num::Vec complete_features(const std::array<const num::Vec*, 3>& hidden,
                           const std::array<const num::Vec*, 3>& fused);

// Inference-mode hidden features for the available modalities only.
std::array<std::optional<num::Vec>, 3> infer_available_hidden(
    const Sample& sample, const MissingCondition& cond,
    const std::array<EncoderParams, 3>& encoders);

// Retrieval context for one run: the hidden (value) store, the optional raw
// key store, and the run-level exclusion ids (validation and test members).
// The query's own id is excluded per call.
class Completer {
public:
    Completer(const AlignedStore& hidden_store, const AlignedStore* raw_store,
              CompletionConfig cfg, const std::unordered_set<std::string>& excluded_ids);

    // Per missing modality: the retrieved substitute vectors (k per available
    // modality, concatenated when two modalities are available).
    std::array<std::vector<num::Vec>, 3> retrieve_substitutes(
        const Sample& sample, const std::array<std::optional<num::Vec>, 3>& hidden,
        const MissingCondition& cond, RunStats& stats) const;

    // Full completion of one sample: available slots from the given hidden
    // features, missing slots from retrieval + fusion (or zeros / keep-miss
    // averaging per config).
    num::Vec complete_one(const Sample& sample,
                          const std::array<std::optional<num::Vec>, 3>& hidden,
                          const MissingCondition& cond,
                          const std::array<const num::Vec*, 3>& miss_hidden,
                          RunStats& stats) const;

    const CompletionConfig& config() const { return cfg_; }
    const AlignedStore& value_store() const { return hidden_store_; }

private:
    const ModalityStore& key_store(Modality m) const;
    const AlignedStore& hidden_store_;
    const AlignedStore* raw_store_;
    CompletionConfig cfg_;
    std::unordered_set<std::string> excluded_ids_;
    std::array<RowMask, 3> masks_;  // over the key stores
};

struct JointClassifierParams {
    num::Mat w;  // 768 x 6
    num::Vec b;
};

struct Stage3Model {
    std::array<EncoderParams, 3> encoders;
    JointClassifierParams joint;
    MissingCondition condition;
    CompletionConfig completion;
    ScaleTier tier = ScaleTier::Turbo;
    bool froze_encoders = false;
    int best_epoch = -1;
    double val_wa = 0.0;
    uint64_t seed = 0;
    uint64_t checkpoint_hash = 0;
    uint64_t store_hash = 0;
};

// Stage 3: fine-tune the available-modality encoders (unless frozen) and a
// joint classifier over the completed 768-d features. Retrieved substitutes
// are constants in backprop. Best-validation-WA weights are returned.
Stage3Model train_missing(const Corpus& corpus, const MissingCondition& cond,
                          const Checkpoint& ckpt, const Completer& completer,
                          const TrainConfig& cfg, bool freeze_encoders,
                          RunStats* stats = nullptr);

struct Prediction {
    EmotionLabel label;
    num::Vec posterior;
};
Prediction predict(const Sample& sample, const Stage3Model& model, const Completer& completer,
                   RunStats* stats = nullptr);

// Predictions over all samples of one split, in corpus order.
std::vector<int> predict_split(const Corpus& corpus, Split split, const Stage3Model& model,
                               const Completer& completer, RunStats* stats = nullptr);

void save_stage3(const std::string& path, const Stage3Model& m);
Stage3Model load_stage3(const std::string& path);

// Completed feature rows for a set of samples under the model's encoders.
num::Mat completed_matrix(const Corpus& corpus, const std::vector<int>& idxs,
                          const MissingCondition& cond,
                          const std::array<EncoderParams, 3>& encoders,
                          const Completer& completer, RunStats& stats,
                          std::array<ForwardBatch, 3>* fbs = nullptr);

}  // namespace ramer
