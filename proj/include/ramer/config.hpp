#pragma once

#include <string>
#include <vector>

#include "ramer/eval.hpp"

namespace ramer {

// One configuration file drives every stage. All persisted artifacts record
// the hash of the config sections that produced them, and downstream
// commands refuse to run against mismatching artifacts.
struct RunConfig {
    uint64_t seed = 1;
    std::string out_dir = "out";

    bool synthetic = true;
    SyntheticConfig synth;
    std::string manifest_path;
    std::array<std::string, 3> feature_paths;

    TrainConfig train;            // stage 1; stage 3 reuses it
    CompletionConfig completion;
    ScaleTier tier = ScaleTier::Turbo;
    std::vector<MissingCondition> conditions;  // defaults to the six-condition grid
    bool freeze_encoders = false;
    int cv_folds = 5;
    int cv_repeats = 3;
    int jobs = 1;

    static RunConfig from_file(const std::string& path);
    static RunConfig from_json_text(const std::string& text, const std::string& origin);
    std::string canonical_json() const;

    uint64_t dataset_hash() const;   // dataset section + seed
    uint64_t pretrain_hash() const;  // dataset + train sections + seed
    uint64_t full_hash() const;

    EvalSetup eval_setup() const;

    // Artifact locations under out_dir.
    std::string manifest_file() const;
    std::string features_file(Modality m) const;
    std::string checkpoint_file() const;
    std::string store_dir(StoreSource source) const;
    std::string model_file(const MissingCondition& c) const;
    std::string reports_dir() const;
};

}  // namespace ramer
