#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ramer/numerics.hpp"

namespace ramer {

inline constexpr int kNumClasses = 6;

enum class EmotionLabel : int { Happy = 0, Angry, Sad, Neutral, Worried, Surprise };
const char* label_name(EmotionLabel l);
std::optional<EmotionLabel> parse_label(std::string_view s);  // case-insensitive

enum class Split : int { Train = 0, Val, Test, Unlabeled };
const char* split_name(Split s);
std::optional<Split> parse_split(std::string_view s);

enum class Modality : int { Audio = 0, Video = 1, Text = 2 };
inline constexpr std::array<Modality, 3> kAllModalities{Modality::Audio, Modality::Video,
                                                        Modality::Text};
const char* modality_name(Modality m);
// Condition codes: a = audio, v = video, l = text.
char modality_code(Modality m);

struct Sample {
    std::string id;
    std::optional<EmotionLabel> label;
    Split split = Split::Unlabeled;
    // Embeddings are held at file precision (float32) so written corpora and
    // reloaded ones compare equal; all arithmetic on them is in doubles.
    std::array<std::optional<std::vector<float>>, 3> embeddings;

    bool has_embedding(Modality m) const { return embeddings[static_cast<int>(m)].has_value(); }
    const std::vector<float>& embedding(Modality m) const;
};

struct Corpus {
    std::array<int, 3> dims{0, 0, 0};
    std::vector<Sample> samples;
    std::unordered_map<std::string, int> index;  // id -> position in samples

    void add(Sample s);  // rejects empty or duplicate ids
    const Sample* find(const std::string& id) const;
    int dim(Modality m) const { return dims[static_cast<int>(m)]; }
    std::vector<int> indices_with_split(Split s) const;
    std::vector<int> labeled_indices() const;
    std::vector<int> unlabeled_indices() const;
};

std::array<long, kNumClasses> label_histogram(const Corpus& c);

struct SyntheticConfig {
    int n_labeled = 3000;
    int n_unlabeled = 12000;
    std::array<double, kNumClasses> class_priors = default_priors();
    std::array<int, 3> dims{1024, 768, 5120};
    int latent_dim = 32;
    double cluster_separation = 3.0;
    double cross_modal_correlation = 0.8;  // rho
    double noise_sigma = 1.0;
    double label_noise_rate = 0.0;
    uint64_t seed = 1;

    static std::array<double, kNumClasses> default_priors();
    void validate() const;  // throws Config
};

// The latent generator behind a synthetic corpus: per-class anchors in a
// shared latent space and one orthonormal-column projection per modality.
// Deterministic for a given config; exposed so tests can invert projections.
struct SyntheticModel {
    int latent_dim = 0;
    std::array<num::Vec, kNumClasses> anchors;
    std::array<num::Mat, 3> projections;  // dims[m] x latent_dim
};
SyntheticModel make_synthetic_model(const SyntheticConfig& cfg);

Corpus generate_synthetic(const SyntheticConfig& cfg);

// Stratified 8:1:1 split of the labeled samples; unlabeled untouched.
Corpus split_corpus(Corpus c, uint64_t seed);

// Stratified k-fold partition of labeled sample indices.
std::vector<std::vector<int>> stratified_folds(const Corpus& c, int k, uint64_t seed);

enum class ScaleTier : int { Small = 0, Medium, Large, Turbo };
const char* tier_name(ScaleTier t);
std::optional<ScaleTier> parse_tier(std::string_view s);

// Ids populating the retrieval database at the given tier, in corpus order.
//   Small  = labeled only
//   Medium = labeled + seeded half of the unlabeled
//   Large  = all unlabeled
//   Turbo  = labeled + unlabeled
std::vector<std::string> tier_members(const Corpus& c, ScaleTier tier, uint64_t seed);

// Manifest: UTF-8 JSON object per line with fields id, label?, split?.
void save_manifest(const Corpus& c, const std::string& path);
Corpus load_manifest(const std::string& path);

// Feature files use the RFV1 binary format shared with the vector store.
void save_features(const Corpus& c, Modality m, const std::string& path);
void load_features(Corpus& c, Modality m, const std::string& path);

}  // namespace ramer
