#pragma once

#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "ramer/encoder.hpp"
#include "ramer/kernels.hpp"

namespace ramer {

// What the records of a store are built from. Hidden stores hold the
// L2-normalized 256-d encoder features; raw stores hold the raw embeddings
// as-is (un-normalized, per-modality dims), used only as retrieval keys in
// the raw-database ablation.
enum class StoreSource : int { Hidden = 0, Raw = 1 };

struct SearchHit {
    std::string sample_id;
    double score;  // cosine similarity (descending) or euclidean distance (ascending)
};

struct ModalityStore {
    Modality modality{};
    int dim = 0;
    bool normalized = false;
    std::vector<std::string> ids;  // row -> sample id
    std::vector<float> data;       // row-major, ids.size() x dim
    std::vector<double> norms;     // per-row norm of the quantized vector
    std::vector<int> lex_rank;     // row -> rank of id in lexicographic order
    std::unordered_map<std::string, int> id_index;

    int count() const { return static_cast<int>(ids.size()); }
    std::span<const float> row(int r) const {
        return {data.data() + static_cast<size_t>(r) * dim, static_cast<size_t>(dim)};
    }
    void add_row(std::string id, std::span<const float> v);
    void finalize();  // builds norms, lex_rank and id_index
};

struct AlignedStore {
    std::array<ModalityStore, 3> stores;
    StoreSource source = StoreSource::Hidden;
    ScaleTier tier = ScaleTier::Turbo;
    uint64_t checkpoint_hash = 0;

    const ModalityStore& of(Modality m) const { return stores[static_cast<int>(m)]; }
    int count() const { return stores[0].count(); }
};

// Stage 2: run the pretrained encoders over the tier members (inference
// mode), L2-normalize each hidden feature and insert it into the three
// aligned stores. Raw source skips the encoders and normalization.
AlignedStore build_store(const Corpus& corpus, const std::vector<std::string>& member_ids,
                         const Checkpoint& ckpt, StoreSource source);
AlignedStore build_store_tier(const Corpus& corpus, const Checkpoint& ckpt, ScaleTier tier,
                              uint64_t seed, StoreSource source);

// Precomputed exclusion mask over store rows.
struct RowMask {
    std::vector<uint8_t> excluded;
    int matched = 0;
};
RowMask make_row_mask(const ModalityStore& s, const std::unordered_set<std::string>& ids);

// Exact scan. Results sorted by descending cosine score / ascending
// euclidean distance, ties by ascending sample id; excluded ids never
// returned; length = min(k, candidates). Throws when no candidate remains.
std::vector<SearchHit> search_topk(const ModalityStore& s, std::span<const double> query, int k,
                                   const std::unordered_set<std::string>& exclusions,
                                   kernels::Metric metric);
std::vector<SearchHit> search_topk_masked(const ModalityStore& s, std::span<const double> query,
                                          int k, const RowMask& mask, int extra_excluded_row,
                                          kernels::Metric metric);

// Order-preserving lookup of stored vectors by id in the target modality.
std::vector<num::Vec> cross_lookup(const AlignedStore& s, const std::vector<std::string>& ids,
                                   Modality target);

// Persistence: a directory holding one RFV1 file per modality plus a
// store.json manifest (shared id list, tier, source, checkpoint hash).
void save_store(const std::string& dir, const AlignedStore& s);
AlignedStore load_store(const std::string& dir);

}  // namespace ramer
