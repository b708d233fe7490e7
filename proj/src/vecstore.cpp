#include "ramer/vecstore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "ramer/io.hpp"

namespace ramer {

void ModalityStore::add_row(std::string id, std::span<const float> v) {
    if (static_cast<int>(v.size()) != dim)
        throw_error(ErrorKind::Runtime, "store row dim mismatch for id " + id);
    ids.push_back(std::move(id));
    data.insert(data.end(), v.begin(), v.end());
}

void ModalityStore::finalize() {
    const int n = count();
    norms.assign(n, 0.0);
    for (int r = 0; r < n; ++r) {
        double acc = 0.0;
        const float* row = data.data() + static_cast<size_t>(r) * dim;
        for (int j = 0; j < dim; ++j)
            acc += static_cast<double>(row[j]) * static_cast<double>(row[j]);
        norms[r] = std::sqrt(acc);
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return ids[a] < ids[b]; });
    lex_rank.assign(n, 0);
    for (int rank = 0; rank < n; ++rank) lex_rank[order[rank]] = rank;
    id_index.clear();
    id_index.reserve(n);
    for (int r = 0; r < n; ++r) {
        if (!id_index.emplace(ids[r], r).second)
            throw_error(ErrorKind::Runtime, "duplicate id in store: " + ids[r]);
    }
}

AlignedStore build_store(const Corpus& corpus, const std::vector<std::string>& member_ids,
                         const Checkpoint& ckpt, StoreSource source) {
    if (source == StoreSource::Hidden && ckpt.dims != corpus.dims)
        throw_error(ErrorKind::Artifact, "checkpoint dims do not match corpus dims");
    AlignedStore out;
    out.source = source;
    out.checkpoint_hash = 0;

    std::vector<int> rows;
    rows.reserve(member_ids.size());
    for (const auto& id : member_ids) {
        const Sample* s = corpus.find(id);
        if (!s) throw_error(ErrorKind::Artifact, "tier member not in corpus: " + id);
        for (Modality m : kAllModalities)
            if (!s->has_embedding(m))
                throw_error(ErrorKind::Artifact, "tier member " + id + " lacks a " +
                                                     std::string(modality_name(m)) +
                                                     " embedding");
        rows.push_back(corpus.index.at(id));
    }

    for (int mi = 0; mi < 3; ++mi) {
        const Modality m = static_cast<Modality>(mi);
        ModalityStore& st = out.stores[mi];
        st.modality = m;
        st.normalized = source == StoreSource::Hidden;
        st.dim = source == StoreSource::Hidden ? kHiddenDim : corpus.dim(m);
        st.ids.reserve(rows.size());
        st.data.reserve(rows.size() * static_cast<size_t>(st.dim));

        if (source == StoreSource::Raw) {
            for (int idx : rows) {
                const Sample& s = corpus.samples[idx];
                st.add_row(s.id, s.embedding(m));
            }
        } else {
            constexpr size_t kChunk = 256;
            const int d = corpus.dim(m);
            num::Mat X;
            ForwardBatch fb;
            std::vector<float> q(kHiddenDim);
            for (size_t lo = 0; lo < rows.size(); lo += kChunk) {
                const size_t hi = std::min(rows.size(), lo + kChunk);
                const int n = static_cast<int>(hi - lo);
                X.resize(n, d);
                for (int b = 0; b < n; ++b) {
                    const auto& e = corpus.samples[rows[lo + b]].embedding(m);
                    double* xr = X.row(b);
                    for (int j = 0; j < d; ++j) xr[j] = e[j];
                }
                encoder_forward_batch(ckpt.encoders[mi], X.data(), n, RunMode::Infer, 0.0, 0, fb);
                for (int b = 0; b < n; ++b) {
                    const Sample& s = corpus.samples[rows[lo + b]];
                    num::Vec h;
                    try {
                        h = num::l2_normalize(
                            std::span<const double>(fb.h.row(b), kHiddenDim));
                    } catch (const Error&) {
                        throw_error(ErrorKind::Runtime,
                                    "degenerate hidden feature for sample " + s.id);
                    }
                    for (int j = 0; j < kHiddenDim; ++j) q[j] = static_cast<float>(h[j]);
                    st.add_row(s.id, q);
                }
            }
        }
        st.finalize();
    }
    return out;
}

AlignedStore build_store_tier(const Corpus& corpus, const Checkpoint& ckpt, ScaleTier tier,
                              uint64_t seed, StoreSource source) {
    AlignedStore s = build_store(corpus, tier_members(corpus, tier, seed), ckpt, source);
    s.tier = tier;
    return s;
}

RowMask make_row_mask(const ModalityStore& s, const std::unordered_set<std::string>& ids) {
    RowMask m;
    m.excluded.assign(s.count(), 0);
    for (const auto& id : ids) {
        auto it = s.id_index.find(id);
        if (it != s.id_index.end()) {
            m.excluded[it->second] = 1;
            ++m.matched;
        }
    }
    return m;
}

namespace {

std::vector<SearchHit> run_scan(const ModalityStore& s, std::span<const double> query, int k,
                                const uint8_t* excluded, int n_excluded, int extra_row,
                                kernels::Metric metric) {
    if (k < 1) throw_error(ErrorKind::Config, "search_topk: k must be >= 1");
    if (static_cast<int>(query.size()) != s.dim)
        throw_error(ErrorKind::Config, "search_topk: query dim " + std::to_string(query.size()) +
                                           " != store dim " + std::to_string(s.dim));
    int effective = s.count() - n_excluded;
    if (extra_row >= 0 && (!excluded || !excluded[extra_row])) --effective;
    if (effective <= 0)
        throw_error(ErrorKind::Runtime, "search_topk: no candidate records after exclusions");

    // Searches run against the quantized (float32) records, so the query is
    // quantized the same way.
    std::vector<float> q(query.size());
    for (size_t i = 0; i < query.size(); ++i) q[i] = static_cast<float>(query[i]);
    if (metric == kernels::Metric::Cosine) {
        double qn = 0.0;
        for (float x : q) qn += static_cast<double>(x) * static_cast<double>(x);
        if (std::sqrt(qn) <= num::kNormEps)
            throw_error(ErrorKind::Degenerate, "search_topk: zero-norm query");
    }
    const auto rows = kernels::topk_scan(s.data.data(), s.norms.data(), s.count(), s.dim,
                                         q.data(), k, metric, s.lex_rank.data(), excluded,
                                         extra_row);
    std::vector<SearchHit> hits;
    hits.reserve(rows.size());
    for (const auto& rh : rows) hits.push_back({s.ids[rh.row], rh.score});
    return hits;
}

}  // namespace

std::vector<SearchHit> search_topk(const ModalityStore& s, std::span<const double> query, int k,
                                   const std::unordered_set<std::string>& exclusions,
                                   kernels::Metric metric) {
    const RowMask mask = make_row_mask(s, exclusions);
    return run_scan(s, query, k, mask.excluded.data(), mask.matched, -1, metric);
}

std::vector<SearchHit> search_topk_masked(const ModalityStore& s, std::span<const double> query,
                                          int k, const RowMask& mask, int extra_excluded_row,
                                          kernels::Metric metric) {
    return run_scan(s, query, k, mask.excluded.data(), mask.matched, extra_excluded_row, metric);
}

std::vector<num::Vec> cross_lookup(const AlignedStore& s, const std::vector<std::string>& ids,
                                   Modality target) {
    const ModalityStore& st = s.of(target);
    std::vector<num::Vec> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = st.id_index.find(id);
        if (it == st.id_index.end())
            throw_error(ErrorKind::Runtime, "cross_lookup: unknown id " + id);
        const auto row = st.row(it->second);
        out.emplace_back(row.begin(), row.end());
    }
    return out;
}

namespace {

constexpr char kRfvMagic[8] = {'R', 'A', 'M', 'E', 'R', 'F', 'V', '1'};
constexpr uint16_t kRfvVersion = 1;

std::string modality_file(const std::string& dir, Modality m) {
    return dir + "/" + modality_name(m) + ".rfv";
}

void save_modality(const std::string& path, const ModalityStore& s) {
    io::ByteWriter w;
    w.put_bytes(kRfvMagic, 8);
    w.put_u16(kRfvVersion);
    w.put_u8(static_cast<uint8_t>(s.modality));
    w.put_u32(static_cast<uint32_t>(s.dim));
    w.put_u64(static_cast<uint64_t>(s.count()));
    for (int r = 0; r < s.count(); ++r) {
        w.put_string(s.ids[r]);
        const auto row = s.row(r);
        for (float x : row) w.put_f32(x);
    }
    w.write_file(path);
}

ModalityStore load_modality(const std::string& path, Modality expect) {
    io::ByteReader r(path);
    char magic[8];
    r.get_bytes(magic, 8);
    if (std::memcmp(magic, kRfvMagic, 8) != 0) r.fail("bad magic (expected RAMERFV1)");
    if (r.get_u16() != kRfvVersion) r.fail("unsupported version");
    const uint8_t mod = r.get_u8();
    if (mod != static_cast<uint8_t>(expect)) r.fail("unexpected modality code");
    ModalityStore s;
    s.modality = expect;
    s.dim = static_cast<int>(r.get_u32());
    const uint64_t count = r.get_u64();
    s.ids.reserve(count);
    s.data.reserve(count * static_cast<size_t>(s.dim));
    std::vector<float> row(s.dim);
    for (uint64_t i = 0; i < count; ++i) {
        std::string id = r.get_string();
        for (int j = 0; j < s.dim; ++j) row[j] = r.get_f32();
        s.add_row(std::move(id), row);
    }
    r.expect_end();
    s.finalize();
    return s;
}

}  // namespace

void save_store(const std::string& dir, const AlignedStore& s) {
    std::filesystem::create_directories(dir);
    for (Modality m : kAllModalities) save_modality(modality_file(dir, m), s.of(m));
    nlohmann::json j;
    j["format"] = "ramer-store";
    j["version"] = 1;
    j["tier"] = tier_name(s.tier);
    j["source"] = s.source == StoreSource::Hidden ? "hidden" : "raw";
    j["checkpoint_hash"] = s.checkpoint_hash;
    j["ids"] = s.stores[0].ids;
    std::ofstream out(dir + "/store.json", std::ios::trunc);
    if (!out) throw_error(ErrorKind::Runtime, "cannot write " + dir + "/store.json");
    out << j.dump(2) << "\n";
}

AlignedStore load_store(const std::string& dir) {
    std::ifstream in(dir + "/store.json");
    if (!in) throw_error(ErrorKind::Artifact, "missing store manifest: " + dir + "/store.json");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw_error(ErrorKind::Parse, dir + "/store.json: " + e.what());
    }
    AlignedStore s;
    const auto tier = parse_tier(j.value("tier", "turbo"));
    if (!tier) throw_error(ErrorKind::Parse, dir + "/store.json: bad tier");
    s.tier = *tier;
    s.source = j.value("source", "hidden") == std::string("raw") ? StoreSource::Raw
                                                                 : StoreSource::Hidden;
    s.checkpoint_hash = j.value("checkpoint_hash", 0ULL);
    for (Modality m : kAllModalities)
        s.stores[static_cast<int>(m)] = load_modality(modality_file(dir, m), m);
    for (int m = 0; m < 3; ++m) {
        s.stores[m].normalized = s.source == StoreSource::Hidden;
        if (s.stores[m].ids != s.stores[0].ids)
            throw_error(ErrorKind::Parse, dir + ": stores are not aligned on one id sequence");
    }
    const auto ids = j.value("ids", std::vector<std::string>{});
    if (ids != s.stores[0].ids)
        throw_error(ErrorKind::Parse, dir + ": manifest id list does not match store contents");
    return s;
}

}  // namespace ramer
