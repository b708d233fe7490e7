#include "ramer/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ramer/io.hpp"
#include "ramer/rng.hpp"

namespace ramer {

MissingCondition MissingCondition::parse(std::string_view code) {
    MissingCondition c;
    for (char ch : code) {
        int m;
        switch (ch) {
            case 'a': m = 0; break;
            case 'v': m = 1; break;
            case 'l': m = 2; break;
            default:
                throw_error(ErrorKind::Config,
                            "bad condition code '" + std::string(code) + "'");
        }
        if (c.available[m])
            throw_error(ErrorKind::Config,
                        "bad condition code '" + std::string(code) + "': repeated modality");
        c.available[m] = true;
    }
    if (c.n_available() == 0)
        throw_error(ErrorKind::Config, "condition code must name at least one modality");
    return c;
}

std::string MissingCondition::code() const {
    std::string s;
    if (available[0]) s += 'a';
    if (available[1]) s += 'v';
    if (available[2]) s += 'l';
    return s;
}

int MissingCondition::n_available() const {
    return static_cast<int>(available[0]) + available[1] + available[2];
}

const std::vector<MissingCondition>& MissingCondition::grid() {
    static const std::vector<MissingCondition> g = {
        parse("a"), parse("v"), parse("l"), parse("av"), parse("al"), parse("vl")};
    return g;
}

FuseResult fuse_topk(const std::vector<num::Vec>& vs) {
    if (vs.empty()) throw_error(ErrorKind::Config, "fuse_topk: empty feature list");
    num::Vec sum = vs[0];
    for (size_t i = 1; i < vs.size(); ++i) {
        if (vs[i].size() != sum.size())
            throw_error(ErrorKind::Config, "fuse_topk: mixed dimensions");
        for (size_t j = 0; j < sum.size(); ++j) sum[j] += vs[i][j];
    }
    const double n = num::l2_norm(sum);
    if (n <= num::kNormEps) return {num::l2_normalize(vs[0]), true};
    for (double& x : sum) x /= n;
    return {std::move(sum), false};
}

num::Vec complete_features(const std::array<const num::Vec*, 3>& hidden,
                           const std::array<const num::Vec*, 3>& fused) {
    num::Vec out(kJointDim);
    for (int m = 0; m < 3; ++m) {
        const num::Vec* h = hidden[m];
        const num::Vec* f = fused[m];
        if (h && f)
            throw_error(ErrorKind::Config, std::string("complete: modality ") +
                                               modality_name(static_cast<Modality>(m)) +
                                               " covered twice");
        const num::Vec* src = h ? h : f;
        if (!src)
            throw_error(ErrorKind::Config, std::string("complete: modality ") +
                                               modality_name(static_cast<Modality>(m)) +
                                               " not covered");
        if (static_cast<int>(src->size()) != kHiddenDim)
            throw_error(ErrorKind::Config, "complete: slot must be 256-d");
        std::copy(src->begin(), src->end(), out.begin() + static_cast<size_t>(m) * kHiddenDim);
    }
    return out;
}

std::array<std::optional<num::Vec>, 3> infer_available_hidden(
    const Sample& sample, const MissingCondition& cond,
    const std::array<EncoderParams, 3>& encoders) {
    std::array<std::optional<num::Vec>, 3> out;
    for (int m = 0; m < 3; ++m) {
        if (!cond.available[m]) continue;
        if (!sample.has_embedding(static_cast<Modality>(m)))
            throw_error(ErrorKind::Runtime,
                        "sample " + sample.id + " lacks available-modality embedding " +
                            modality_name(static_cast<Modality>(m)));
        const auto& e = sample.embedding(static_cast<Modality>(m));
        out[m] = encoder_forward(encoders[m], std::span<const float>(e), RunMode::Infer).h;
    }
    return out;
}

Completer::Completer(const AlignedStore& hidden_store, const AlignedStore* raw_store,
                     CompletionConfig cfg, const std::unordered_set<std::string>& excluded_ids)
    : hidden_store_(hidden_store), raw_store_(raw_store), cfg_(cfg), excluded_ids_(excluded_ids) {
    if (hidden_store_.source != StoreSource::Hidden)
        throw_error(ErrorKind::Config, "completer value store must be a hidden-feature store");
    if (cfg_.db_source == DbSource::Raw) {
        if (!raw_store_)
            throw_error(ErrorKind::Config, "raw db_source requires a raw key store");
        if (raw_store_->source != StoreSource::Raw)
            throw_error(ErrorKind::Config, "key store is not a raw store");
    }
    for (int m = 0; m < 3; ++m)
        masks_[m] = make_row_mask(key_store(static_cast<Modality>(m)), excluded_ids_);
}

const ModalityStore& Completer::key_store(Modality m) const {
    return cfg_.db_source == DbSource::Raw ? raw_store_->of(m) : hidden_store_.of(m);
}

std::array<std::vector<num::Vec>, 3> Completer::retrieve_substitutes(
    const Sample& sample, const std::array<std::optional<num::Vec>, 3>& hidden,
    const MissingCondition& cond, RunStats& stats) const {
    // One hit list per available modality, pooled in fixed modality order.
    std::vector<std::string> hit_ids;
    for (int q = 0; q < 3; ++q) {
        if (!cond.available[q]) continue;
        const ModalityStore& ks = key_store(static_cast<Modality>(q));
        num::Vec query;
        if (cfg_.db_source == DbSource::Raw) {
            const auto& e = sample.embedding(static_cast<Modality>(q));
            num::Vec raw(e.begin(), e.end());
            query = num::l2_normalize(raw);
        } else {
            if (!hidden[q])
                throw_error(ErrorKind::Runtime, "retrieve: hidden feature missing for " +
                                                    std::string(modality_name(
                                                        static_cast<Modality>(q))));
            query = *hidden[q];
        }
        int self_row = -1;
        auto it = ks.id_index.find(sample.id);
        if (it != ks.id_index.end()) self_row = it->second;
        const auto hits =
            search_topk_masked(ks, query, cfg_.k, masks_[q], self_row, cfg_.metric);
        for (const auto& h : hits) {
            if (h.sample_id == sample.id || excluded_ids_.count(h.sample_id)) ++stats.leaked;
            hit_ids.push_back(h.sample_id);
        }
    }
    std::array<std::vector<num::Vec>, 3> out;
    for (int m = 0; m < 3; ++m) {
        if (cond.available[m]) continue;
        out[m] = cross_lookup(hidden_store_, hit_ids, static_cast<Modality>(m));
    }
    return out;
}

num::Vec Completer::complete_one(const Sample& sample,
                                 const std::array<std::optional<num::Vec>, 3>& hidden,
                                 const MissingCondition& cond,
                                 const std::array<const num::Vec*, 3>& miss_hidden,
                                 RunStats& stats) const {
    std::array<num::Vec, 3> fused_storage;
    std::array<const num::Vec*, 3> hidden_ptr{nullptr, nullptr, nullptr};
    std::array<const num::Vec*, 3> fused_ptr{nullptr, nullptr, nullptr};
    for (int m = 0; m < 3; ++m)
        if (cond.available[m]) {
            if (!hidden[m])
                throw_error(ErrorKind::Runtime, "complete_one: hidden feature missing");
            hidden_ptr[m] = &*hidden[m];
        }

    if (cond.n_available() < 3) {
        if (!cfg_.retrieval) {
            for (int m = 0; m < 3; ++m)
                if (!cond.available[m]) {
                    fused_storage[m].assign(kHiddenDim, 0.0);
                    fused_ptr[m] = &fused_storage[m];
                }
        } else {
            auto subs = retrieve_substitutes(sample, hidden, cond, stats);
            ++stats.retrievals;
            for (int m = 0; m < 3; ++m) {
                if (cond.available[m]) continue;
                FuseResult fr = fuse_topk(subs[m]);
                if (fr.degenerate) ++stats.degenerate_fusions;
                if (cfg_.keep_miss == KeepMiss::Average && miss_hidden[m]) {
                    // blend the zero-input hidden feature with the retrieved one
                    try {
                        num::Vec mh = num::l2_normalize(*miss_hidden[m]);
                        for (int j = 0; j < kHiddenDim; ++j) mh[j] += fr.vec[j];
                        fr.vec = num::l2_normalize(mh);
                    } catch (const Error&) {
                        // degenerate blend: keep the retrieved feature
                        ++stats.degenerate_fusions;
                    }
                }
                fused_storage[m] = std::move(fr.vec);
                fused_ptr[m] = &fused_storage[m];
            }
        }
    }
    return complete_features(hidden_ptr, fused_ptr);
}

num::Mat completed_matrix(const Corpus& corpus, const std::vector<int>& idxs,
                          const MissingCondition& cond,
                          const std::array<EncoderParams, 3>& encoders,
                          const Completer& completer, RunStats& stats,
                          std::array<ForwardBatch, 3>* fbs) {
    const int n = static_cast<int>(idxs.size());
    num::Mat Z(n, kJointDim);
    std::array<num::Mat, 3> hids;

    for (int m = 0; m < 3; ++m) {
        if (!cond.available[m]) continue;
        const int d = corpus.dim(static_cast<Modality>(m));
        hids[m].resize(n, kHiddenDim);
        const int chunk = fbs ? n : 512;
        num::Mat X;
        ForwardBatch local_fb;
        ForwardBatch& fb = fbs ? (*fbs)[m] : local_fb;
        for (int lo = 0; lo < n; lo += chunk) {
            const int hi = std::min(n, lo + chunk);
            X.resize(hi - lo, d);
            for (int b = lo; b < hi; ++b) {
                const Sample& s = corpus.samples[idxs[b]];
                if (!s.has_embedding(static_cast<Modality>(m)))
                    throw_error(ErrorKind::Runtime,
                                "sample " + s.id + " lacks available-modality embedding " +
                                    modality_name(static_cast<Modality>(m)));
                const auto& e = s.embedding(static_cast<Modality>(m));
                double* xr = X.row(b - lo);
                for (int j = 0; j < d; ++j) xr[j] = e[j];
            }
            encoder_forward_batch(encoders[m], X.data(), hi - lo, RunMode::Infer, 0.0, 0, fb);
            for (int b = lo; b < hi; ++b)
                std::memcpy(hids[m].row(b), fb.h.row(b - lo), sizeof(double) * kHiddenDim);
        }
    }

    // Zero-input hidden features, wanted only by the keep-miss averaging path.
    std::array<num::Vec, 3> misskeep;
    std::array<const num::Vec*, 3> miss_ptr{nullptr, nullptr, nullptr};
    if (completer.config().keep_miss == KeepMiss::Average && completer.config().retrieval) {
        for (int m = 0; m < 3; ++m) {
            if (cond.available[m]) continue;
            num::Vec zero(corpus.dim(static_cast<Modality>(m)), 0.0);
            misskeep[m] = encoder_forward(encoders[m], zero, RunMode::Infer).h;
            miss_ptr[m] = &misskeep[m];
        }
    }

    std::vector<RunStats> row_stats(n);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        const Sample& s = corpus.samples[idxs[i]];
        std::array<std::optional<num::Vec>, 3> hidden;
        for (int m = 0; m < 3; ++m)
            if (cond.available[m])
                hidden[m] = num::Vec(hids[m].row(i), hids[m].row(i) + kHiddenDim);
        const num::Vec z = completer.complete_one(s, hidden, cond, miss_ptr, row_stats[i]);
        std::memcpy(Z.row(i), z.data(), sizeof(double) * kJointDim);
    }
    for (const auto& rs : row_stats) stats.merge(rs);
    return Z;
}

namespace {

JointClassifierParams init_joint(uint64_t seed) {
    Rng rng(seed);
    JointClassifierParams j;
    j.w = num::Mat(kJointDim, kNumClasses);
    const double bound = 1.0 / std::sqrt(static_cast<double>(kJointDim));
    for (double& x : j.w.a) x = rng.uniform(-bound, bound);
    j.b.assign(kNumClasses, 0.0);
    return j;
}

double joint_accuracy(const num::Mat& Z, const std::vector<int>& targets,
                      const JointClassifierParams& j) {
    const int n = Z.rows;
    if (n == 0) return 0.0;
    num::Mat logits(n, kNumClasses);
    kernels::gemm_bias(Z.data(), n, kJointDim, j.w.data(), kNumClasses, j.b.data(),
                       logits.data());
    long correct = 0;
    for (int b = 0; b < n; ++b) {
        const double* lr = logits.row(b);
        int arg = 0;
        for (int c = 1; c < kNumClasses; ++c)
            if (lr[c] > lr[arg]) arg = c;
        if (arg == targets[b]) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / n;
}

std::vector<int> gather_targets(const Corpus& corpus, const std::vector<int>& idxs) {
    std::vector<int> t(idxs.size());
    for (size_t i = 0; i < idxs.size(); ++i) {
        const auto& lb = corpus.samples[idxs[i]].label;
        t[i] = lb ? static_cast<int>(*lb) : -1;
    }
    return t;
}

struct JointSgd {
    num::Mat vel_w;
    num::Vec vel_b;
};

void joint_step(JointClassifierParams& j, JointSgd& st, const num::Mat& dW, const num::Vec& dB,
                const TrainConfig& cfg) {
    kernels::sgd_update(j.w.data(), st.vel_w.data(), dW.data(), j.w.size(), cfg.learning_rate,
                        cfg.momentum);
    kernels::sgd_update(j.b.data(), st.vel_b.data(), dB.data(), j.b.size(), cfg.learning_rate,
                        cfg.momentum);
}

}  // namespace

Stage3Model train_missing(const Corpus& corpus, const MissingCondition& cond,
                          const Checkpoint& ckpt, const Completer& completer,
                          const TrainConfig& cfg, bool freeze_encoders, RunStats* stats_out) {
    const std::vector<int> train_idx = corpus.indices_with_split(Split::Train);
    const std::vector<int> val_idx = corpus.indices_with_split(Split::Val);
    if (train_idx.empty()) throw_error(ErrorKind::Config, "train_missing: empty train split");
    if (val_idx.empty()) throw_error(ErrorKind::Config, "train_missing: empty val split");

    Stage3Model model;
    model.encoders = ckpt.encoders;
    model.joint = init_joint(derive_seed(cfg.seed, "joint-init"));
    model.condition = cond;
    model.completion = completer.config();
    model.tier = completer.value_store().tier;
    model.froze_encoders = freeze_encoders;
    model.seed = cfg.seed;

    JointSgd jsgd;
    jsgd.vel_w = num::Mat(kJointDim, kNumClasses);
    jsgd.vel_b.assign(kNumClasses, 0.0);

    RunStats stats;
    const std::vector<int> train_targets = gather_targets(corpus, train_idx);
    const std::vector<int> val_targets = gather_targets(corpus, val_idx);

    JointClassifierParams best_joint = model.joint;
    std::array<EncoderParams, 3> best_encoders = model.encoders;
    double best_wa = -1.0;
    int best_epoch = -1;

    num::Mat probs, dlogits, logits;

    if (freeze_encoders) {
        // Encoders fixed: retrieval and completion are computed once and the
        // joint classifier trains on cached features.
        const num::Mat Ztr =
            completed_matrix(corpus, train_idx, cond, model.encoders, completer, stats);
        const num::Mat Zval =
            completed_matrix(corpus, val_idx, cond, model.encoders, completer, stats);
        const int ntr = Ztr.rows;
        num::Mat Zb, Zd, dZd, dW;
        num::Vec dB(kNumClasses);
        std::vector<uint8_t> mask;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::vector<int> order(ntr);
            for (int i = 0; i < ntr; ++i) order[i] = i;
            Rng rng(derive_seed(cfg.seed, "order3", static_cast<uint64_t>(epoch)));
            rng.shuffle(order);
            const int bs = cfg.batch_size;
            for (int lo = 0, batch = 0; lo < ntr; lo += bs, ++batch) {
                const int hi = std::min(ntr, lo + bs);
                const int n = hi - lo;
                Zb.resize(n, kJointDim);
                std::vector<int> targets(n);
                for (int b = 0; b < n; ++b) {
                    std::memcpy(Zb.row(b), Ztr.row(order[lo + b]), sizeof(double) * kJointDim);
                    targets[b] = train_targets[order[lo + b]];
                }
                Zd.resize(n, kJointDim);
                mask.assign(static_cast<size_t>(n) * kJointDim, 0);
                kernels::dropout_forward(Zb.data(), n, kJointDim, cfg.dropout,
                                         derive_seed(cfg.seed, "drop3",
                                                     static_cast<uint64_t>(epoch), batch),
                                         Zd.data(), mask.data());
                logits.resize(n, kNumClasses);
                kernels::gemm_bias(Zd.data(), n, kJointDim, model.joint.w.data(), kNumClasses,
                                   model.joint.b.data(), logits.data());
                softmax_xent_rows(logits, targets.data(), probs, dlogits);
                dW.resize(kJointDim, kNumClasses);
                kernels::gemm_at_b(Zd.data(), dlogits.data(), n, kJointDim, kNumClasses,
                                   dW.data());
                kernels::colsum(dlogits.data(), n, kNumClasses, dB.data());
                joint_step(model.joint, jsgd, dW, dB, cfg);
            }
            const double wa = joint_accuracy(Zval, val_targets, model.joint);
            if (wa > best_wa) {
                best_wa = wa;
                best_epoch = epoch;
                best_joint = model.joint;
            }
        }
        best_encoders = model.encoders;  // untouched by construction
    } else {
        std::array<SgdState, 3> esgd;
        for (int m = 0; m < 3; ++m)
            if (cond.available[m]) esgd[m].init_like(model.encoders[m]);
        num::Mat Zd, dZd, dZ, dW, dH;
        num::Vec dB(kNumClasses);
        std::vector<uint8_t> mask;
        EncoderGrads egrads;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::vector<int> order = train_idx;
            Rng rng(derive_seed(cfg.seed, "order3", static_cast<uint64_t>(epoch)));
            rng.shuffle(order);
            const size_t bs = static_cast<size_t>(cfg.batch_size);
            for (size_t lo = 0, batch = 0; lo < order.size(); lo += bs, ++batch) {
                const size_t hi = std::min(order.size(), lo + bs);
                const std::vector<int> bidx(order.begin() + lo, order.begin() + hi);
                const int n = static_cast<int>(bidx.size());
                std::array<ForwardBatch, 3> fbs;
                const num::Mat Z =
                    completed_matrix(corpus, bidx, cond, model.encoders, completer, stats, &fbs);
                std::vector<int> targets = gather_targets(corpus, bidx);
                Zd.resize(n, kJointDim);
                mask.assign(static_cast<size_t>(n) * kJointDim, 0);
                kernels::dropout_forward(Z.data(), n, kJointDim, cfg.dropout,
                                         derive_seed(cfg.seed, "drop3",
                                                     static_cast<uint64_t>(epoch), batch),
                                         Zd.data(), mask.data());
                logits.resize(n, kNumClasses);
                kernels::gemm_bias(Zd.data(), n, kJointDim, model.joint.w.data(), kNumClasses,
                                   model.joint.b.data(), logits.data());
                softmax_xent_rows(logits, targets.data(), probs, dlogits);
                dW.resize(kJointDim, kNumClasses);
                kernels::gemm_at_b(Zd.data(), dlogits.data(), n, kJointDim, kNumClasses,
                                   dW.data());
                kernels::colsum(dlogits.data(), n, kNumClasses, dB.data());
                dZd.resize(n, kJointDim);
                kernels::gemm_b_wt(dlogits.data(), model.joint.w.data(), n, kJointDim,
                                   kNumClasses, dZd.data());
                dZ.resize(n, kJointDim);
                kernels::dropout_backward(dZd.data(), mask.data(), n, kJointDim, cfg.dropout,
                                          dZ.data());
                joint_step(model.joint, jsgd, dW, dB, cfg);
                // Gradient flows only into the available-modality slots;
                // retrieved substitutes are constants.
                for (int m = 0; m < 3; ++m) {
                    if (!cond.available[m]) continue;
                    dH.resize(n, kHiddenDim);
                    for (int b = 0; b < n; ++b)
                        std::memcpy(dH.row(b), dZ.row(b) + static_cast<size_t>(m) * kHiddenDim,
                                    sizeof(double) * kHiddenDim);
                    egrads.init_like(model.encoders[m]);
                    encoder_backward_from_dh(model.encoders[m], fbs[m], dH, egrads);
                    sgd_step(model.encoders[m], esgd[m], egrads, cfg);
                }
            }
            RunStats val_stats;
            const num::Mat Zval =
                completed_matrix(corpus, val_idx, cond, model.encoders, completer, val_stats);
            stats.merge(val_stats);
            const double wa = joint_accuracy(Zval, val_targets, model.joint);
            if (wa > best_wa) {
                best_wa = wa;
                best_epoch = epoch;
                best_joint = model.joint;
                best_encoders = model.encoders;
            }
        }
    }

    model.joint = std::move(best_joint);
    model.encoders = std::move(best_encoders);
    model.best_epoch = best_epoch;
    model.val_wa = best_wa;
    if (stats_out) stats_out->merge(stats);
    return model;
}

Prediction predict(const Sample& sample, const Stage3Model& model, const Completer& completer,
                   RunStats* stats_out) {
    RunStats stats;
    auto hidden = infer_available_hidden(sample, model.condition, model.encoders);
    std::array<num::Vec, 3> misskeep;
    std::array<const num::Vec*, 3> miss_ptr{nullptr, nullptr, nullptr};
    if (model.completion.keep_miss == KeepMiss::Average && model.completion.retrieval) {
        for (int m = 0; m < 3; ++m) {
            if (model.condition.available[m]) continue;
            num::Vec zero(model.encoders[m].in_dim, 0.0);
            misskeep[m] = encoder_forward(model.encoders[m], zero, RunMode::Infer).h;
            miss_ptr[m] = &misskeep[m];
        }
    }
    const num::Vec z = completer.complete_one(sample, hidden, model.condition, miss_ptr, stats);
    num::Vec logits(kNumClasses);
    kernels::gemm_bias(z.data(), 1, kJointDim, model.joint.w.data(), kNumClasses,
                       model.joint.b.data(), logits.data());
    Prediction p;
    p.posterior = num::softmax(logits);
    int arg = 0;
    for (int c = 1; c < kNumClasses; ++c)
        if (p.posterior[c] > p.posterior[arg]) arg = c;
    p.label = static_cast<EmotionLabel>(arg);
    if (stats_out) stats_out->merge(stats);
    return p;
}

std::vector<int> predict_split(const Corpus& corpus, Split split, const Stage3Model& model,
                               const Completer& completer, RunStats* stats_out) {
    const std::vector<int> idxs = corpus.indices_with_split(split);
    RunStats stats;
    const num::Mat Z = completed_matrix(corpus, idxs, model.condition, model.encoders, completer,
                                        stats);
    num::Mat logits(Z.rows, kNumClasses);
    kernels::gemm_bias(Z.data(), Z.rows, kJointDim, model.joint.w.data(), kNumClasses,
                       model.joint.b.data(), logits.data());
    std::vector<int> preds(Z.rows);
    for (int b = 0; b < Z.rows; ++b) {
        const double* lr = logits.row(b);
        int arg = 0;
        for (int c = 1; c < kNumClasses; ++c)
            if (lr[c] > lr[arg]) arg = c;
        preds[b] = arg;
    }
    if (stats_out) stats_out->merge(stats);
    return preds;
}

namespace {
constexpr char kCkMagic[8] = {'R', 'A', 'M', 'E', 'R', 'C', 'K', '1'};
constexpr uint16_t kCkVersion = 1;
constexpr uint8_t kKindStage3 = 2;
}  // namespace

void save_stage3(const std::string& path, const Stage3Model& m) {
    io::ByteWriter w;
    w.put_bytes(kCkMagic, 8);
    w.put_u16(kCkVersion);
    w.put_u8(kKindStage3);
    for (int i = 0; i < 3; ++i) w.put_u32(static_cast<uint32_t>(m.encoders[i].in_dim));
    uint8_t avail = 0;
    for (int i = 0; i < 3; ++i)
        if (m.condition.available[i]) avail |= 1 << i;
    w.put_u8(avail);
    w.put_u32(static_cast<uint32_t>(m.completion.k));
    w.put_u8(m.completion.metric == kernels::Metric::Cosine ? 0 : 1);
    w.put_u8(static_cast<uint8_t>(m.completion.db_source));
    w.put_u8(static_cast<uint8_t>(m.completion.keep_miss));
    w.put_u8(m.completion.retrieval ? 1 : 0);
    w.put_u8(static_cast<uint8_t>(m.tier));
    w.put_u8(m.froze_encoders ? 1 : 0);
    w.put_u32(static_cast<uint32_t>(m.best_epoch));
    w.put_f64(m.val_wa);
    w.put_u64(m.seed);
    w.put_u64(m.checkpoint_hash);
    w.put_u64(m.store_hash);
    for (const auto& ep : m.encoders)
        ep.for_each_tensor([&](const std::vector<double>& t) {
            for (double x : t) w.put_f64(x);
        });
    for (double x : m.joint.w.a) w.put_f64(x);
    for (double x : m.joint.b) w.put_f64(x);
    w.write_file(path);
}

Stage3Model load_stage3(const std::string& path) {
    io::ByteReader r(path);
    char magic[8];
    r.get_bytes(magic, 8);
    if (std::memcmp(magic, kCkMagic, 8) != 0) r.fail("bad magic (expected RAMERCK1)");
    if (r.get_u16() != kCkVersion) r.fail("unsupported version");
    if (r.get_u8() != kKindStage3) r.fail("not a stage-3 model file");
    Stage3Model m;
    std::array<int, 3> dims{};
    for (int i = 0; i < 3; ++i) dims[i] = static_cast<int>(r.get_u32());
    const uint8_t avail = r.get_u8();
    for (int i = 0; i < 3; ++i) m.condition.available[i] = (avail >> i) & 1;
    m.completion.k = static_cast<int>(r.get_u32());
    m.completion.metric = r.get_u8() == 0 ? kernels::Metric::Cosine : kernels::Metric::Euclidean;
    m.completion.db_source = static_cast<DbSource>(r.get_u8());
    m.completion.keep_miss = static_cast<KeepMiss>(r.get_u8());
    m.completion.retrieval = r.get_u8() != 0;
    m.tier = static_cast<ScaleTier>(r.get_u8());
    m.froze_encoders = r.get_u8() != 0;
    m.best_epoch = static_cast<int>(r.get_u32());
    m.val_wa = r.get_f64();
    m.seed = r.get_u64();
    m.checkpoint_hash = r.get_u64();
    m.store_hash = r.get_u64();
    for (int i = 0; i < 3; ++i) {
        m.encoders[i] = init_encoder_params(dims[i], 0);
        m.encoders[i].for_each_tensor([&](std::vector<double>& t) {
            for (double& x : t) x = r.get_f64();
        });
    }
    m.joint.w = num::Mat(kJointDim, kNumClasses);
    for (double& x : m.joint.w.a) x = r.get_f64();
    m.joint.b.assign(kNumClasses, 0.0);
    for (double& x : m.joint.b) x = r.get_f64();
    r.expect_end();
    return m;
}

}  // namespace ramer
