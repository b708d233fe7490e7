#include "ramer/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ramer/io.hpp"
#include "ramer/rng.hpp"

namespace ramer {

namespace {

void uniform_init(std::vector<double>& w, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : w) x = rng.uniform(-bound, bound);
}

}  // namespace

EncoderParams init_encoder_params(int in_dim, uint64_t seed) {
    if (in_dim < 1) throw_error(ErrorKind::Config, "encoder in_dim must be >= 1");
    Rng rng(seed);
    EncoderParams p;
    p.in_dim = in_dim;
    p.w_in = num::Mat(in_dim, kHiddenDim);
    p.b_in.assign(kHiddenDim, 0.0);
    p.w_v = num::Mat(kHiddenDim, kHiddenDim);
    p.b_v.assign(kHiddenDim, 0.0);
    p.w_o = num::Mat(kHiddenDim, kHiddenDim);
    p.b_o.assign(kHiddenDim, 0.0);
    p.ln1_gain.assign(kHiddenDim, 1.0);
    p.ln1_bias.assign(kHiddenDim, 0.0);
    p.w_f1 = num::Mat(kHiddenDim, kFfnDim);
    p.b_f1.assign(kFfnDim, 0.0);
    p.w_f2 = num::Mat(kFfnDim, kHiddenDim);
    p.b_f2.assign(kHiddenDim, 0.0);
    p.ln2_gain.assign(kHiddenDim, 1.0);
    p.ln2_bias.assign(kHiddenDim, 0.0);
    p.w_c = num::Mat(kHiddenDim, kNumClasses);
    p.b_c.assign(kNumClasses, 0.0);
    uniform_init(p.w_in.a, in_dim, rng);
    uniform_init(p.w_v.a, kHiddenDim, rng);
    uniform_init(p.w_o.a, kHiddenDim, rng);
    uniform_init(p.w_f1.a, kHiddenDim, rng);
    uniform_init(p.w_f2.a, kFfnDim, rng);
    uniform_init(p.w_c.a, kHiddenDim, rng);
    return p;
}

void EncoderGrads::init_like(const EncoderParams& p) {
    w_in.resize(p.in_dim, kHiddenDim);
    b_in.assign(kHiddenDim, 0.0);
    w_v.resize(kHiddenDim, kHiddenDim);
    b_v.assign(kHiddenDim, 0.0);
    w_o.resize(kHiddenDim, kHiddenDim);
    b_o.assign(kHiddenDim, 0.0);
    ln1_gain.assign(kHiddenDim, 0.0);
    ln1_bias.assign(kHiddenDim, 0.0);
    w_f1.resize(kHiddenDim, kFfnDim);
    b_f1.assign(kFfnDim, 0.0);
    w_f2.resize(kFfnDim, kHiddenDim);
    b_f2.assign(kHiddenDim, 0.0);
    ln2_gain.assign(kHiddenDim, 0.0);
    ln2_bias.assign(kHiddenDim, 0.0);
    w_c.resize(kHiddenDim, kNumClasses);
    b_c.assign(kNumClasses, 0.0);
}

void encoder_forward_batch(const EncoderParams& ep, const double* X, int n, RunMode mode,
                           double dropout_rate, uint64_t drop_seed, ForwardBatch& fb) {
    const int H = kHiddenDim;
    const int F = kFfnDim;
    fb.n = n;
    fb.x.resize(n, ep.in_dim);
    std::memcpy(fb.x.data(), X, sizeof(double) * fb.x.size());
    fb.p.resize(n, H);
    kernels::gemm_bias(X, n, ep.in_dim, ep.w_in.data(), H, ep.b_in.data(), fb.p.data());
    fb.a1.resize(n, H);
    kernels::gemm_bias(fb.p.data(), n, H, ep.w_v.data(), H, ep.b_v.data(), fb.a1.data());
    fb.a2.resize(n, H);
    kernels::gemm_bias(fb.a1.data(), n, H, ep.w_o.data(), H, ep.b_o.data(), fb.a2.data());
    fb.r1.resize(n, H);
    for (size_t i = 0; i < fb.r1.size(); ++i) fb.r1.a[i] = fb.p.a[i] + fb.a2.a[i];
    fb.y1.resize(n, H);
    fb.xhat1.resize(n, H);
    fb.inv_std1.assign(n, 0.0);
    kernels::layernorm_forward(fb.r1.data(), n, H, ep.ln1_gain.data(), ep.ln1_bias.data(),
                               fb.y1.data(), fb.xhat1.data(), fb.inv_std1.data());
    fb.f1pre.resize(n, F);
    kernels::gemm_bias(fb.y1.data(), n, H, ep.w_f1.data(), F, ep.b_f1.data(), fb.f1pre.data());
    fb.f1.resize(n, F);
    kernels::relu_forward(fb.f1pre.data(), fb.f1pre.size(), fb.f1.data());
    fb.f2.resize(n, H);
    kernels::gemm_bias(fb.f1.data(), n, F, ep.w_f2.data(), H, ep.b_f2.data(), fb.f2.data());
    fb.r2.resize(n, H);
    for (size_t i = 0; i < fb.r2.size(); ++i) fb.r2.a[i] = fb.y1.a[i] + fb.f2.a[i];
    fb.h.resize(n, H);
    fb.xhat2.resize(n, H);
    fb.inv_std2.assign(n, 0.0);
    kernels::layernorm_forward(fb.r2.data(), n, H, ep.ln2_gain.data(), ep.ln2_bias.data(),
                               fb.h.data(), fb.xhat2.data(), fb.inv_std2.data());
    if (mode == RunMode::Train && dropout_rate > 0.0) {
        fb.drop_rate = dropout_rate;
        fb.hdrop.resize(n, H);
        fb.drop_mask.assign(static_cast<size_t>(n) * H, 0);
        kernels::dropout_forward(fb.h.data(), n, H, dropout_rate, drop_seed, fb.hdrop.data(),
                                 fb.drop_mask.data());
    } else {
        fb.drop_rate = 0.0;
        fb.hdrop = fb.h;
        fb.drop_mask.clear();
    }
    fb.logits.resize(n, kNumClasses);
    kernels::gemm_bias(fb.hdrop.data(), n, H, ep.w_c.data(), kNumClasses, ep.b_c.data(),
                       fb.logits.data());
}

ForwardResult encoder_forward(const EncoderParams& ep, std::span<const double> x, RunMode mode,
                              double dropout_rate, uint64_t drop_seed) {
    if (static_cast<int>(x.size()) != ep.in_dim)
        throw_error(ErrorKind::Config, "encoder_forward: input dim " + std::to_string(x.size()) +
                                           " != " + std::to_string(ep.in_dim));
    ForwardBatch fb;
    encoder_forward_batch(ep, x.data(), 1, mode, dropout_rate, drop_seed, fb);
    ForwardResult r;
    r.h.assign(fb.h.row(0), fb.h.row(0) + kHiddenDim);
    r.logits.assign(fb.logits.row(0), fb.logits.row(0) + kNumClasses);
    return r;
}

ForwardResult encoder_forward(const EncoderParams& ep, std::span<const float> x, RunMode mode,
                              double dropout_rate, uint64_t drop_seed) {
    num::Vec xd(x.begin(), x.end());
    return encoder_forward(ep, xd, mode, dropout_rate, drop_seed);
}

double softmax_xent_rows(const num::Mat& logits, const int* targets, num::Mat& probs,
                         num::Mat& dlogits) {
    const int n = logits.rows;
    const int c = logits.cols;
    probs.resize(n, c);
    dlogits.resize(n, c);
    double loss = 0.0;
    for (int b = 0; b < n; ++b) {
        const double* lr = logits.row(b);
        double* pr = probs.row(b);
        double mx = lr[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, lr[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            pr[j] = std::exp(lr[j] - mx);
            sum += pr[j];
        }
        for (int j = 0; j < c; ++j) pr[j] /= sum;
        const int t = targets[b];
        if (t < 0 || t >= c) throw_error(ErrorKind::Config, "target class out of range");
        loss += -std::log(std::max(pr[t], num::kProbFloor));
        double* dr = dlogits.row(b);
        for (int j = 0; j < c; ++j) dr[j] = (pr[j] - (j == t ? 1.0 : 0.0)) / n;
    }
    return loss / n;
}

namespace {

// Shared tail: gradient of everything below h given dH.
void backward_tail(const EncoderParams& ep, const ForwardBatch& fb, const num::Mat& dH,
                   EncoderGrads& g) {
    const int n = fb.n;
    const int H = kHiddenDim;
    const int F = kFfnDim;

    num::Mat dr2(n, H);
    kernels::layernorm_backward(dH.data(), fb.xhat2.data(), fb.inv_std2.data(),
                                ep.ln2_gain.data(), n, H, dr2.data(), g.ln2_gain.data(),
                                g.ln2_bias.data());
    // r2 = y1 + f2
    num::Mat dy1 = dr2;
    const num::Mat& df2 = dr2;
    kernels::gemm_at_b(fb.f1.data(), df2.data(), n, F, H, g.w_f2.data());
    kernels::colsum(df2.data(), n, H, g.b_f2.data());
    num::Mat df1(n, F);
    kernels::gemm_b_wt(df2.data(), ep.w_f2.data(), n, F, H, df1.data());
    num::Mat df1pre(n, F);
    kernels::relu_backward(df1.data(), fb.f1pre.data(), df1.size(), df1pre.data());
    kernels::gemm_at_b(fb.y1.data(), df1pre.data(), n, H, F, g.w_f1.data());
    kernels::colsum(df1pre.data(), n, F, g.b_f1.data());
    num::Mat dy1_ffn(n, H);
    kernels::gemm_b_wt(df1pre.data(), ep.w_f1.data(), n, H, F, dy1_ffn.data());
    kernels::add_inplace(dy1.data(), dy1_ffn.data(), dy1.size());

    num::Mat dr1(n, H);
    kernels::layernorm_backward(dy1.data(), fb.xhat1.data(), fb.inv_std1.data(),
                                ep.ln1_gain.data(), n, H, dr1.data(), g.ln1_gain.data(),
                                g.ln1_bias.data());
    // r1 = p + a2
    num::Mat dp = dr1;
    const num::Mat& da2 = dr1;
    kernels::gemm_at_b(fb.a1.data(), da2.data(), n, H, H, g.w_o.data());
    kernels::colsum(da2.data(), n, H, g.b_o.data());
    num::Mat da1(n, H);
    kernels::gemm_b_wt(da2.data(), ep.w_o.data(), n, H, H, da1.data());
    kernels::gemm_at_b(fb.p.data(), da1.data(), n, H, H, g.w_v.data());
    kernels::colsum(da1.data(), n, H, g.b_v.data());
    num::Mat dp_attn(n, H);
    kernels::gemm_b_wt(da1.data(), ep.w_v.data(), n, H, H, dp_attn.data());
    kernels::add_inplace(dp.data(), dp_attn.data(), dp.size());

    kernels::gemm_at_b(fb.x.data(), dp.data(), n, ep.in_dim, H, g.w_in.data());
    kernels::colsum(dp.data(), n, H, g.b_in.data());
}

}  // namespace

void encoder_backward_batch(const EncoderParams& ep, const ForwardBatch& fb,
                            const num::Mat& dlogits, EncoderGrads& g) {
    const int n = fb.n;
    const int H = kHiddenDim;
    kernels::gemm_at_b(fb.hdrop.data(), dlogits.data(), n, H, kNumClasses, g.w_c.data());
    kernels::colsum(dlogits.data(), n, kNumClasses, g.b_c.data());
    num::Mat dhdrop(n, H);
    kernels::gemm_b_wt(dlogits.data(), ep.w_c.data(), n, H, kNumClasses, dhdrop.data());
    num::Mat dh(n, H);
    if (!fb.drop_mask.empty())
        kernels::dropout_backward(dhdrop.data(), fb.drop_mask.data(), n, H, fb.drop_rate,
                                  dh.data());
    else
        dh = dhdrop;
    backward_tail(ep, fb, dh, g);
}

void encoder_backward_from_dh(const EncoderParams& ep, const ForwardBatch& fb, const num::Mat& dH,
                              EncoderGrads& g) {
    std::fill(g.w_c.a.begin(), g.w_c.a.end(), 0.0);
    std::fill(g.b_c.begin(), g.b_c.end(), 0.0);
    backward_tail(ep, fb, dH, g);
}

void sgd_step(EncoderParams& p, SgdState& st, EncoderGrads& g, const TrainConfig& cfg) {
    // walk parameter, velocity and gradient tensors in lockstep
    std::vector<std::vector<double>*> ws, vs, gs;
    p.for_each_tensor([&](std::vector<double>& t) { ws.push_back(&t); });
    st.vel.for_each_tensor([&](std::vector<double>& t) { vs.push_back(&t); });
    g.for_each_tensor([&](std::vector<double>& t) { gs.push_back(&t); });
    for (size_t i = 0; i < ws.size(); ++i)
        kernels::sgd_update(ws[i]->data(), vs[i]->data(), gs[i]->data(), ws[i]->size(),
                            cfg.learning_rate, cfg.momentum);
}

namespace {

// Assemble the float32 embeddings of the given samples into a double matrix.
void gather_batch(const Corpus& corpus, const std::vector<int>& idxs, size_t lo, size_t hi,
                  Modality m, num::Mat& X, std::vector<int>& targets) {
    const int d = corpus.dim(m);
    const int n = static_cast<int>(hi - lo);
    X.resize(n, d);
    targets.resize(n);
    for (int b = 0; b < n; ++b) {
        const Sample& s = corpus.samples[idxs[lo + b]];
        const auto& e = s.embedding(m);
        double* row = X.row(b);
        for (int j = 0; j < d; ++j) row[j] = e[j];
        targets[b] = s.label ? static_cast<int>(*s.label) : -1;
    }
}

double unimodal_accuracy(const Corpus& corpus, const std::vector<int>& idxs,
                         const EncoderParams& ep, Modality m) {
    constexpr size_t kChunk = 256;
    long correct = 0;
    num::Mat X;
    std::vector<int> targets;
    ForwardBatch fb;
    for (size_t lo = 0; lo < idxs.size(); lo += kChunk) {
        const size_t hi = std::min(idxs.size(), lo + kChunk);
        gather_batch(corpus, idxs, lo, hi, m, X, targets);
        encoder_forward_batch(ep, X.data(), X.rows, RunMode::Infer, 0.0, 0, fb);
        for (int b = 0; b < fb.n; ++b) {
            const double* lr = fb.logits.row(b);
            int arg = 0;
            for (int j = 1; j < kNumClasses; ++j)
                if (lr[j] > lr[arg]) arg = j;
            if (arg == targets[b]) ++correct;
        }
    }
    return idxs.empty() ? 0.0 : 100.0 * static_cast<double>(correct) / idxs.size();
}

}  // namespace

Checkpoint pretrain_full_modality(const Corpus& corpus, const TrainConfig& cfg,
                                  uint64_t config_hash, std::vector<double>* val_history) {
    std::vector<int> train_idx = corpus.indices_with_split(Split::Train);
    std::vector<int> val_idx = corpus.indices_with_split(Split::Val);
    if (train_idx.empty()) throw_error(ErrorKind::Config, "pretrain: empty train split");
    if (val_idx.empty()) throw_error(ErrorKind::Config, "pretrain: empty val split");
    for (int i : train_idx)
        for (Modality m : kAllModalities)
            if (!corpus.samples[i].has_embedding(m))
                throw_error(ErrorKind::Config, "pretrain: sample " + corpus.samples[i].id +
                                                   " lacks a " + modality_name(m) + " embedding");

    Checkpoint ck;
    ck.dims = corpus.dims;
    ck.seed = cfg.seed;
    ck.config_hash = config_hash;
    std::array<SgdState, 3> sgd;
    for (int m = 0; m < 3; ++m) {
        ck.encoders[m] = init_encoder_params(corpus.dims[m],
                                             derive_seed(cfg.seed, "init", static_cast<uint64_t>(m)));
        sgd[m].init_like(ck.encoders[m]);
    }

    std::array<EncoderParams, 3> best = ck.encoders;
    double best_wa = -1.0;
    int best_epoch = -1;

    num::Mat X, probs, dlogits;
    std::vector<int> targets;
    ForwardBatch fb;
    EncoderGrads grads;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order = train_idx;
        Rng order_rng(derive_seed(cfg.seed, "order", static_cast<uint64_t>(epoch)));
        order_rng.shuffle(order);
        const size_t bs = static_cast<size_t>(cfg.batch_size);
        for (size_t lo = 0, batch = 0; lo < order.size(); lo += bs, ++batch) {
            const size_t hi = std::min(order.size(), lo + bs);
            for (int m = 0; m < 3; ++m) {
                gather_batch(corpus, order, lo, hi, static_cast<Modality>(m), X, targets);
                const uint64_t drop_seed = derive_seed(cfg.seed, "dropout",
                                                       static_cast<uint64_t>(epoch), batch,
                                                       static_cast<uint64_t>(m));
                encoder_forward_batch(ck.encoders[m], X.data(), X.rows, RunMode::Train,
                                      cfg.dropout, drop_seed, fb);
                softmax_xent_rows(fb.logits, targets.data(), probs, dlogits);
                grads.init_like(ck.encoders[m]);
                encoder_backward_batch(ck.encoders[m], fb, dlogits, grads);
                sgd_step(ck.encoders[m], sgd[m], grads, cfg);
            }
        }
        double wa = 0.0;
        for (int m = 0; m < 3; ++m)
            wa += unimodal_accuracy(corpus, val_idx, ck.encoders[m], static_cast<Modality>(m));
        wa /= 3.0;
        if (val_history) val_history->push_back(wa);
        if (wa > best_wa) {
            best_wa = wa;
            best_epoch = epoch;
            best = ck.encoders;
        }
    }
    ck.encoders = std::move(best);
    ck.best_epoch = best_epoch;
    ck.val_wa = best_wa;
    return ck;
}

namespace {
constexpr char kCkMagic[8] = {'R', 'A', 'M', 'E', 'R', 'C', 'K', '1'};
constexpr uint16_t kCkVersion = 1;
constexpr uint8_t kKindStage1 = 1;
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    io::ByteWriter w;
    w.put_bytes(kCkMagic, 8);
    w.put_u16(kCkVersion);
    w.put_u8(kKindStage1);
    for (int d : ck.dims) w.put_u32(static_cast<uint32_t>(d));
    w.put_u32(static_cast<uint32_t>(ck.best_epoch));
    w.put_f64(ck.val_wa);
    w.put_u64(ck.seed);
    w.put_u64(ck.config_hash);
    for (const auto& ep : ck.encoders)
        ep.for_each_tensor([&](const std::vector<double>& t) {
            for (double x : t) w.put_f64(x);
        });
    w.write_file(path);
}

Checkpoint load_checkpoint(const std::string& path) {
    io::ByteReader r(path);
    char magic[8];
    r.get_bytes(magic, 8);
    if (std::memcmp(magic, kCkMagic, 8) != 0) r.fail("bad magic (expected RAMERCK1)");
    const uint16_t version = r.get_u16();
    if (version != kCkVersion) r.fail("unsupported checkpoint version");
    const uint8_t kind = r.get_u8();
    if (kind != kKindStage1) r.fail("not a stage-1 checkpoint");
    Checkpoint ck;
    for (int m = 0; m < 3; ++m) ck.dims[m] = static_cast<int>(r.get_u32());
    ck.best_epoch = static_cast<int>(r.get_u32());
    ck.val_wa = r.get_f64();
    ck.seed = r.get_u64();
    ck.config_hash = r.get_u64();
    for (int m = 0; m < 3; ++m) {
        ck.encoders[m] = init_encoder_params(ck.dims[m], 0);
        ck.encoders[m].for_each_tensor([&](std::vector<double>& t) {
            for (double& x : t) x = r.get_f64();
        });
    }
    r.expect_end();
    return ck;
}

}  // namespace ramer
