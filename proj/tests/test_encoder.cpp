#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ramer/encoder.hpp"
#include "ramer/rng.hpp"

using namespace ramer;
using num::Vec;
namespace fs = std::filesystem;

namespace {

// Straight-line re-implementation of the forward pass with plain loops.
// Shares no code with the encoder; used as the duplicate-implementation
// oracle.
std::pair<Vec, Vec> oracle_forward(const EncoderParams& p, const Vec& x) {
    auto matvec = [](const num::Mat& w, const Vec& in, const Vec& bias) {
        Vec out(w.cols);
        for (int j = 0; j < w.cols; ++j) {
            double acc = bias[j];
            for (int i = 0; i < w.rows; ++i) acc += in[i] * w.at(i, j);
            out[j] = acc;
        }
        return out;
    };
    auto layernorm = [](const Vec& z, const Vec& gain, const Vec& bias) {
        const int d = static_cast<int>(z.size());
        double mean = 0.0;
        for (double v : z) mean += v;
        mean /= d;
        double var = 0.0;
        for (double v : z) var += (v - mean) * (v - mean);
        var /= d;
        const double is = 1.0 / std::sqrt(var + 1e-8);
        Vec out(d);
        for (int j = 0; j < d; ++j) out[j] = gain[j] * (z[j] - mean) * is + bias[j];
        return out;
    };
    const Vec proj = matvec(p.w_in, x, p.b_in);
    const Vec a1 = matvec(p.w_v, proj, p.b_v);
    const Vec a2 = matvec(p.w_o, a1, p.b_o);
    Vec r1(proj.size());
    for (size_t i = 0; i < r1.size(); ++i) r1[i] = proj[i] + a2[i];
    const Vec y1 = layernorm(r1, p.ln1_gain, p.ln1_bias);
    Vec f1 = matvec(p.w_f1, y1, p.b_f1);
    for (double& v : f1) v = v > 0.0 ? v : 0.0;
    const Vec f2 = matvec(p.w_f2, f1, p.b_f2);
    Vec r2(y1.size());
    for (size_t i = 0; i < r2.size(); ++i) r2[i] = y1[i] + f2[i];
    const Vec h = layernorm(r2, p.ln2_gain, p.ln2_bias);
    const Vec logits = matvec(p.w_c, h, p.b_c);
    return {h, logits};
}

Vec random_input(Rng& rng, int d) {
    Vec x(d);
    for (double& v : x) v = rng.gaussian();
    return x;
}

struct GradCheck {
    double max_rel = 0.0;
    std::string worst;
};

// Finite-difference check over seeded coordinate samples of every tensor.
GradCheck check_gradients(int in_dim, uint64_t seed, int coords_per_tensor) {
    EncoderParams params = init_encoder_params(in_dim, seed);
    const int n = 3;
    Rng rng(derive_seed(seed, "gradcheck-data"));
    num::Mat X(n, in_dim);
    for (double& v : X.a) v = rng.gaussian();
    std::vector<int> targets = {1, 4, 0};
    const uint64_t drop_seed = derive_seed(seed, "gradcheck-drop");

    auto loss_at = [&](const EncoderParams& p) {
        ForwardBatch fb;
        encoder_forward_batch(p, X.data(), n, RunMode::Train, 0.5, drop_seed, fb);
        num::Mat probs, dlogits;
        return softmax_xent_rows(fb.logits, targets.data(), probs, dlogits);
    };

    ForwardBatch fb;
    encoder_forward_batch(params, X.data(), n, RunMode::Train, 0.5, drop_seed, fb);
    num::Mat probs, dlogits;
    softmax_xent_rows(fb.logits, targets.data(), probs, dlogits);
    EncoderGrads grads;
    grads.init_like(params);
    encoder_backward_batch(params, fb, dlogits, grads);

    std::vector<std::vector<double>*> ptensors, gtensors;
    params.for_each_tensor([&](std::vector<double>& t) { ptensors.push_back(&t); });
    grads.for_each_tensor([&](std::vector<double>& t) { gtensors.push_back(&t); });

    const char* names[] = {"w_in", "b_in", "w_v", "b_v", "w_o", "b_o", "ln1_g", "ln1_b",
                           "w_f1", "b_f1", "w_f2", "b_f2", "ln2_g", "ln2_b", "w_c", "b_c"};
    GradCheck out;
    Rng pick(derive_seed(seed, "gradcheck-pick"));
    const double h = 1e-5;
    for (size_t t = 0; t < ptensors.size(); ++t) {
        auto& tensor = *ptensors[t];
        const size_t sz = tensor.size();
        for (int c = 0; c < coords_per_tensor; ++c) {
            const size_t i =
                sz <= static_cast<size_t>(coords_per_tensor) ? static_cast<size_t>(c) % sz
                                                             : pick.uniform_int(sz);
            const double saved = tensor[i];
            tensor[i] = saved + h;
            const double fp = loss_at(params);
            tensor[i] = saved - h;
            const double fm = loss_at(params);
            tensor[i] = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = (*gtensors[t])[i];
            const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3});
            if (rel > out.max_rel) {
                out.max_rel = rel;
                out.worst = names[t];
            }
        }
    }
    return out;
}

Corpus two_cluster_corpus(int n_per_class, uint64_t seed) {
    SyntheticConfig cfg;
    cfg.n_labeled = 2 * n_per_class;
    cfg.n_unlabeled = 0;
    cfg.class_priors = {0.5, 0.5, 0, 0, 0, 0};
    cfg.dims = {24, 16, 32};
    cfg.latent_dim = 8;
    cfg.cluster_separation = 6.0;
    cfg.noise_sigma = 0.1;
    cfg.seed = seed;
    return split_corpus(generate_synthetic(cfg), seed);
}

double train_wa(const Corpus& corpus, const Checkpoint& ck, Modality m) {
    long correct = 0, total = 0;
    for (int i : corpus.indices_with_split(Split::Train)) {
        const Sample& s = corpus.samples[i];
        const auto r = encoder_forward(ck.encoders[static_cast<int>(m)],
                                       std::span<const float>(s.embedding(m)), RunMode::Infer);
        int arg = 0;
        for (int c = 1; c < kNumClasses; ++c)
            if (r.logits[c] > r.logits[arg]) arg = c;
        if (arg == static_cast<int>(*s.label)) ++correct;
        ++total;
    }
    return 100.0 * correct / total;
}

}  // namespace

TEST_CASE("inference is deterministic") {
    Rng rng(61);
    const EncoderParams p = init_encoder_params(16, 1);
    const Vec x = random_input(rng, 16);
    const auto a = encoder_forward(p, x, RunMode::Infer);
    const auto b = encoder_forward(p, x, RunMode::Infer);
    CHECK(a.h == b.h);
    CHECK(a.logits == b.logits);
}

TEST_CASE("zero input stays finite through the variance floor") {
    const EncoderParams p = init_encoder_params(8, 2);  // biases are zero at init
    const Vec x(8, 0.0);
    const auto r = encoder_forward(p, x, RunMode::Infer);
    for (double v : r.h) CHECK(std::isfinite(v));
    for (double v : r.logits) CHECK(std::isfinite(v));
}

TEST_CASE("forward matches the straight-line oracle") {
    Rng rng(62);
    for (uint64_t seed : {3, 4, 5}) {
        const EncoderParams p = init_encoder_params(24, seed);
        const Vec x = random_input(rng, 24);
        const auto got = encoder_forward(p, x, RunMode::Infer);
        const auto [h, logits] = oracle_forward(p, x);
        for (int j = 0; j < kHiddenDim; ++j)
            CHECK(std::abs(got.h[j] - h[j]) < 1e-10);
        for (int j = 0; j < kNumClasses; ++j)
            CHECK(std::abs(got.logits[j] - logits[j]) < 1e-10);
    }
}

TEST_CASE("analytic gradients match finite differences") {
    const auto r = check_gradients(16, 77, 12);
    INFO("worst tensor: ", r.worst, " rel err ", r.max_rel);
    CHECK(r.max_rel < 1e-4);
}

TEST_CASE("near one-hot output yields near-zero gradients") {
    EncoderParams p = init_encoder_params(12, 9);
    // force a saturated classifier: huge bias on the target class
    p.b_c.assign(kNumClasses, -50.0);
    p.b_c[2] = 50.0;
    Rng rng(63);
    num::Mat X(1, 12);
    for (double& v : X.a) v = rng.gaussian();
    const int target = 2;
    ForwardBatch fb;
    encoder_forward_batch(p, X.data(), 1, RunMode::Infer, 0.0, 0, fb);
    num::Mat probs, dlogits;
    softmax_xent_rows(fb.logits, &target, probs, dlogits);
    EncoderGrads g;
    g.init_like(p);
    encoder_backward_batch(p, fb, dlogits, g);
    double norm = 0.0;
    g.for_each_tensor([&](std::vector<double>& t) {
        for (double v : t) norm += v * v;
    });
    CHECK(std::sqrt(norm) < 1e-6);
}

TEST_CASE("zero input leaves the input projection untouched") {
    EncoderParams p = init_encoder_params(10, 11);  // zero biases at init
    num::Mat X(1, 10);  // zero row
    const int target = 0;
    ForwardBatch fb;
    encoder_forward_batch(p, X.data(), 1, RunMode::Infer, 0.0, 0, fb);
    num::Mat probs, dlogits;
    softmax_xent_rows(fb.logits, &target, probs, dlogits);
    EncoderGrads g;
    g.init_like(p);
    encoder_backward_batch(p, fb, dlogits, g);
    for (double v : g.w_in.a) CHECK(v == 0.0);
}

TEST_CASE("train-mode dropout matches inference in expectation") {
    const EncoderParams p = init_encoder_params(16, 21);
    Rng rng(64);
    const Vec x = random_input(rng, 16);
    const auto infer = encoder_forward(p, x, RunMode::Infer);
    Vec mean_logits(kNumClasses, 0.0);
    const int reps = 10000;
    for (int i = 0; i < reps; ++i) {
        const auto r = encoder_forward(p, x, RunMode::Train, 0.5, derive_seed(1000, "m", i));
        for (int j = 0; j < kNumClasses; ++j) mean_logits[j] += r.logits[j];
    }
    for (int j = 0; j < kNumClasses; ++j) {
        mean_logits[j] /= reps;
        CHECK(std::abs(mean_logits[j] - infer.logits[j]) < 1e-2);
    }
}

TEST_CASE("pretraining reaches 100% train WA on separable clusters") {
    const Corpus corpus = two_cluster_corpus(40, 31);
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 32;
    cfg.learning_rate = 0.01;
    cfg.seed = 5;
    const Checkpoint ck = pretrain_full_modality(corpus, cfg);
    for (Modality m : kAllModalities) CHECK(train_wa(corpus, ck, m) == doctest::Approx(100.0));
}

TEST_CASE("pretraining is deterministic and beats the majority baseline") {
    SyntheticConfig scfg;
    scfg.n_labeled = 240;
    scfg.n_unlabeled = 0;
    scfg.dims = {24, 16, 40};
    scfg.latent_dim = 8;
    scfg.cross_modal_correlation = 0.8;
    scfg.seed = 17;
    const Corpus corpus = split_corpus(generate_synthetic(scfg), 17);

    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 32;
    cfg.learning_rate = 0.01;
    cfg.seed = 3;
    std::vector<double> hist1, hist2;
    const Checkpoint a = pretrain_full_modality(corpus, cfg, 0, &hist1);
    const Checkpoint b = pretrain_full_modality(corpus, cfg, 0, &hist2);

    const std::string dir = "tmp_encoder_test";
    fs::create_directories(dir);
    save_checkpoint(dir + "/a.rck", a);
    save_checkpoint(dir + "/b.rck", b);
    std::ifstream fa(dir + "/a.rck", std::ios::binary), fb(dir + "/b.rck", std::ios::binary);
    const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);

    // majority baseline: the most frequent class of the labeled distribution
    const auto hist = label_histogram(corpus);
    const long best_class = *std::max_element(hist.begin(), hist.end());
    const double majority = 100.0 * static_cast<double>(best_class) /
                            static_cast<double>(corpus.labeled_indices().size());
    CHECK(a.val_wa > majority);

    // best-epoch bookkeeping
    CHECK(hist1 == hist2);
    CHECK(a.val_wa == doctest::Approx(*std::max_element(hist1.begin(), hist1.end())));
    CHECK(hist1[a.best_epoch] == doctest::Approx(a.val_wa));
    fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip and corruption handling") {
    const Corpus corpus = two_cluster_corpus(10, 41);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.seed = 4;
    const Checkpoint ck = pretrain_full_modality(corpus, cfg, 1234);

    const std::string dir = "tmp_ck_test";
    fs::create_directories(dir);
    const std::string path = dir + "/ck.rck";
    save_checkpoint(path, ck);
    const Checkpoint r = load_checkpoint(path);
    CHECK(r.dims == ck.dims);
    CHECK(r.best_epoch == ck.best_epoch);
    CHECK(r.val_wa == ck.val_wa);
    CHECK(r.config_hash == 1234);

    Rng rng(65);
    const Vec x = random_input(rng, corpus.dims[0]);
    const auto before = encoder_forward(ck.encoders[0], x, RunMode::Infer);
    const auto after = encoder_forward(r.encoders[0], x, RunMode::Infer);
    CHECK(before.h == after.h);
    CHECK(before.logits == after.logits);

    SUBCASE("truncated file is rejected, no partial load") {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(dir + "/trunc.rck", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        CHECK_THROWS_AS(load_checkpoint(dir + "/trunc.rck"), Error);
    }

    SUBCASE("flipped byte fails the CRC") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(64);
        char byte = 0x55;
        f.write(&byte, 1);
        f.close();
        CHECK_THROWS_AS(load_checkpoint(path), Error);
    }
    fs::remove_all(dir);
}
