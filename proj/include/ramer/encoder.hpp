#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

#include "ramer/dataset.hpp"
#include "ramer/kernels.hpp"
#include "ramer/numerics.hpp"

namespace ramer {

inline constexpr int kHiddenDim = 256;
inline constexpr int kFfnDim = 512;
inline constexpr int kJointDim = 3 * kHiddenDim;

enum class RunMode { Train, Infer };

// Per-modality encoder: input projection to the hidden width, then a
// single-token transformer block. With one token per utterance the attention
// weight is exactly 1, so attention degenerates to the value/output
// projections; both layer norms and the residual paths are kept.
// All weight matrices are stored row-major as (in x out).
struct EncoderParams {
    int in_dim = 0;
    num::Mat w_in;               // in_dim x 256
    num::Vec b_in;
    num::Mat w_v, w_o;           // 256 x 256
    num::Vec b_v, b_o;
    num::Vec ln1_gain, ln1_bias;
    num::Mat w_f1;               // 256 x 512
    num::Vec b_f1;
    num::Mat w_f2;               // 512 x 256
    num::Vec b_f2;
    num::Vec ln2_gain, ln2_bias;
    num::Mat w_c;                // 256 x 6
    num::Vec b_c;

    // Visits tensors in the persisted order.
    template <class F>
    void for_each_tensor(F&& f) {
        f(w_in.a); f(b_in); f(w_v.a); f(b_v); f(w_o.a); f(b_o);
        f(ln1_gain); f(ln1_bias);
        f(w_f1.a); f(b_f1); f(w_f2.a); f(b_f2);
        f(ln2_gain); f(ln2_bias);
        f(w_c.a); f(b_c);
    }
    template <class F>
    void for_each_tensor(F&& f) const {
        f(w_in.a); f(b_in); f(w_v.a); f(b_v); f(w_o.a); f(b_o);
        f(ln1_gain); f(ln1_bias);
        f(w_f1.a); f(b_f1); f(w_f2.a); f(b_f2);
        f(ln2_gain); f(ln2_bias);
        f(w_c.a); f(b_c);
    }
};

// Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], zero biases,
// unit layer-norm gains.
EncoderParams init_encoder_params(int in_dim, uint64_t seed);

struct TrainConfig {
    int epochs = 40;
    int batch_size = 128;
    double dropout = 0.5;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    uint64_t seed = 1;
};

// Activations of one batched forward pass, kept for the backward pass.
struct ForwardBatch {
    int n = 0;
    double drop_rate = 0.0;
    num::Mat x, p, a1, a2, r1, y1, xhat1, f1pre, f1, f2, r2, h, xhat2, hdrop, logits;
    num::Vec inv_std1, inv_std2;
    std::vector<uint8_t> drop_mask;
};

// X is n rows of in_dim doubles. In Train mode, inverted dropout is applied
// to h before the classifier; h itself stays pre-dropout (it is the stored
// hidden feature).
void encoder_forward_batch(const EncoderParams& ep, const double* X, int n, RunMode mode,
                           double dropout_rate, uint64_t drop_seed, ForwardBatch& fb);

struct ForwardResult {
    num::Vec h;       // hidden feature, 256
    num::Vec logits;  // 6
};
ForwardResult encoder_forward(const EncoderParams& ep, std::span<const double> x, RunMode mode,
                              double dropout_rate = 0.5, uint64_t drop_seed = 0);
ForwardResult encoder_forward(const EncoderParams& ep, std::span<const float> x, RunMode mode,
                              double dropout_rate = 0.5, uint64_t drop_seed = 0);

struct EncoderGrads {
    num::Mat w_in; num::Vec b_in;
    num::Mat w_v;  num::Vec b_v;
    num::Mat w_o;  num::Vec b_o;
    num::Vec ln1_gain, ln1_bias;
    num::Mat w_f1; num::Vec b_f1;
    num::Mat w_f2; num::Vec b_f2;
    num::Vec ln2_gain, ln2_bias;
    num::Mat w_c;  num::Vec b_c;

    void init_like(const EncoderParams& p);
    template <class F>
    void for_each_tensor(F&& f) {
        f(w_in.a); f(b_in); f(w_v.a); f(b_v); f(w_o.a); f(b_o);
        f(ln1_gain); f(ln1_bias);
        f(w_f1.a); f(b_f1); f(w_f2.a); f(b_f2);
        f(ln2_gain); f(ln2_bias);
        f(w_c.a); f(b_c);
    }
};

// Mean cross-entropy over rows; fills row-wise softmax probs and the logits
// gradient (already divided by the row count).
double softmax_xent_rows(const num::Mat& logits, const int* targets, num::Mat& probs,
                         num::Mat& dlogits);

// Gradient of the batch loss w.r.t. every parameter, classifier path
// included (expects fb from a Train-mode forward when dropout is active).
void encoder_backward_batch(const EncoderParams& ep, const ForwardBatch& fb,
                            const num::Mat& dlogits, EncoderGrads& g);
// Same tail but driven by an upstream gradient on h; classifier grads zero.
void encoder_backward_from_dh(const EncoderParams& ep, const ForwardBatch& fb,
                              const num::Mat& dH, EncoderGrads& g);

struct Checkpoint {
    std::array<EncoderParams, 3> encoders;
    std::array<int, 3> dims{};
    int best_epoch = -1;
    double val_wa = 0.0;  // percent
    uint64_t seed = 0;
    uint64_t config_hash = 0;
};

// Stage 1: train the three encoders jointly on the train split (loss is the
// sum of the three per-modality cross-entropies), SGD with momentum,
// validation WA (mean of the three unimodal WAs) after every epoch, weights
// of the best epoch returned. val_history, when given, receives one WA per
// epoch.
Checkpoint pretrain_full_modality(const Corpus& corpus, const TrainConfig& cfg,
                                  uint64_t config_hash = 0,
                                  std::vector<double>* val_history = nullptr);

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// SGD + momentum state shaped like one encoder.
struct SgdState {
    EncoderGrads vel;
    void init_like(const EncoderParams& p) { vel.init_like(p); }
};
void sgd_step(EncoderParams& p, SgdState& st, EncoderGrads& g, const TrainConfig& cfg);

}  // namespace ramer
