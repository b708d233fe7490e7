#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace ramer::kernels {

enum class Metric { Cosine, Euclidean };

struct RowHit {
    int row;
    double score;  // cosine similarity (sorted descending) or euclidean distance (ascending)
};

inline constexpr double kLayerNormVarFloor = 1e-8;

// Dense batch kernels used by the encoder and the retrieval scan. Every
// output element is written by exactly one thread and inner summation order
// is fixed, so results are bitwise independent of the OpenMP thread count.

// C[r x n] = A[r x m] * W[m x n], plus bias broadcast over rows when non-null.
void gemm_bias(const double* A, int r, int m, const double* W, int n, const double* bias,
               double* C);
// dW[m x n] = A^T * G  (A: r x m, G: r x n). Overwrites dW.
void gemm_at_b(const double* A, const double* G, int r, int m, int n, double* dW);
// dX[r x m] = G * W^T  (G: r x n, W: m x n). Overwrites dX.
void gemm_b_wt(const double* G, const double* W, int r, int m, int n, double* dX);
void colsum(const double* G, int r, int n, double* out);
void add_inplace(double* dst, const double* src, size_t n);

void layernorm_forward(const double* X, int r, int d, const double* gain, const double* bias,
                       double* Y, double* xhat, double* inv_std);
void layernorm_backward(const double* dY, const double* xhat, const double* inv_std,
                        const double* gain, int r, int d, double* dX, double* dgain,
                        double* dbias);
void relu_forward(const double* X, size_t n, double* Y);
void relu_backward(const double* dY, const double* Xpre, size_t n, double* dX);

// Inverted dropout; the mask of row i is a pure function of (seed, i).
void dropout_forward(const double* X, int r, int d, double rate, uint64_t seed, double* Y,
                     uint8_t* mask);
void dropout_backward(const double* dY, const uint8_t* mask, int r, int d, double rate,
                      double* dX);

void sgd_update(double* w, double* vel, const double* g, size_t n, double lr, double momentum);

// Exact top-k scan over row-major float32 records.
//   cosine:    score_i = <q, rec_i> / (|q| * norms[i]), best = largest;
//              zero-norm records score -inf and are never returned.
//   euclidean: score_i = |q - rec_i|, best = smallest.
// Ties broken by ascending lex_rank. excluded is an optional byte mask
// (1 = skip); extra_excluded_row names one more row to skip, or -1.
std::vector<RowHit> topk_scan(const float* data, const double* norms, int n, int dim,
                              const float* query, int k, Metric metric, const int* lex_rank,
                              const uint8_t* excluded, int extra_excluded_row);

// Serial reference implementations with identical contracts. Kept for tests
// and for the bench_kernels comparison target; topk_scan is a full sort.
namespace serial {
void gemm_bias(const double* A, int r, int m, const double* W, int n, const double* bias,
               double* C);
void gemm_at_b(const double* A, const double* G, int r, int m, int n, double* dW);
void gemm_b_wt(const double* G, const double* W, int r, int m, int n, double* dX);
void layernorm_forward(const double* X, int r, int d, const double* gain, const double* bias,
                       double* Y, double* xhat, double* inv_std);
std::vector<RowHit> topk_scan(const float* data, const double* norms, int n, int dim,
                              const float* query, int k, Metric metric, const int* lex_rank,
                              const uint8_t* excluded, int extra_excluded_row);
}  // namespace serial

}  // namespace ramer::kernels
