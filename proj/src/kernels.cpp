#include "ramer/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ramer/rng.hpp"

namespace ramer::kernels {

namespace {
constexpr int kRowTile = 16;  // rows of A sharing one streaming pass over W
}

void gemm_bias(const double* A, int r, int m, const double* W, int n, const double* bias,
               double* C) {
    const int ntiles = (r + kRowTile - 1) / kRowTile;
#pragma omp parallel for schedule(static)
    for (int t = 0; t < ntiles; ++t) {
        const int b0 = t * kRowTile;
        const int b1 = std::min(r, b0 + kRowTile);
        for (int b = b0; b < b1; ++b) {
            double* crow = C + static_cast<size_t>(b) * n;
            if (bias)
                std::copy(bias, bias + n, crow);
            else
                std::fill(crow, crow + n, 0.0);
        }
        for (int k = 0; k < m; ++k) {
            const double* wrow = W + static_cast<size_t>(k) * n;
            for (int b = b0; b < b1; ++b) {
                const double s = A[static_cast<size_t>(b) * m + k];
                double* crow = C + static_cast<size_t>(b) * n;
                for (int j = 0; j < n; ++j) crow[j] += s * wrow[j];
            }
        }
    }
}

void gemm_at_b(const double* A, const double* G, int r, int m, int n, double* dW) {
    // Transpose A first so the reduction over rows streams contiguously.
    std::vector<double> At(static_cast<size_t>(m) * r);
    constexpr int T = 32;
#pragma omp parallel for schedule(static)
    for (int ib = 0; ib < m; ib += T) {
        const int iend = std::min(m, ib + T);
        for (int bb = 0; bb < r; bb += T) {
            const int bend = std::min(r, bb + T);
            for (int i = ib; i < iend; ++i)
                for (int b = bb; b < bend; ++b)
                    At[static_cast<size_t>(i) * r + b] = A[static_cast<size_t>(b) * m + i];
        }
    }
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        double* drow = dW + static_cast<size_t>(i) * n;
        std::fill(drow, drow + n, 0.0);
        const double* atrow = At.data() + static_cast<size_t>(i) * r;
        for (int b = 0; b < r; ++b) {
            const double s = atrow[b];
            const double* grow = G + static_cast<size_t>(b) * n;
            for (int j = 0; j < n; ++j) drow[j] += s * grow[j];
        }
    }
}

void gemm_b_wt(const double* G, const double* W, int r, int m, int n, double* dX) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < r; ++b) {
        const double* grow = G + static_cast<size_t>(b) * n;
        double* xrow = dX + static_cast<size_t>(b) * m;
        for (int i = 0; i < m; ++i) {
            const double* wrow = W + static_cast<size_t>(i) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += grow[j] * wrow[j];
            xrow[i] = acc;
        }
    }
}

void colsum(const double* G, int r, int n, double* out) {
    std::fill(out, out + n, 0.0);
    for (int b = 0; b < r; ++b) {
        const double* grow = G + static_cast<size_t>(b) * n;
        for (int j = 0; j < n; ++j) out[j] += grow[j];
    }
}

void add_inplace(double* dst, const double* src, size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) dst[i] += src[i];
}

void layernorm_forward(const double* X, int r, int d, const double* gain, const double* bias,
                       double* Y, double* xhat, double* inv_std) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < r; ++b) {
        const double* x = X + static_cast<size_t>(b) * d;
        double* xh = xhat + static_cast<size_t>(b) * d;
        double* y = Y + static_cast<size_t>(b) * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += x[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double dv = x[j] - mean;
            var += dv * dv;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + kLayerNormVarFloor);
        inv_std[b] = is;
        for (int j = 0; j < d; ++j) {
            xh[j] = (x[j] - mean) * is;
            y[j] = gain[j] * xh[j] + bias[j];
        }
    }
}

void layernorm_backward(const double* dY, const double* xhat, const double* inv_std,
                        const double* gain, int r, int d, double* dX, double* dgain,
                        double* dbias) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < r; ++b) {
        const double* dy = dY + static_cast<size_t>(b) * d;
        const double* xh = xhat + static_cast<size_t>(b) * d;
        double* dx = dX + static_cast<size_t>(b) * d;
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < d; ++j) {
            const double g = dy[j] * gain[j];
            m1 += g;
            m2 += g * xh[j];
        }
        m1 /= d;
        m2 /= d;
        for (int j = 0; j < d; ++j) dx[j] = (dy[j] * gain[j] - m1 - xh[j] * m2) * inv_std[b];
    }
    if (dgain && dbias) {
#pragma omp parallel for schedule(static)
        for (int j = 0; j < d; ++j) {
            double sg = 0.0, sb = 0.0;
            for (int b = 0; b < r; ++b) {
                const double dy = dY[static_cast<size_t>(b) * d + j];
                sg += dy * xhat[static_cast<size_t>(b) * d + j];
                sb += dy;
            }
            dgain[j] = sg;
            dbias[j] = sb;
        }
    }
}

void relu_forward(const double* X, size_t n, double* Y) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) Y[i] = X[i] > 0.0 ? X[i] : 0.0;
}

void relu_backward(const double* dY, const double* Xpre, size_t n, double* dX) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i)
        dX[i] = Xpre[i] > 0.0 ? dY[i] : 0.0;
}

void dropout_forward(const double* X, int r, int d, double rate, uint64_t seed, double* Y,
                     uint8_t* mask) {
    const double scale = 1.0 / (1.0 - rate);
#pragma omp parallel for schedule(static)
    for (int b = 0; b < r; ++b) {
        Rng rng(derive_seed(seed, "drop-row", static_cast<uint64_t>(b)));
        const double* x = X + static_cast<size_t>(b) * d;
        double* y = Y + static_cast<size_t>(b) * d;
        uint8_t* mk = mask + static_cast<size_t>(b) * d;
        for (int j = 0; j < d; ++j) {
            const bool keep = rng.uniform() >= rate;
            mk[j] = keep ? 1 : 0;
            y[j] = keep ? x[j] * scale : 0.0;
        }
    }
}

void dropout_backward(const double* dY, const uint8_t* mask, int r, int d, double rate,
                      double* dX) {
    const double scale = 1.0 / (1.0 - rate);
#pragma omp parallel for schedule(static)
    for (int b = 0; b < r; ++b) {
        const double* dy = dY + static_cast<size_t>(b) * d;
        const uint8_t* mk = mask + static_cast<size_t>(b) * d;
        double* dx = dX + static_cast<size_t>(b) * d;
        for (int j = 0; j < d; ++j) dx[j] = mk[j] ? dy[j] * scale : 0.0;
    }
}

void sgd_update(double* w, double* vel, const double* g, size_t n, double lr, double momentum) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        vel[i] = momentum * vel[i] - lr * g[i];
        w[i] += vel[i];
    }
}

namespace {

// Internal ordering key: smaller = better for both metrics.
inline double hit_key(const float* rec, const double* norms, int row, int dim, const float* query,
                      double query_norm, Metric metric) {
    if (metric == Metric::Cosine) {
        if (norms[row] <= 0.0) return std::numeric_limits<double>::infinity();
        double acc = 0.0;
        for (int j = 0; j < dim; ++j)
            acc += static_cast<double>(query[j]) * static_cast<double>(rec[j]);
        return -(acc / (query_norm * norms[row]));
    }
    double acc = 0.0;
    for (int j = 0; j < dim; ++j) {
        const double diff = static_cast<double>(query[j]) - static_cast<double>(rec[j]);
        acc += diff * diff;
    }
    return std::sqrt(acc);
}

struct Cand {
    double key;
    int rank;
    int row;
};

inline bool better(const Cand& a, const Cand& b) {
    if (a.key != b.key) return a.key < b.key;
    return a.rank < b.rank;
}

inline double query_l2(const float* query, int dim) {
    double acc = 0.0;
    for (int j = 0; j < dim; ++j)
        acc += static_cast<double>(query[j]) * static_cast<double>(query[j]);
    return std::sqrt(acc);
}

std::vector<RowHit> finish_hits(std::vector<Cand> cands, int k, Metric metric) {
    std::sort(cands.begin(), cands.end(), better);
    if (static_cast<int>(cands.size()) > k) cands.resize(k);
    std::vector<RowHit> out;
    out.reserve(cands.size());
    for (const Cand& c : cands)
        out.push_back({c.row, metric == Metric::Cosine ? -c.key : c.key});
    return out;
}

}  // namespace

std::vector<RowHit> topk_scan(const float* data, const double* norms, int n, int dim,
                              const float* query, int k, Metric metric, const int* lex_rank,
                              const uint8_t* excluded, int extra_excluded_row) {
    const double qn = metric == Metric::Cosine ? query_l2(query, dim) : 0.0;
    constexpr int kBlock = 4096;
    const int nblocks = (n + kBlock - 1) / kBlock;
    std::vector<std::vector<Cand>> locals(nblocks);
#pragma omp parallel for schedule(dynamic)
    for (int blk = 0; blk < nblocks; ++blk) {
        auto& loc = locals[blk];
        const int r0 = blk * kBlock;
        const int r1 = std::min(n, r0 + kBlock);
        // loc kept sorted worst-last once it reaches k entries
        for (int row = r0; row < r1; ++row) {
            if (excluded && excluded[row]) continue;
            if (row == extra_excluded_row) continue;
            const Cand c{hit_key(data + static_cast<size_t>(row) * dim, norms, row, dim, query, qn,
                                 metric),
                         lex_rank[row], row};
            if (metric == Metric::Cosine && std::isinf(c.key)) continue;  // zero-norm record
            if (static_cast<int>(loc.size()) < k) {
                loc.push_back(c);
                if (static_cast<int>(loc.size()) == k)
                    std::sort(loc.begin(), loc.end(), better);
            } else if (better(c, loc.back())) {
                // insert into sorted position, drop current worst
                auto it = std::upper_bound(loc.begin(), loc.end(), c, better);
                loc.pop_back();
                loc.insert(it, c);
            }
        }
    }
    std::vector<Cand> all;
    for (auto& loc : locals) all.insert(all.end(), loc.begin(), loc.end());
    return finish_hits(std::move(all), k, metric);
}

namespace serial {

void gemm_bias(const double* A, int r, int m, const double* W, int n, const double* bias,
               double* C) {
    for (int b = 0; b < r; ++b) {
        double* crow = C + static_cast<size_t>(b) * n;
        if (bias)
            std::copy(bias, bias + n, crow);
        else
            std::fill(crow, crow + n, 0.0);
        const double* arow = A + static_cast<size_t>(b) * m;
        for (int k = 0; k < m; ++k) {
            const double s = arow[k];
            const double* wrow = W + static_cast<size_t>(k) * n;
            for (int j = 0; j < n; ++j) crow[j] += s * wrow[j];
        }
    }
}

void gemm_at_b(const double* A, const double* G, int r, int m, int n, double* dW) {
    std::fill(dW, dW + static_cast<size_t>(m) * n, 0.0);
    for (int b = 0; b < r; ++b) {
        const double* arow = A + static_cast<size_t>(b) * m;
        const double* grow = G + static_cast<size_t>(b) * n;
        for (int i = 0; i < m; ++i) {
            const double s = arow[i];
            double* drow = dW + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) drow[j] += s * grow[j];
        }
    }
}

void gemm_b_wt(const double* G, const double* W, int r, int m, int n, double* dX) {
    for (int b = 0; b < r; ++b) {
        const double* grow = G + static_cast<size_t>(b) * n;
        double* xrow = dX + static_cast<size_t>(b) * m;
        for (int i = 0; i < m; ++i) {
            const double* wrow = W + static_cast<size_t>(i) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += grow[j] * wrow[j];
            xrow[i] = acc;
        }
    }
}

void layernorm_forward(const double* X, int r, int d, const double* gain, const double* bias,
                       double* Y, double* xhat, double* inv_std) {
    for (int b = 0; b < r; ++b) {
        const double* x = X + static_cast<size_t>(b) * d;
        double* xh = xhat + static_cast<size_t>(b) * d;
        double* y = Y + static_cast<size_t>(b) * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += x[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double dv = x[j] - mean;
            var += dv * dv;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + kLayerNormVarFloor);
        inv_std[b] = is;
        for (int j = 0; j < d; ++j) {
            xh[j] = (x[j] - mean) * is;
            y[j] = gain[j] * xh[j] + bias[j];
        }
    }
}

std::vector<RowHit> topk_scan(const float* data, const double* norms, int n, int dim,
                              const float* query, int k, Metric metric, const int* lex_rank,
                              const uint8_t* excluded, int extra_excluded_row) {
    const double qn = metric == Metric::Cosine ? query_l2(query, dim) : 0.0;
    std::vector<Cand> all;
    all.reserve(n);
    for (int row = 0; row < n; ++row) {
        if (excluded && excluded[row]) continue;
        if (row == extra_excluded_row) continue;
        const Cand c{
            hit_key(data + static_cast<size_t>(row) * dim, norms, row, dim, query, qn, metric),
            lex_rank[row], row};
        if (metric == Metric::Cosine && std::isinf(c.key)) continue;
        all.push_back(c);
    }
    return finish_hits(std::move(all), k, metric);
}

}  // namespace serial

}  // namespace ramer::kernels
