#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include <omp.h>

#include "ramer/kernels.hpp"
#include "ramer/rng.hpp"

using namespace ramer;
namespace k = ramer::kernels;

namespace {

std::vector<double> randd(Rng& rng, size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.gaussian();
    return v;
}

std::vector<float> randf(Rng& rng, size_t n) {
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(rng.gaussian());
    return v;
}

std::vector<double> row_norms(const std::vector<float>& data, int n, int dim) {
    std::vector<double> norms(n);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < dim; ++j) {
            const double v = data[static_cast<size_t>(i) * dim + j];
            acc += v * v;
        }
        norms[i] = std::sqrt(acc);
    }
    return norms;
}

}  // namespace

TEST_CASE("gemm matches naive triple loop bitwise") {
    Rng rng(21);
    const int r = 13, m = 37, n = 17;
    const auto A = randd(rng, static_cast<size_t>(r) * m);
    const auto W = randd(rng, static_cast<size_t>(m) * n);
    const auto bias = randd(rng, n);
    std::vector<double> C(static_cast<size_t>(r) * n), Cs(C.size());
    k::gemm_bias(A.data(), r, m, W.data(), n, bias.data(), C.data());
    k::serial::gemm_bias(A.data(), r, m, W.data(), n, bias.data(), Cs.data());
    CHECK(C == Cs);

    // naive oracle with explicit indexing
    for (int b = 0; b < r; ++b)
        for (int j = 0; j < n; ++j) {
            double acc = bias[j];
            for (int kk = 0; kk < m; ++kk)
                acc += A[static_cast<size_t>(b) * m + kk] * W[static_cast<size_t>(kk) * n + j];
            CHECK(C[static_cast<size_t>(b) * n + j] == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("gemm_at_b and gemm_b_wt match serial") {
    Rng rng(22);
    const int r = 19, m = 41, n = 23;
    const auto A = randd(rng, static_cast<size_t>(r) * m);
    const auto G = randd(rng, static_cast<size_t>(r) * n);
    std::vector<double> dW(static_cast<size_t>(m) * n), dWs(dW.size());
    k::gemm_at_b(A.data(), G.data(), r, m, n, dW.data());
    k::serial::gemm_at_b(A.data(), G.data(), r, m, n, dWs.data());
    for (size_t i = 0; i < dW.size(); ++i) CHECK(dW[i] == doctest::Approx(dWs[i]).epsilon(1e-12));

    const auto W = randd(rng, static_cast<size_t>(m) * n);
    std::vector<double> dX(static_cast<size_t>(r) * m), dXs(dX.size());
    k::gemm_b_wt(G.data(), W.data(), r, m, n, dX.data());
    k::serial::gemm_b_wt(G.data(), W.data(), r, m, n, dXs.data());
    CHECK(dX == dXs);
}

TEST_CASE("results are independent of the thread count") {
    Rng rng(23);
    const int r = 33, m = 129, n = 65;
    const auto A = randd(rng, static_cast<size_t>(r) * m);
    const auto W = randd(rng, static_cast<size_t>(m) * n);
    std::vector<double> C1(static_cast<size_t>(r) * n), C2(C1.size());
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    k::gemm_bias(A.data(), r, m, W.data(), n, nullptr, C1.data());
    omp_set_num_threads(saved > 1 ? saved : 2);
    k::gemm_bias(A.data(), r, m, W.data(), n, nullptr, C2.data());
    omp_set_num_threads(saved);
    CHECK(C1 == C2);

    const int nrec = 9000, dim = 32;
    const auto data = randf(rng, static_cast<size_t>(nrec) * dim);
    const auto q = randf(rng, dim);
    const auto norms = row_norms(data, nrec, dim);
    std::vector<int> rank(nrec);
    for (int i = 0; i < nrec; ++i) rank[i] = i;
    omp_set_num_threads(1);
    const auto h1 = k::topk_scan(data.data(), norms.data(), nrec, dim, q.data(), 12,
                                 k::Metric::Cosine, rank.data(), nullptr, -1);
    omp_set_num_threads(saved > 1 ? saved : 2);
    const auto h2 = k::topk_scan(data.data(), norms.data(), nrec, dim, q.data(), 12,
                                 k::Metric::Cosine, rank.data(), nullptr, -1);
    omp_set_num_threads(saved);
    REQUIRE(h1.size() == h2.size());
    for (size_t i = 0; i < h1.size(); ++i) {
        CHECK(h1[i].row == h2[i].row);
        CHECK(h1[i].score == h2[i].score);
    }
}

TEST_CASE("topk_scan equals serial full sort, both metrics") {
    Rng rng(24);
    const int n = 5000, dim = 24;
    const auto data = randf(rng, static_cast<size_t>(n) * dim);
    const auto norms = row_norms(data, n, dim);
    std::vector<int> rank(n);
    for (int i = 0; i < n; ++i) rank[i] = i;
    for (const auto metric : {k::Metric::Cosine, k::Metric::Euclidean}) {
        for (int kk : {1, 7, 64, 6000}) {
            const auto q = randf(rng, dim);
            const auto got = k::topk_scan(data.data(), norms.data(), n, dim, q.data(), kk,
                                          metric, rank.data(), nullptr, -1);
            const auto want = k::serial::topk_scan(data.data(), norms.data(), n, dim, q.data(),
                                                   kk, metric, rank.data(), nullptr, -1);
            REQUIRE(got.size() == want.size());
            for (size_t i = 0; i < got.size(); ++i) {
                CHECK(got[i].row == want[i].row);
                CHECK(got[i].score == want[i].score);
            }
        }
    }
}

TEST_CASE("topk_scan honors exclusions and zero-norm records") {
    Rng rng(25);
    const int n = 64, dim = 8;
    auto data = randf(rng, static_cast<size_t>(n) * dim);
    for (int j = 0; j < dim; ++j) data[5 * dim + j] = 0.0f;  // zero-norm record
    const auto norms = row_norms(data, n, dim);
    std::vector<int> rank(n);
    for (int i = 0; i < n; ++i) rank[i] = i;
    std::vector<uint8_t> excl(n, 0);
    excl[7] = 1;
    const auto q = randf(rng, dim);
    const auto hits = k::topk_scan(data.data(), norms.data(), n, dim, q.data(), n,
                                   k::Metric::Cosine, rank.data(), excl.data(), 9);
    CHECK(hits.size() == static_cast<size_t>(n - 3));  // minus excluded 7, extra 9, zero-norm 5
    for (const auto& h : hits) {
        CHECK(h.row != 5);
        CHECK(h.row != 7);
        CHECK(h.row != 9);
    }
    // monotone scores
    for (size_t i = 1; i < hits.size(); ++i) CHECK(hits[i - 1].score >= hits[i].score);
}

TEST_CASE("layernorm rows are standardized") {
    Rng rng(26);
    const int r = 7, d = 64;
    const auto X = randd(rng, static_cast<size_t>(r) * d);
    std::vector<double> gain(d, 1.0), bias(d, 0.0);
    std::vector<double> Y(X.size()), xhat(X.size()), inv_std(r);
    k::layernorm_forward(X.data(), r, d, gain.data(), bias.data(), Y.data(), xhat.data(),
                         inv_std.data());
    for (int b = 0; b < r; ++b) {
        double mean = 0.0, var = 0.0;
        for (int j = 0; j < d; ++j) mean += Y[static_cast<size_t>(b) * d + j];
        mean /= d;
        for (int j = 0; j < d; ++j) {
            const double dv = Y[static_cast<size_t>(b) * d + j] - mean;
            var += dv * dv;
        }
        var /= d;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("dropout is deterministic per seed and inverted") {
    Rng rng(27);
    const int r = 4, d = 512;
    const auto X = randd(rng, static_cast<size_t>(r) * d);
    std::vector<double> Y1(X.size()), Y2(X.size());
    std::vector<uint8_t> m1(X.size()), m2(X.size());
    k::dropout_forward(X.data(), r, d, 0.5, 99, Y1.data(), m1.data());
    k::dropout_forward(X.data(), r, d, 0.5, 99, Y2.data(), m2.data());
    CHECK(Y1 == Y2);
    CHECK(m1 == m2);
    k::dropout_forward(X.data(), r, d, 0.5, 100, Y2.data(), m2.data());
    CHECK(m1 != m2);
    for (size_t i = 0; i < X.size(); ++i) {
        if (m1[i])
            CHECK(Y1[i] == doctest::Approx(X[i] * 2.0));
        else
            CHECK(Y1[i] == 0.0);
    }
}
