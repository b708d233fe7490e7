// Times the OpenMP kernels against their serial reference implementations.

#include <chrono>
#include <cmath>
#include <functional>
#include <cstdio>
#include <string>
#include <vector>

#include <omp.h>

#include "ramer/kernels.hpp"
#include "ramer/rng.hpp"

using namespace ramer;
using Clock = std::chrono::steady_clock;

namespace {

double time_ms(int reps, const std::function<void()>& fn) {
    fn();  // warm-up
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double omp_ms) {
    std::printf("%-28s serial %9.3f ms   omp %9.3f ms   speedup %5.2fx\n", name, serial_ms,
                omp_ms, serial_ms / omp_ms);
}

}  // namespace

int main() {
    std::printf("threads: %d\n", omp_get_max_threads());
    Rng rng(7);

    {
        const int r = 128, m = 5120, n = 256;
        std::vector<double> A(static_cast<size_t>(r) * m), W(static_cast<size_t>(m) * n),
            bias(n), C(static_cast<size_t>(r) * n);
        for (auto& x : A) x = rng.gaussian();
        for (auto& x : W) x = rng.gaussian();
        const double s = time_ms(3, [&] {
            kernels::serial::gemm_bias(A.data(), r, m, W.data(), n, bias.data(), C.data());
        });
        const double p = time_ms(3, [&] {
            kernels::gemm_bias(A.data(), r, m, W.data(), n, bias.data(), C.data());
        });
        report("gemm_bias 128x5120x256", s, p);
    }
    {
        const int r = 128, m = 5120, n = 256;
        std::vector<double> A(static_cast<size_t>(r) * m), G(static_cast<size_t>(r) * n),
            dW(static_cast<size_t>(m) * n);
        for (auto& x : A) x = rng.gaussian();
        for (auto& x : G) x = rng.gaussian();
        const double s = time_ms(3, [&] {
            kernels::serial::gemm_at_b(A.data(), G.data(), r, m, n, dW.data());
        });
        const double p =
            time_ms(3, [&] { kernels::gemm_at_b(A.data(), G.data(), r, m, n, dW.data()); });
        report("gemm_at_b 128x5120x256", s, p);
    }
    {
        const int n = 20000, dim = 256, k = 10;
        std::vector<float> data(static_cast<size_t>(n) * dim), q(dim);
        std::vector<double> norms(n);
        std::vector<int> rank(n);
        for (auto& x : data) x = static_cast<float>(rng.gaussian());
        for (auto& x : q) x = static_cast<float>(rng.gaussian());
        for (int i = 0; i < n; ++i) {
            rank[i] = i;
            double acc = 0.0;
            for (int j = 0; j < dim; ++j) {
                const double v = data[static_cast<size_t>(i) * dim + j];
                acc += v * v;
            }
            norms[i] = std::sqrt(acc);
        }
        const double s = time_ms(10, [&] {
            kernels::serial::topk_scan(data.data(), norms.data(), n, dim, q.data(), k,
                                       kernels::Metric::Cosine, rank.data(), nullptr, -1);
        });
        const double p = time_ms(10, [&] {
            kernels::topk_scan(data.data(), norms.data(), n, dim, q.data(), k,
                               kernels::Metric::Cosine, rank.data(), nullptr, -1);
        });
        report("topk_scan 20000x256 k=10", s, p);
    }
    {
        const int r = 2048, d = 256;
        std::vector<double> X(static_cast<size_t>(r) * d), Y(X.size()), xh(X.size()), is(r),
            gain(d, 1.0), bias(d, 0.0);
        for (auto& x : X) x = rng.gaussian();
        const double s = time_ms(10, [&] {
            kernels::serial::layernorm_forward(X.data(), r, d, gain.data(), bias.data(), Y.data(),
                                               xh.data(), is.data());
        });
        const double p = time_ms(10, [&] {
            kernels::layernorm_forward(X.data(), r, d, gain.data(), bias.data(), Y.data(),
                                       xh.data(), is.data());
        });
        report("layernorm 2048x256", s, p);
    }
    return 0;
}
