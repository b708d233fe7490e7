#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ramer/error.hpp"

namespace ramer::num {

using Vec = std::vector<double>;

// Row-major dense matrix of doubles.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    void resize(int r, int c) {
        rows = r;
        cols = c;
        a.assign(static_cast<size_t>(r) * c, 0.0);
    }
    double* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return a.data() + static_cast<size_t>(r) * cols; }
    double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
    double* data() { return a.data(); }
    const double* data() const { return a.data(); }
    size_t size() const { return a.size(); }
};

// Norms at or below this are degenerate; callers get an explicit error
// instead of a silent zero.
inline constexpr double kNormEps = 1e-10;
inline constexpr double kProbFloor = 1e-12;

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
Vec l2_normalize(std::span<const double> a);  // throws Degenerate when norm <= kNormEps
double cosine_similarity(std::span<const double> a, std::span<const double> b);
Vec softmax(std::span<const double> logits);
double cross_entropy(std::span<const double> probs, int target);

// Central differences (f(p+h) - f(p-h)) / 2h per coordinate.
Vec finite_diff_grad(const std::function<double(const Vec&)>& f, Vec params, double h = 1e-5);

void check_finite(std::span<const double> v, const char* what);

}  // namespace ramer::num
