#include "ramer/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ramer::num {

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw_error(ErrorKind::Config, "dot: dimension mismatch (" + std::to_string(a.size()) +
                                           " vs " + std::to_string(b.size()) + ")");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double l2_norm(std::span<const double> a) {
    double acc = 0.0;
    for (double x : a) acc += x * x;
    return std::sqrt(acc);
}

Vec l2_normalize(std::span<const double> a) {
    const double n = l2_norm(a);
    if (n <= kNormEps)
        throw_error(ErrorKind::Degenerate, "l2_normalize: vector norm " + std::to_string(n) +
                                               " below degeneracy threshold");
    Vec out(a.size());
    for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] / n;
    return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na <= kNormEps || nb <= kNormEps)
        throw_error(ErrorKind::Degenerate, "cosine_similarity: zero-norm input");
    return dot(a, b) / (na * nb);
}

Vec softmax(std::span<const double> logits) {
    Vec out(logits.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : logits) mx = std::max(mx, x);
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

double cross_entropy(std::span<const double> probs, int target) {
    if (target < 0 || static_cast<size_t>(target) >= probs.size())
        throw_error(ErrorKind::Config,
                    "cross_entropy: target " + std::to_string(target) + " out of range");
    return -std::log(std::max(probs[target], kProbFloor));
}

Vec finite_diff_grad(const std::function<double(const Vec&)>& f, Vec params, double h) {
    Vec grad(params.size(), 0.0);
    for (size_t i = 0; i < params.size(); ++i) {
        const double p0 = params[i];
        params[i] = p0 + h;
        const double fp = f(params);
        params[i] = p0 - h;
        const double fm = f(params);
        params[i] = p0;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

void check_finite(std::span<const double> v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x))
            throw_error(ErrorKind::Runtime, std::string(what) + ": non-finite value");
}

}  // namespace ramer::num
