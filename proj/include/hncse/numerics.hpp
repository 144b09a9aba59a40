#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "hncse/errors.hpp"

namespace hncse {

using Vec = std::vector<double>;

/// Row-major dense matrix of doubles. Rows are embeddings.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    Vec row_vec(std::size_t i) const {
        auto r = row(i);
        return Vec(r.begin(), r.end());
    }

    void push_row(std::span<const double> v) {
        if (rows == 0 && cols == 0) cols = v.size();
        if (v.size() != cols) raise(ErrorKind::DimMismatch, "push_row: row length mismatch");
        data.insert(data.end(), v.begin(), v.end());
        ++rows;
    }
};

/// Probability distribution; entries in [0,1] summing to 1.
using ProbDist = std::vector<double>;

constexpr double kNormEps = 1e-12;

inline bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) raise(ErrorKind::DimMismatch, "dot: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline Vec l2_normalize(std::span<const double> v) {
    const double n = l2_norm(v);
    if (!(n > kNormEps)) raise(ErrorKind::ZeroNorm, "l2_normalize: norm below 1e-12");
    Vec out(v.begin(), v.end());
    for (double& x : out) x /= n;
    return out;
}

inline double cosine_sim(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) raise(ErrorKind::DimMismatch, "cosine_sim: dimension mismatch");
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (!(na > kNormEps) || !(nb > kNormEps)) raise(ErrorKind::ZeroNorm, "cosine_sim: zero-norm input");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// Tempered softmax with max-subtraction.
inline ProbDist softmax_tau(std::span<const double> logits, double tau) {
    if (!(tau > 0.0)) raise(ErrorKind::NonPositiveTau, "softmax_tau: tau must be positive");
    if (logits.empty()) raise(ErrorKind::DimMismatch, "softmax_tau: empty logits");
    const double m = *std::max_element(logits.begin(), logits.end());
    ProbDist p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - m) / tau);
        z += p[i];
    }
    for (double& x : p) x /= z;
    return p;
}

/// Gradient of cosine similarity w.r.t. its first argument:
///   b / (||a|| ||b||) - sim(a,b) a / ||a||^2.
inline Vec similarity_gradient(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) raise(ErrorKind::DimMismatch, "similarity_gradient: dimension mismatch");
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (!(na > kNormEps) || !(nb > kNormEps))
        raise(ErrorKind::ZeroNorm, "similarity_gradient: zero-norm input");
    const double sim = dot(a, b) / (na * nb);
    Vec g(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) g[i] = b[i] / (na * nb) - sim * a[i] / (na * na);
    return g;
}

/// Central-difference gradient of a scalar function, one coordinate at a time.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-5) {
    Vec g(x.size());
    Vec probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double fp = f(probe);
        probe[i] = x[i] - h;
        const double fm = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            raise(ErrorKind::NonFiniteEvaluation, "fd_gradient: non-finite function value");
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace hncse
