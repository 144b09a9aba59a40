#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "hncse/numerics.hpp"

namespace testutil {

// Brute-force loss oracles: plain exp sums over every denominator term in
// long double, no log-sum-exp rearrangement. These stay independent of the
// implementation path they check.

inline long double oracle_infonce_batch(const hncse::Mat& anchors, const hncse::Mat& views,
                                        double tau, bool exclude_self) {
    using hncse::dot;
    const std::size_t b = anchors.rows;
    long double total = 0.0L;
    for (std::size_t i = 0; i < b; ++i) {
        const long double num =
            expl(static_cast<long double>(dot(anchors.row(i), views.row(i))) / tau);
        long double den = 0.0L;
        for (std::size_t j = 0; j < b; ++j) {
            if (!(exclude_self && j == i))
                den += expl(static_cast<long double>(dot(anchors.row(i), anchors.row(j))) / tau);
            den += expl(static_cast<long double>(dot(anchors.row(i), views.row(j))) / tau);
        }
        total += -logl(num / den);
    }
    return total / static_cast<long double>(b);
}

inline long double oracle_bank_loss(const hncse::Vec& q, const hncse::Vec& k,
                                    const hncse::Mat& bank, double tau) {
    using hncse::dot;
    const long double num = expl(static_cast<long double>(dot(q, k)) / tau);
    long double den = num;
    for (std::size_t i = 0; i < bank.rows; ++i)
        den += expl(static_cast<long double>(dot(q, bank.row(i))) / tau);
    return -logl(num / den);
}

// Independent Spearman oracle: explicit fractional ranking then a Pearson
// computed from raw accumulators.
inline double oracle_spearman(const std::vector<double>& x, const std::vector<double>& y) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        std::size_t i = 0;
        while (i < idx.size()) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            for (std::size_t k = i; k <= j; ++k)
                r[idx[k]] = 1.0 + (static_cast<double>(i) + static_cast<double>(j)) / 2.0;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x);
    const auto ry = ranks(y);
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sx += rx[i];
        sy += ry[i];
        sxx += rx[i] * rx[i];
        syy += ry[i] * ry[i];
        sxy += rx[i] * ry[i];
    }
    const double cov = sxy - sx * sy / n;
    const double vx = sxx - sx * sx / n;
    const double vy = syy - sy * sy / n;
    return cov / std::sqrt(vx * vy);
}

}  // namespace testutil
