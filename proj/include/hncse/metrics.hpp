#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "hncse/numerics.hpp"

namespace hncse {

/// Net change in the mean pairwise distance, after minus before: positive
/// means the embeddings dispersed. All ordered pairs, self-pairs included.
inline double pairwise_distance_delta(const Mat& before, const Mat& after) {
    if (before.rows != after.rows || before.cols != after.cols)
        raise(ErrorKind::ShapeMismatch, "pairwise_distance_delta: shape mismatch");
    if (before.rows == 0) raise(ErrorKind::ShapeMismatch, "pairwise_distance_delta: empty input");
    auto mean_pairwise = [](const Mat& m) {
        double total = 0.0;
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < m.rows; ++j) {
                double d2 = 0.0;
                const auto ri = m.row(i);
                const auto rj = m.row(j);
                for (std::size_t c = 0; c < m.cols; ++c) {
                    const double d = ri[c] - rj[c];
                    d2 += d * d;
                }
                total += std::sqrt(d2);
            }
        return total / (static_cast<double>(m.rows) * static_cast<double>(m.rows));
    };
    return mean_pairwise(after) - mean_pairwise(before);
}

/// div(f, f') = sqrt( sum_i ||f(s_i) - f'(s_i)||^2 ): Frobenius distance of
/// aligned snapshots.
inline double embedding_divergence(const Mat& before, const Mat& after) {
    if (before.rows != after.rows || before.cols != after.cols)
        raise(ErrorKind::ShapeMismatch, "embedding_divergence: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < before.data.size(); ++i) {
        const double d = before.data[i] - after.data[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

/// Histogram of cosine similarities over fixed range [-1, 1].
struct SimilarityHistogram {
    std::size_t bin_count = 50;
    double eps = 1e-9;
    std::vector<double> counts;

    explicit SimilarityHistogram(std::size_t bins = 50, double smoothing = 1e-9)
        : bin_count(bins), eps(smoothing), counts(bins, 0.0) {}

    void add(double sim) {
        const double t = (std::clamp(sim, -1.0, 1.0) + 1.0) / 2.0;
        auto b = static_cast<std::size_t>(t * static_cast<double>(bin_count));
        if (b >= bin_count) b = bin_count - 1;
        counts[b] += 1.0;
    }

    /// eps added to every bin, then normalized to sum 1.
    std::vector<double> normalized() const {
        std::vector<double> p(counts);
        double total = 0.0;
        for (double& x : p) {
            x += eps;
            total += x;
        }
        for (double& x : p) x /= total;
        return p;
    }

    /// All ordered sentence pairs, self-pairs included (similarity 1).
    static SimilarityHistogram from_embeddings(const Mat& m, std::size_t bins = 50,
                                               double smoothing = 1e-9) {
        SimilarityHistogram h(bins, smoothing);
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < m.rows; ++j)
                h.add(cosine_sim(m.row(i), m.row(j)));
        return h;
    }
};

/// KL(P||Q) over the smoothed-normalized histograms, natural log.
inline double similarity_kl(const SimilarityHistogram& p, const SimilarityHistogram& q) {
    if (p.bin_count != q.bin_count) raise(ErrorKind::BinMismatch, "similarity_kl: bin mismatch");
    const auto pp = p.normalized();
    const auto qq = q.normalized();
    double kl = 0.0;
    for (std::size_t b = 0; b < pp.size(); ++b) kl += pp[b] * std::log(pp[b] / qq[b]);
    return kl;
}

/// Minimum over anchors and (positive, mixed-negative) combinations of
/// sim(a, s+) - sim(a, hn_mix).
inline double delta_margin(const Mat& anchors, const std::vector<Mat>& positives,
                           const std::vector<Mat>& mixed_negs) {
    if (anchors.rows == 0 || positives.size() != anchors.rows || mixed_negs.size() != anchors.rows)
        raise(ErrorKind::EmptySet, "delta_margin: empty or misaligned inputs");
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < anchors.rows; ++i) {
        const auto& pos = positives[i];
        const auto& neg = mixed_negs[i];
        if (pos.rows == 0 || neg.rows == 0)
            raise(ErrorKind::EmptySet, "delta_margin: anchor without positive or mixed negative");
        for (std::size_t p = 0; p < pos.rows; ++p) {
            const double sp = cosine_sim(anchors.row(i), pos.row(p));
            for (std::size_t n = 0; n < neg.rows; ++n)
                margin = std::min(margin, sp - cosine_sim(anchors.row(i), neg.row(n)));
        }
    }
    return margin;
}

struct EvalTriplet {
    std::string anchor;
    std::string positive;
    std::string negative;
};

/// Fraction of aligned (anchor, positive, negative) embedding rows where the
/// positive is strictly closer; ties count as failures.
inline double triplet_accuracy(const Mat& anchors, const Mat& positives, const Mat& negatives) {
    if (anchors.rows == 0 || positives.rows != anchors.rows || negatives.rows != anchors.rows)
        raise(ErrorKind::EmptySet, "triplet_accuracy: empty or misaligned inputs");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < anchors.rows; ++i) {
        const double sp = cosine_sim(anchors.row(i), positives.row(i));
        const double sn = cosine_sim(anchors.row(i), negatives.row(i));
        if (sp > sn) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(anchors.rows);
}

struct AccuracyDelta {
    double before = 0.0;
    double after = 0.0;
    double delta = 0.0;
};

using EncodeFn = std::function<Vec(const std::string&)>;

/// Triplet accuracy under both encoders (dropout must be disabled in them).
inline AccuracyDelta accuracy_delta(const std::vector<EvalTriplet>& triplets,
                                    const EncodeFn& f_before, const EncodeFn& f_after) {
    if (triplets.empty()) raise(ErrorKind::EmptySet, "accuracy_delta: no triplets");
    auto run = [&](const EncodeFn& f) {
        Mat a(0, 0), p(0, 0), n(0, 0);
        for (const auto& t : triplets) {
            a.push_row(f(t.anchor));
            p.push_row(f(t.positive));
            n.push_row(f(t.negative));
        }
        return triplet_accuracy(a, p, n);
    };
    AccuracyDelta out;
    out.before = run(f_before);
    out.after = run(f_after);
    out.delta = out.after - out.before;
    return out;
}

namespace rank_detail {
inline std::vector<double> fractional_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}
}  // namespace rank_detail

/// Pearson correlation of fractional ranks.
inline double spearman(const std::vector<double>& pred, const std::vector<double>& gold) {
    if (pred.size() != gold.size()) raise(ErrorKind::DimMismatch, "spearman: length mismatch");
    if (pred.size() < 2) raise(ErrorKind::DegenerateInput, "spearman: need at least 2 values");
    const auto rp = rank_detail::fractional_ranks(pred);
    const auto rg = rank_detail::fractional_ranks(gold);
    const double n = static_cast<double>(pred.size());
    const double mp = std::accumulate(rp.begin(), rp.end(), 0.0) / n;
    const double mg = std::accumulate(rg.begin(), rg.end(), 0.0) / n;
    double cov = 0.0, vp = 0.0, vg = 0.0;
    for (std::size_t i = 0; i < rp.size(); ++i) {
        cov += (rp[i] - mp) * (rg[i] - mg);
        vp += (rp[i] - mp) * (rp[i] - mp);
        vg += (rg[i] - mg) * (rg[i] - mg);
    }
    if (vp == 0.0 || vg == 0.0)
        raise(ErrorKind::DegenerateInput, "spearman: constant input list");
    return cov / std::sqrt(vp * vg);
}

struct MetricReport {
    std::uint64_t step = 0;
    double loss = 0.0;
    double delta_pairwise = 0.0;
    double divergence = 0.0;
    double kl = 0.0;
    double delta_margin = 0.0;
    double acc_delta = 0.0;
    double spearman = 0.0;
    double lr = 0.0;
};

inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string metric_csv_header() {
    return "step,loss,delta_pairwise,divergence,kl,delta_margin,acc_delta,spearman,lr";
}

inline std::string metric_csv_row(const MetricReport& r) {
    std::string row = std::to_string(r.step);
    for (double v : {r.loss, r.delta_pairwise, r.divergence, r.kl, r.delta_margin, r.acc_delta,
                     r.spearman, r.lr}) {
        row.push_back(',');
        row += format_double(v);
    }
    return row;
}

}  // namespace hncse
