#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "hncse/encoder.hpp"
#include "hncse/numerics.hpp"

namespace hncse {

enum class AlphaPolicy { Adaptive, Fixed, UniformRandom };

struct MixConfig {
    double theta = 0.7;          // hard-negative similarity threshold
    std::size_t k_top = 16;      // HNM retrieval size
    std::size_t m_synth = 8;     // mixed negatives per anchor
    double w1 = 0.8;             // positive weight in PM blending
    double w2 = 0.2;             // hardest-negative weight
    double pm_threshold = 0.1;   // Eq. 2's printed 0.1 cutoff
    AlphaPolicy alpha_policy = AlphaPolicy::Adaptive;
    double alpha_fixed = 0.5;
    double alpha_lo = 0.1;
    double alpha_hi = 0.9;
    double beta = 1.0;           // diversity/difficulty balance
    bool literal_case_c = false; // fidelity: use the printed third-case coefficients
    bool renormalize = true;     // fidelity: re-normalize PM outputs
};

inline void validate(const MixConfig& c) {
    if (!(c.theta > -1.0 && c.theta < 1.0)) raise(ErrorKind::BadConfig, "theta must be in (-1,1)");
    if (c.k_top < 2) raise(ErrorKind::BadConfig, "k_top must be >= 2");
    if (c.m_synth < 1) raise(ErrorKind::BadConfig, "m_synth must be >= 1");
    if (std::abs(c.w1 + c.w2 - 1.0) > 1e-12 || !(c.w1 > c.w2 && c.w2 > 0.0))
        raise(ErrorKind::BadConfig, "require w1 + w2 = 1 and w1 > w2 > 0");
    if (!(c.pm_threshold > 0.0 && c.pm_threshold < 1.0))
        raise(ErrorKind::BadConfig, "pm_threshold must be in (0,1)");
    if (!(c.alpha_lo > 0.0 && c.alpha_lo <= c.alpha_hi && c.alpha_hi < 1.0))
        raise(ErrorKind::BadConfig, "require 0 < alpha_lo <= alpha_hi < 1");
    if (!(c.beta >= 0.0)) raise(ErrorKind::BadConfig, "beta must be >= 0");
}

struct HardNegativeSet {
    Vec anchor;
    std::vector<std::size_t> index;  // positions in the candidate matrix
    std::vector<double> sim;         // similarity to anchor, descending
    Mat members;                     // one row per member, same order as sim
};

// argsort by similarity descending, candidate index ascending on ties
inline std::vector<std::size_t> rank_by_similarity(const Vec& anchor, const Mat& candidates) {
    std::vector<double> sims(candidates.rows);
    for (std::size_t i = 0; i < candidates.rows; ++i)
        sims[i] = cosine_sim(anchor, candidates.row(i));
    std::vector<std::size_t> order(candidates.rows);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (sims[a] != sims[b]) return sims[a] > sims[b];
        return a < b;
    });
    return order;
}

/// All candidates with cosine similarity above theta, hardest first.
inline HardNegativeSet hard_negative_set(const Vec& anchor, const Mat& candidates, double theta) {
    HardNegativeSet hn;
    hn.anchor = anchor;
    hn.members = Mat(0, candidates.cols);
    for (std::size_t idx : rank_by_similarity(anchor, candidates)) {
        const double s = cosine_sim(anchor, candidates.row(idx));
        if (s > theta) {
            hn.index.push_back(idx);
            hn.sim.push_back(s);
            hn.members.push_row(candidates.row(idx));
        }
    }
    return hn;
}

/// The k most-similar candidates, similarity descending, index tie-break.
inline Mat topk_hard(const Vec& anchor, const Mat& candidates, std::size_t k) {
    if (candidates.rows < k)
        raise(ErrorKind::InsufficientCandidates, "topk_hard: fewer candidates than k");
    const auto order = rank_by_similarity(anchor, candidates);
    Mat out(0, candidates.cols);
    for (std::size_t i = 0; i < k; ++i) out.push_row(candidates.row(order[i]));
    return out;
}

enum class PmCase { Blend, Keep, Correct };

/// Eq. 2's branch on d1 = sim(q, s+), d2 = sim(q, s-). The d1 = d2 boundary
/// (ratio exactly 0) joins the blend branch by continuity.
inline PmCase pm_case(double d1, double d2, double threshold) {
    if (d1 < d2) return PmCase::Correct;
    return (d1 - d2) / d1 <= threshold ? PmCase::Blend : PmCase::Keep;
}

namespace mix_detail {
inline Vec finish_mix(Vec u, bool renormalize) {
    if (!renormalize) return u;
    const double n = l2_norm(u);
    if (!(n > kNormEps)) raise(ErrorKind::DegenerateMix, "positive_mix: mixture has zero norm");
    for (double& x : u) x /= n;
    return u;
}
}  // namespace mix_detail

/// Query-aware correction of the positive using the hardest negative.
/// The third case uses the convex reinterpretation with weight
/// beta_c = (d2-d1)/d2 on the hard negative unless literal_case_c is set,
/// in which case the printed negative-coefficient form is applied verbatim.
inline Vec positive_mix(const Vec& q, const Vec& s_pos, const Vec& s_hardneg,
                        const MixConfig& cfg) {
    const double d1 = cosine_sim(q, s_pos);
    const double d2 = cosine_sim(q, s_hardneg);
    if (!(d1 > 0.0))
        raise(ErrorKind::DegenerateSimilarity, "positive_mix: query-positive similarity <= 0");
    switch (pm_case(d1, d2, cfg.pm_threshold)) {
        case PmCase::Keep:
            return s_pos;
        case PmCase::Blend: {
            Vec u(q.size());
            for (std::size_t j = 0; j < u.size(); ++j)
                u[j] = cfg.w1 * s_pos[j] + cfg.w2 * s_hardneg[j];
            return mix_detail::finish_mix(std::move(u), cfg.renormalize);
        }
        case PmCase::Correct: {
            Vec u(q.size());
            if (cfg.literal_case_c) {
                const double r1 = (d1 - d2) / d1;
                const double r2 = (d1 - d2) / d2;
                for (std::size_t j = 0; j < u.size(); ++j)
                    u[j] = r1 * s_pos[j] + r2 * s_hardneg[j];
            } else {
                const double bc = (d2 - d1) / d2;
                for (std::size_t j = 0; j < u.size(); ++j)
                    u[j] = (1.0 - bc) * s_pos[j] + bc * s_hardneg[j];
            }
            return mix_detail::finish_mix(std::move(u), cfg.renormalize);
        }
    }
    return s_pos;  // unreachable
}

/// Mixing coefficient from pair similarity. Adaptive policy: more similar
/// pairs interpolate less, alpha = clamp(1 - (sim+1)/2, lo, hi).
inline double adaptive_alpha(double sim_ij, const MixConfig& cfg, std::mt19937_64& rng) {
    switch (cfg.alpha_policy) {
        case AlphaPolicy::Fixed:
            return cfg.alpha_fixed;
        case AlphaPolicy::UniformRandom:
            return uniform_in(rng, cfg.alpha_lo, cfg.alpha_hi);
        case AlphaPolicy::Adaptive:
        default:
            return std::clamp(1.0 - (sim_ij + 1.0) / 2.0, cfg.alpha_lo, cfg.alpha_hi);
    }
}

inline std::size_t bounded_index(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::size_t>(rng() % n);
}

/// Synthesizes m hard negatives u_o = normalize(alpha G_i + (1-alpha) G_j)
/// with (i, j) distinct indices drawn from the run RNG. Outputs are detached
/// constants; no gradient ever flows into them. With endpoint_only (the
/// mixup-removed ablation) the draws and alpha are consumed identically but
/// u_o is G_i itself.
inline Mat hnm_mixup(const Mat& g, std::size_t m, const MixConfig& cfg, std::mt19937_64& rng,
                     bool endpoint_only = false) {
    if (g.rows < 2) raise(ErrorKind::InsufficientCandidates, "hnm_mixup: need at least 2 vectors");
    Mat out(0, g.cols);
    for (std::size_t o = 0; o < m; ++o) {
        const std::size_t i = bounded_index(rng, g.rows);
        std::size_t j = bounded_index(rng, g.rows - 1);
        if (j >= i) ++j;
        const double alpha = adaptive_alpha(cosine_sim(g.row(i), g.row(j)), cfg, rng);
        const double a = endpoint_only ? 1.0 : alpha;
        Vec u(g.cols);
        for (std::size_t c = 0; c < g.cols; ++c) u[c] = a * g.row(i)[c] + (1.0 - a) * g.row(j)[c];
        const double n = l2_norm(u);
        if (!(n > kNormEps)) raise(ErrorKind::DegenerateMix, "hnm_mixup: mixture has zero norm");
        for (double& x : u) x /= n;
        out.push_row(u);
    }
    return out;
}

namespace mix_detail {
inline double selection_objective(const HardNegativeSet& hn, const std::vector<std::size_t>& sel,
                                  double beta) {
    double diversity = 0.0;
    if (sel.size() >= 2) {
        std::size_t pairs = 0;
        for (std::size_t a = 0; a < sel.size(); ++a)
            for (std::size_t b = a + 1; b < sel.size(); ++b) {
                diversity += 1.0 - cosine_sim(hn.members.row(sel[a]), hn.members.row(sel[b]));
                ++pairs;
            }
        diversity /= static_cast<double>(pairs);
    }
    double hardness = 0.0;
    for (std::size_t s : sel) hardness += hn.sim[s];
    return diversity - beta * hardness;
}
}  // namespace mix_detail

/// Greedy maximization of D(S) - beta * sum sim(anchor, h), seeded with the
/// hardest negative. Ties go to the lower member index.
inline HardNegativeSet select_diverse_hard(const HardNegativeSet& hn, std::size_t budget,
                                           double beta) {
    if (budget > hn.sim.size())
        raise(ErrorKind::InsufficientCandidates, "select_diverse_hard: budget exceeds set size");
    HardNegativeSet out;
    out.anchor = hn.anchor;
    out.members = Mat(0, hn.members.cols);
    if (budget == 0) return out;

    std::vector<std::size_t> sel{0};
    std::vector<bool> taken(hn.sim.size(), false);
    taken[0] = true;
    while (sel.size() < budget) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = hn.sim.size();
        for (std::size_t c = 0; c < hn.sim.size(); ++c) {
            if (taken[c]) continue;
            sel.push_back(c);
            const double obj = mix_detail::selection_objective(hn, sel, beta);
            sel.pop_back();
            if (obj > best) {
                best = obj;
                best_idx = c;
            }
        }
        sel.push_back(best_idx);
        taken[best_idx] = true;
    }
    for (std::size_t s : sel) {
        out.index.push_back(hn.index[s]);
        out.sim.push_back(hn.sim[s]);
        out.members.push_row(hn.members.row(s));
    }
    return out;
}

}  // namespace hncse
