#pragma once

#include <cmath>
#include <vector>

#include "hncse/encoder.hpp"
#include "hncse/numerics.hpp"

namespace hncse {

struct LossConfig {
    double tau = 0.05;
    double lambda_reg = 1e-4;
    bool exclude_self = true;
};

/// One anchor's InfoNCE term over an explicit candidate list (row 0 is the
/// positive, remaining rows are negatives). Computed as
///   loss = log(1 + sum_n exp((s_n - s_0)/tau))
/// which avoids the cancellation of -s_0/tau + logsumexp when the positive
/// dominates, so finite-difference probes stay resolvable.
struct InfonceTerm {
    double loss = 0.0;
    double pos_prob = 1.0;
    std::vector<double> neg_prob;  // softmax probability of candidates 1..
};

inline InfonceTerm infonce_term(const Vec& query, const Mat& candidates, double tau) {
    if (!(tau > 0.0)) raise(ErrorKind::NonPositiveTau, "infonce_term: tau must be positive");
    if (candidates.rows < 1 || candidates.cols != query.size())
        raise(ErrorKind::DimMismatch, "infonce_term: candidate shape mismatch");

    const double s0 = dot(query, candidates.row(0));
    const std::size_t n = candidates.rows - 1;
    std::vector<double> z(n);
    double zmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = (dot(query, candidates.row(i + 1)) - s0) / tau;
        zmax = std::max(zmax, z[i]);
    }
    InfonceTerm out;
    out.neg_prob.resize(n);
    const double base = std::exp(-zmax);  // positive's unnormalized weight
    double sum = base;
    for (std::size_t i = 0; i < n; ++i) {
        out.neg_prob[i] = std::exp(z[i] - zmax);
        sum += out.neg_prob[i];
    }
    for (double& p : out.neg_prob) p /= sum;
    out.pos_prob = base / sum;
    if (zmax == 0.0) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += std::exp(z[i]);
        out.loss = std::log1p(acc);
    } else {
        out.loss = zmax + std::log(sum);
    }
    return out;
}

/// Accumulates upstream * d(term)/d(query) and upstream * d(term)/d(candidates).
/// Gradients are written in the difference form
///   d/dq = (1/tau) sum_n p_n (c_n - c_0)
/// which is exact and keeps tiny probabilities fully resolved.
inline void infonce_term_backward(const Vec& query, const Mat& candidates, double tau,
                                  double upstream, Vec& d_query, Mat& d_candidates) {
    const InfonceTerm term = infonce_term(query, candidates, tau);
    if (d_query.size() != query.size()) d_query.assign(query.size(), 0.0);
    if (d_candidates.rows != candidates.rows || d_candidates.cols != candidates.cols)
        d_candidates = Mat(candidates.rows, candidates.cols);

    const double w = upstream / tau;
    const auto c0 = candidates.row(0);
    auto g0 = d_candidates.row(0);
    double pneg_total = 0.0;
    for (std::size_t i = 0; i < term.neg_prob.size(); ++i) {
        const double p = term.neg_prob[i];
        pneg_total += p;
        const auto cn = candidates.row(i + 1);
        auto gn = d_candidates.row(i + 1);
        for (std::size_t j = 0; j < query.size(); ++j) {
            d_query[j] += w * p * (cn[j] - c0[j]);
            gn[j] += w * p * query[j];
        }
    }
    for (std::size_t j = 0; j < query.size(); ++j) g0[j] -= w * pneg_total * query[j];
}

/// SimCSE-style in-batch InfoNCE. Row i of `anchors` pairs with row i of
/// `views`; the denominator for anchor i ranges over the other 2B-1 batch
/// vectors (the anchor itself is included only when exclude_self is false).
inline double infonce_batch(const Mat& anchors, const Mat& views, const LossConfig& cfg) {
    if (anchors.rows != views.rows || anchors.cols != views.cols || anchors.rows < 1)
        raise(ErrorKind::DimMismatch, "infonce_batch: anchor/view shape mismatch");
    const std::size_t b = anchors.rows;
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        Mat cand(0, 0);
        cand.push_row(views.row(i));
        for (std::size_t j = 0; j < b; ++j)
            if (j != i) cand.push_row(anchors.row(j));
        for (std::size_t j = 0; j < b; ++j)
            if (j != i) cand.push_row(views.row(j));
        if (!cfg.exclude_self) cand.push_row(anchors.row(i));
        total += infonce_term(anchors.row_vec(i), cand, cfg.tau).loss;
    }
    return total / static_cast<double>(b);
}

/// Negative-bank contrastive loss: -log( e^{q.k/tau} / (e^{q.k/tau} + sum_n e^{q.n/tau}) ).
inline double bank_loss(const Vec& q, const Vec& k, const Mat& bank, const LossConfig& cfg) {
    if (q.size() != k.size() || (bank.rows > 0 && bank.cols != q.size()))
        raise(ErrorKind::DimMismatch, "bank_loss: dimension mismatch");
    if (bank.rows == 0) return 0.0;
    Mat cand(0, 0);
    cand.push_row(k);
    for (std::size_t i = 0; i < bank.rows; ++i) cand.push_row(bank.row(i));
    return infonce_term(q, cand, cfg.tau).loss;
}

/// d bank_loss / d q = -(1/tau) [ (1 - p_k) k - sum_n p_n n ], evaluated in the
/// equivalent difference form -(1/tau) sum_n p_n (k - n).
inline Vec bank_loss_grad_q(const Vec& q, const Vec& k, const Mat& bank, const LossConfig& cfg) {
    if (q.size() != k.size() || (bank.rows > 0 && bank.cols != q.size()))
        raise(ErrorKind::DimMismatch, "bank_loss_grad_q: dimension mismatch");
    Vec g(q.size(), 0.0);
    if (bank.rows == 0) return g;
    Mat cand(0, 0);
    cand.push_row(k);
    for (std::size_t i = 0; i < bank.rows; ++i) cand.push_row(bank.row(i));
    const InfonceTerm term = infonce_term(q, cand, cfg.tau);
    for (std::size_t i = 0; i < bank.rows; ++i) {
        const double p = term.neg_prob[i];
        const auto n = bank.row(i);
        for (std::size_t j = 0; j < q.size(); ++j) g[j] -= (p / cfg.tau) * (k[j] - n[j]);
    }
    return g;
}

inline double regularized_objective(double base_loss, const EncoderState& state,
                                    const LossConfig& cfg) {
    return base_loss + cfg.lambda_reg * param_squared_l2(state);
}

/// Exact d bank_loss / d tau; the full softmax derivative, every term kept:
///   dL/dtau = -(1/tau^2) sum_n p_n (s_n - s_k).
inline double temperature_grad(const Vec& q, const Vec& k, const Mat& bank,
                               const LossConfig& cfg) {
    if (q.size() != k.size() || (bank.rows > 0 && bank.cols != q.size()))
        raise(ErrorKind::DimMismatch, "temperature_grad: dimension mismatch");
    if (bank.rows == 0) return 0.0;
    Mat cand(0, 0);
    cand.push_row(k);
    for (std::size_t i = 0; i < bank.rows; ++i) cand.push_row(bank.row(i));
    const InfonceTerm term = infonce_term(q, cand, cfg.tau);
    const double sk = dot(q, k);
    double acc = 0.0;
    for (std::size_t i = 0; i < bank.rows; ++i)
        acc += term.neg_prob[i] * (dot(q, bank.row(i)) - sk);
    return -acc / (cfg.tau * cfg.tau);
}

}  // namespace hncse
