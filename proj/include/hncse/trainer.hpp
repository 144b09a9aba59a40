#pragma once

#include <cstdint>
#include <deque>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hncse/encoder.hpp"
#include "hncse/losses.hpp"
#include "hncse/metrics.hpp"
#include "hncse/mixing.hpp"

namespace hncse {

enum class TrainMode { Simcse, HncsePm, HncseHnm, PmSingle, HnmSingle };

inline bool is_pm_mode(TrainMode m) { return m == TrainMode::HncsePm || m == TrainMode::PmSingle; }
inline bool is_hnm_mode(TrainMode m) {
    return m == TrainMode::HncseHnm || m == TrainMode::HnmSingle;
}

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t max_seq_len = 32;
    std::size_t epochs = 1;
    double lr = 0.05;
    double lr_decay = 0.9;  // gamma
    std::uint64_t seed = 0;
    std::size_t bank_capacity = 256;
    TrainMode mode = TrainMode::Simcse;
    std::size_t eval_every = 50;
    std::size_t d_emb = 32;
    std::size_t d_out = 32;
    double dropout_rate = 0.1;
    MixConfig mix;
    LossConfig loss;
};

inline void validate(const TrainConfig& c) {
    if (c.batch_size < 2) raise(ErrorKind::BadConfig, "batch_size must be >= 2");
    if (c.max_seq_len < 1) raise(ErrorKind::BadConfig, "max_seq_len must be >= 1");
    if (!(c.lr > 0.0)) raise(ErrorKind::BadConfig, "lr must be positive");
    if (!(c.lr_decay > 0.0 && c.lr_decay < 1.0)) raise(ErrorKind::BadConfig, "lr_decay must be in (0,1)");
    if (c.bank_capacity < 1) raise(ErrorKind::BadConfig, "bank_capacity must be >= 1");
    if (c.eval_every < 1) raise(ErrorKind::BadConfig, "eval_every must be >= 1");
    if (c.d_emb < 1 || c.d_out < 1) raise(ErrorKind::BadConfig, "embedding dims must be >= 1");
    if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0))
        raise(ErrorKind::BadConfig, "dropout_rate must be in [0,1)");
    if (!(c.loss.tau > 0.0)) raise(ErrorKind::BadConfig, "tau must be positive");
    if (!(c.loss.lambda_reg >= 0.0) || !std::isfinite(c.loss.lambda_reg))
        raise(ErrorKind::BadConfig, "lambda_reg must be finite and >= 0");
    validate(c.mix);
}

/// eta * gamma^[used mixed negatives this step]
inline double lr_adjust(double eta, double gamma, bool used_mixed_negatives) {
    if (!(gamma > 0.0 && gamma < 1.0)) raise(ErrorKind::InvalidGamma, "gamma must be in (0,1)");
    return used_mixed_negatives ? eta * gamma : eta;
}

struct BankEntry {
    Vec v;
    std::uint64_t source_step = 0;
};

/// Bounded FIFO of detached unit-norm embeddings from prior minibatches.
struct NegativeBank {
    std::size_t capacity = 256;
    std::deque<BankEntry> entries;

    std::size_t size() const { return entries.size(); }

    Mat matrix() const {
        Mat m(0, 0);
        for (const auto& e : entries) m.push_row(e.v);
        return m;
    }
};

inline void bank_push(NegativeBank& bank, const Mat& embeddings, std::uint64_t step) {
    for (std::size_t i = 0; i < embeddings.rows; ++i) {
        bank.entries.push_back({embeddings.row_vec(i), step});
        if (bank.entries.size() > bank.capacity) bank.entries.pop_front();
    }
}

struct RunState {
    EncoderState encoder;
    NegativeBank bank;
    std::uint64_t step = 0;  // completed training steps
    std::mt19937_64 rng;
    double current_eta = 0.0;
};

inline RunState init_run(const std::vector<std::string>& corpus, const TrainConfig& cfg) {
    RunState run;
    run.rng = std::mt19937_64(cfg.seed);
    run.encoder = init_encoder(build_vocab(corpus), cfg.d_emb, cfg.d_out, cfg.dropout_rate,
                               cfg.seed, run.rng);
    run.bank.capacity = cfg.bank_capacity;
    run.current_eta = cfg.lr;
    return run;
}

// ---------------------------------------------------------------------------
// One training step, split into a pure forward pass (replayable for gradient
// probes) and the analytic backward pass.
// ---------------------------------------------------------------------------

enum class NegSource { None, BatchAnchor, BatchView, Bank };

struct PmRecord {
    bool applied = false;        // mixing changed the positive
    PmCase branch = PmCase::Keep;
    NegSource src = NegSource::None;
    std::size_t src_idx = 0;
    double d1 = 0.0, d2 = 0.0;
    Vec u;                       // pre-normalization mixture
    double u_norm = 1.0;
};

struct CandidateRef {
    enum class Kind { Positive, BatchAnchor, BatchView, Detached };
    Kind kind = Kind::Detached;
    std::size_t idx = 0;
};

struct StepForward {
    std::vector<std::vector<std::size_t>> tokens;
    std::vector<DropoutMask> mask_a, mask_v;
    Mat raw_a, raw_v;    // encoder outputs
    Mat hat_a, hat_v;    // unit-normalized views
    std::vector<PmRecord> pm;
    Mat pos;             // effective positives (rows of hat_v unless PM applied)
    std::vector<Mat> synth;
    bool used_synth = false;
    bool hnm_underflow = false;
    std::vector<Mat> cand;                           // per-anchor candidates, row 0 = positive
    std::vector<std::vector<CandidateRef>> cand_ref;
    double infonce_loss = 0.0;
    double total_loss = 0.0;
    std::mt19937_64 rng_after;
};

inline std::uint64_t mask_step_key(std::uint64_t step, std::size_t batch_size, std::size_t item) {
    return step * static_cast<std::uint64_t>(batch_size) + static_cast<std::uint64_t>(item);
}

inline StepForward forward_step(const RunState& run, const std::vector<std::string>& batch,
                                const TrainConfig& cfg) {
    if (batch.size() < 2) raise(ErrorKind::BadConfig, "train_step: batch must have >= 2 sentences");
    const std::size_t b = batch.size();
    StepForward f;
    f.rng_after = run.rng;
    f.raw_a = Mat(0, 0);
    f.raw_v = Mat(0, 0);
    f.hat_a = Mat(0, 0);
    f.hat_v = Mat(0, 0);

    for (std::size_t i = 0; i < b; ++i) {
        auto toks = tokenize(run.encoder.vocab, batch[i], cfg.max_seq_len);
        const auto key = mask_step_key(run.step, cfg.batch_size, i);
        auto m0 = make_dropout_mask(toks.size(), run.encoder.d_emb(), run.encoder.dropout_rate,
                                    run.encoder.seed, key, 0);
        auto m1 = make_dropout_mask(toks.size(), run.encoder.d_emb(), run.encoder.dropout_rate,
                                    run.encoder.seed, key, 1);
        const Vec ra = encode(run.encoder, toks, m0);
        const Vec rv = encode(run.encoder, toks, m1);
        f.raw_a.push_row(ra);
        f.raw_v.push_row(rv);
        f.hat_a.push_row(l2_normalize(ra));
        f.hat_v.push_row(l2_normalize(rv));
        f.tokens.push_back(std::move(toks));
        f.mask_a.push_back(std::move(m0));
        f.mask_v.push_back(std::move(m1));
    }

    const Mat bank_mat = run.bank.matrix();

    // Positive Mixing: correct each positive with the hardest negative from
    // in-batch others + bank, all decisions taken against the pre-mix views.
    f.pm.assign(b, PmRecord{});
    f.pos = f.hat_v;
    if (is_pm_mode(cfg.mode)) {
        for (std::size_t i = 0; i < b; ++i) {
            PmRecord& rec = f.pm[i];
            double best = -2.0;
            for (std::size_t j = 0; j < b; ++j) {
                if (j == i) continue;
                const double s = cosine_sim(f.hat_a.row(i), f.hat_a.row(j));
                if (s > best) {
                    best = s;
                    rec.src = NegSource::BatchAnchor;
                    rec.src_idx = j;
                }
            }
            for (std::size_t j = 0; j < b; ++j) {
                if (j == i) continue;
                const double s = cosine_sim(f.hat_a.row(i), f.hat_v.row(j));
                if (s > best) {
                    best = s;
                    rec.src = NegSource::BatchView;
                    rec.src_idx = j;
                }
            }
            for (std::size_t j = 0; j < bank_mat.rows; ++j) {
                const double s = cosine_sim(f.hat_a.row(i), bank_mat.row(j));
                if (s > best) {
                    best = s;
                    rec.src = NegSource::Bank;
                    rec.src_idx = j;
                }
            }
            rec.d1 = cosine_sim(f.hat_a.row(i), f.hat_v.row(i));
            rec.d2 = best;
            if (!(rec.d1 > 0.0)) continue;  // degenerate positive, leave unmixed
            rec.branch = pm_case(rec.d1, rec.d2, cfg.mix.pm_threshold);
            if (rec.branch == PmCase::Keep) continue;
            if (rec.branch == PmCase::Correct && cfg.mode == TrainMode::PmSingle) continue;

            const auto hard = rec.src == NegSource::Bank      ? bank_mat.row(rec.src_idx)
                              : rec.src == NegSource::BatchView ? f.hat_v.row(rec.src_idx)
                                                                : f.hat_a.row(rec.src_idx);
            const auto v = f.hat_v.row(i);
            rec.u.resize(v.size());
            if (rec.branch == PmCase::Blend) {
                for (std::size_t c = 0; c < v.size(); ++c)
                    rec.u[c] = cfg.mix.w1 * v[c] + cfg.mix.w2 * hard[c];
            } else if (cfg.mix.literal_case_c) {
                const double r1 = (rec.d1 - rec.d2) / rec.d1;
                const double r2 = (rec.d1 - rec.d2) / rec.d2;
                for (std::size_t c = 0; c < v.size(); ++c) rec.u[c] = r1 * v[c] + r2 * hard[c];
            } else {
                const double bc = (rec.d2 - rec.d1) / rec.d2;
                for (std::size_t c = 0; c < v.size(); ++c)
                    rec.u[c] = (1.0 - bc) * v[c] + bc * hard[c];
            }
            rec.applied = true;
            if (cfg.mix.renormalize) {
                rec.u_norm = l2_norm(rec.u);
                if (!(rec.u_norm > kNormEps))
                    raise(ErrorKind::DegenerateMix, "train_step: degenerate positive mix");
                auto prow = f.pos.row(i);
                for (std::size_t c = 0; c < v.size(); ++c) prow[c] = rec.u[c] / rec.u_norm;
            } else {
                rec.u_norm = 1.0;
                auto prow = f.pos.row(i);
                for (std::size_t c = 0; c < v.size(); ++c) prow[c] = rec.u[c];
            }
        }
    }

    // Hard Negative Mixing: per-anchor top-k retrieval from the bank and
    // mixup synthesis; silently disabled until the bank holds k entries.
    f.synth.assign(b, Mat(0, 0));
    if (is_hnm_mode(cfg.mode)) {
        if (bank_mat.rows < cfg.mix.k_top) {
            f.hnm_underflow = true;
        } else {
            for (std::size_t i = 0; i < b; ++i) {
                const Mat g = topk_hard(f.hat_a.row_vec(i), bank_mat, cfg.mix.k_top);
                f.synth[i] = hnm_mixup(g, cfg.mix.m_synth, cfg.mix, f.rng_after,
                                       cfg.mode == TrainMode::HnmSingle);
            }
            f.used_synth = true;
        }
    }

    // Per-anchor candidate sets: positive first, then the other 2B-2 batch
    // vectors, bank entries, synthetic negatives, and optionally the anchor.
    f.cand.resize(b);
    f.cand_ref.resize(b);
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        Mat& cand = f.cand[i];
        auto& refs = f.cand_ref[i];
        cand = Mat(0, 0);
        cand.push_row(f.pos.row(i));
        refs.push_back({CandidateRef::Kind::Positive, i});
        for (std::size_t j = 0; j < b; ++j)
            if (j != i) {
                cand.push_row(f.hat_a.row(j));
                refs.push_back({CandidateRef::Kind::BatchAnchor, j});
            }
        for (std::size_t j = 0; j < b; ++j)
            if (j != i) {
                cand.push_row(f.pos.row(j));
                refs.push_back({CandidateRef::Kind::BatchView, j});
            }
        for (std::size_t j = 0; j < bank_mat.rows; ++j) {
            cand.push_row(bank_mat.row(j));
            refs.push_back({CandidateRef::Kind::Detached, j});
        }
        for (std::size_t j = 0; j < f.synth[i].rows; ++j) {
            cand.push_row(f.synth[i].row(j));
            refs.push_back({CandidateRef::Kind::Detached, j});
        }
        if (!cfg.loss.exclude_self) {
            cand.push_row(f.hat_a.row(i));
            refs.push_back({CandidateRef::Kind::Detached, i});  // self term carries no new path
        }
        loss_sum += infonce_term(f.hat_a.row_vec(i), cand, cfg.loss.tau).loss;
    }
    f.infonce_loss = loss_sum / static_cast<double>(b);
    f.total_loss = regularized_objective(f.infonce_loss, run.encoder, cfg.loss);
    return f;
}

namespace trainer_detail {

// dL/d(unit vector) -> dL/d(raw vector) through y = u / ||u||.
inline Vec through_normalize(const Vec& g_hat, std::span<const double> unit, double raw_norm) {
    const double proj = dot(g_hat, unit);
    Vec g(unit.size());
    for (std::size_t c = 0; c < unit.size(); ++c) g[c] = (g_hat[c] - proj * unit[c]) / raw_norm;
    return g;
}

inline void axpy(Vec& dst, double a, std::span<const double> x) {
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += a * x[c];
}

}  // namespace trainer_detail

/// Exact gradient of forward_step's total loss w.r.t. every encoder
/// parameter. Bank and synthetic negatives are constants; every other path,
/// including the positive-mix coefficients of the correction branch, is
/// differentiated.
inline ParamGrad backward_step(const RunState& run, const StepForward& f, const TrainConfig& cfg) {
    const std::size_t b = f.tokens.size();
    const std::size_t d = run.encoder.d_out();
    const double inv_b = 1.0 / static_cast<double>(b);
    const Mat bank_mat = run.bank.matrix();

    std::vector<Vec> g_hat_a(b, Vec(d, 0.0));  // dL/d normalized anchor
    std::vector<Vec> g_pos(b, Vec(d, 0.0));    // dL/d effective positive
    std::vector<Vec> g_hat_v(b, Vec(d, 0.0));  // dL/d normalized view (pre-mix)

    for (std::size_t i = 0; i < b; ++i) {
        Vec d_query;
        Mat d_cand;
        infonce_term_backward(f.hat_a.row_vec(i), f.cand[i], cfg.loss.tau, inv_b, d_query, d_cand);
        for (std::size_t c = 0; c < d; ++c) g_hat_a[i][c] += d_query[c];
        for (std::size_t r = 0; r < d_cand.rows; ++r) {
            const auto& ref = f.cand_ref[i][r];
            const auto grow = d_cand.row(r);
            switch (ref.kind) {
                case CandidateRef::Kind::Positive:
                    trainer_detail::axpy(g_pos[i], 1.0, grow);
                    break;
                case CandidateRef::Kind::BatchAnchor:
                    trainer_detail::axpy(g_hat_a[ref.idx], 1.0, grow);
                    break;
                case CandidateRef::Kind::BatchView:
                    trainer_detail::axpy(g_pos[ref.idx], 1.0, grow);
                    break;
                case CandidateRef::Kind::Detached:
                    break;
            }
        }
    }

    // Chain each positive's gradient back through its mixing record.
    for (std::size_t i = 0; i < b; ++i) {
        const PmRecord& rec = f.pm[i];
        if (!rec.applied) {
            trainer_detail::axpy(g_hat_v[i], 1.0, std::span<const double>(g_pos[i]));
            continue;
        }
        Vec g_u(d, 0.0);
        if (cfg.mix.renormalize) {
            const auto p = f.pos.row(i);
            const double proj = dot(g_pos[i], p);
            for (std::size_t c = 0; c < d; ++c) g_u[c] = (g_pos[i][c] - proj * p[c]) / rec.u_norm;
        } else {
            g_u = g_pos[i];
        }
        const auto hard = rec.src == NegSource::Bank      ? bank_mat.row(rec.src_idx)
                          : rec.src == NegSource::BatchView ? f.hat_v.row(rec.src_idx)
                                                            : f.hat_a.row(rec.src_idx);
        const auto v = f.hat_v.row(i);
        const auto a = f.hat_a.row(i);
        const bool hard_in_batch = rec.src != NegSource::Bank;
        Vec* g_hard = nullptr;
        if (hard_in_batch)
            g_hard = rec.src == NegSource::BatchView ? &g_hat_v[rec.src_idx]
                                                     : &g_hat_a[rec.src_idx];

        if (rec.branch == PmCase::Blend) {
            trainer_detail::axpy(g_hat_v[i], cfg.mix.w1, std::span<const double>(g_u));
            if (g_hard) trainer_detail::axpy(*g_hard, cfg.mix.w2, std::span<const double>(g_u));
        } else if (!cfg.mix.literal_case_c) {
            // u = (1 - bc) v + bc h, bc = (d2 - d1)/d2
            const double bc = (rec.d2 - rec.d1) / rec.d2;
            trainer_detail::axpy(g_hat_v[i], 1.0 - bc, std::span<const double>(g_u));
            if (g_hard) trainer_detail::axpy(*g_hard, bc, std::span<const double>(g_u));
            double g_bc = 0.0;
            for (std::size_t c = 0; c < d; ++c) g_bc += g_u[c] * (hard[c] - v[c]);
            const double g_d1 = g_bc * (-1.0 / rec.d2);
            const double g_d2 = g_bc * (rec.d1 / (rec.d2 * rec.d2));
            trainer_detail::axpy(g_hat_a[i], g_d1, v);
            trainer_detail::axpy(g_hat_v[i], g_d1, a);
            trainer_detail::axpy(g_hat_a[i], g_d2, hard);
            if (g_hard) trainer_detail::axpy(*g_hard, g_d2, a);
        } else {
            // u = r1 v + r2 h, r1 = (d1-d2)/d1, r2 = (d1-d2)/d2
            const double r1 = (rec.d1 - rec.d2) / rec.d1;
            const double r2 = (rec.d1 - rec.d2) / rec.d2;
            trainer_detail::axpy(g_hat_v[i], r1, std::span<const double>(g_u));
            if (g_hard) trainer_detail::axpy(*g_hard, r2, std::span<const double>(g_u));
            double g_r1 = 0.0, g_r2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                g_r1 += g_u[c] * v[c];
                g_r2 += g_u[c] * hard[c];
            }
            const double g_d1 = g_r1 * (rec.d2 / (rec.d1 * rec.d1)) + g_r2 * (1.0 / rec.d2);
            const double g_d2 = g_r1 * (-1.0 / rec.d1) + g_r2 * (-rec.d1 / (rec.d2 * rec.d2));
            trainer_detail::axpy(g_hat_a[i], g_d1, v);
            trainer_detail::axpy(g_hat_v[i], g_d1, a);
            trainer_detail::axpy(g_hat_a[i], g_d2, hard);
            if (g_hard) trainer_detail::axpy(*g_hard, g_d2, a);
        }
    }

    // Through the unit-normalizations, then through the encoder.
    ParamGrad grad = ParamGrad::zeros_like(run.encoder);
    for (std::size_t i = 0; i < b; ++i) {
        const double na = l2_norm(f.raw_a.row(i));
        const double nv = l2_norm(f.raw_v.row(i));
        const Vec g_raw_a = trainer_detail::through_normalize(g_hat_a[i], f.hat_a.row(i), na);
        const Vec g_raw_v = trainer_detail::through_normalize(g_hat_v[i], f.hat_v.row(i), nv);
        backward(run.encoder, f.tokens[i], f.mask_a[i], g_raw_a, grad);
        backward(run.encoder, f.tokens[i], f.mask_v[i], g_raw_v, grad);
    }

    // d/dtheta of lambda * sum theta^2
    const double two_lambda = 2.0 * cfg.loss.lambda_reg;
    if (two_lambda != 0.0) {
        for (std::size_t i = 0; i < grad.emb.data.size(); ++i)
            grad.emb.data[i] += two_lambda * run.encoder.emb.data[i];
        for (std::size_t i = 0; i < grad.proj_w.data.size(); ++i)
            grad.proj_w.data[i] += two_lambda * run.encoder.proj_w.data[i];
        for (std::size_t i = 0; i < grad.proj_b.size(); ++i)
            grad.proj_b[i] += two_lambda * run.encoder.proj_b[i];
    }
    return grad;
}

/// Applies backward, learning-rate adjustment, SGD update and bank push for
/// an already-computed forward pass.
inline MetricReport apply_step(RunState& run, const StepForward& f, const TrainConfig& cfg) {
    const ParamGrad grad = backward_step(run, f, cfg);

    // Transient decay from the base rate: eta recovers as soon as a step
    // consumes no synthetic negatives.
    run.current_eta = lr_adjust(cfg.lr, cfg.lr_decay, f.used_synth);
    const double eta = run.current_eta;
    for (std::size_t i = 0; i < run.encoder.emb.data.size(); ++i)
        run.encoder.emb.data[i] -= eta * grad.emb.data[i];
    for (std::size_t i = 0; i < run.encoder.proj_w.data.size(); ++i)
        run.encoder.proj_w.data[i] -= eta * grad.proj_w.data[i];
    for (std::size_t i = 0; i < run.encoder.proj_b.size(); ++i)
        run.encoder.proj_b[i] -= eta * grad.proj_b[i];

    bank_push(run.bank, f.hat_v, run.step);
    run.rng = f.rng_after;
    ++run.step;

    MetricReport report;
    report.step = run.step;
    report.loss = f.total_loss;
    report.lr = eta;
    return report;
}

/// Full training step: forward, backward, learning-rate adjustment, SGD
/// update, bank push. Returns the step's loss and effective learning rate.
inline MetricReport train_step(RunState& run, const std::vector<std::string>& batch,
                               const TrainConfig& cfg) {
    return apply_step(run, forward_step(run, batch, cfg), cfg);
}

// ---------------------------------------------------------------------------
// Training loop with periodic evaluation.
// ---------------------------------------------------------------------------

struct EvalPair {
    std::string a;
    std::string b;
    double gold = 0.0;
};

inline Vec encode_nodrop(const EncoderState& state, const std::vector<std::size_t>& tokens) {
    return encode(state, tokens, make_dropout_mask(tokens.size(), state.d_emb(), 0.0, 0, 0, 0));
}

inline Vec encode_sentence(const EncoderState& state, const std::string& text,
                           std::size_t max_seq_len) {
    return encode_nodrop(state, tokenize(state.vocab, text, max_seq_len));
}

inline double spearman_eval(const EncoderState& state, const std::vector<EvalPair>& pairs,
                            std::size_t max_seq_len) {
    std::vector<double> pred, gold;
    pred.reserve(pairs.size());
    gold.reserve(pairs.size());
    for (const auto& p : pairs) {
        pred.push_back(cosine_sim(encode_sentence(state, p.a, max_seq_len),
                                  encode_sentence(state, p.b, max_seq_len)));
        gold.push_back(p.gold);
    }
    return spearman(pred, gold);
}

inline void fisher_yates(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[bounded_index(rng, i)]);
}

struct TrainResult {
    RunState run;
    std::vector<MetricReport> trace;  // one row per evaluation step
    std::vector<double> step_loss;    // every step, for descent diagnostics
    double initial_spearman = 0.0;
};

namespace trainer_detail {

inline Mat snapshot_embeddings(const EncoderState& enc,
                               const std::vector<std::vector<std::size_t>>& token_sets) {
    Mat m(0, 0);
    for (const auto& toks : token_sets) m.push_row(l2_normalize(encode_nodrop(enc, toks)));
    return m;
}

/// Diagnostic mixed negatives: per-anchor top-k bank retrieval + mixup off a
/// dedicated metrics RNG so every mode sees the same synthesis procedure.
inline std::vector<Mat> diagnostic_mixed_negs(const Mat& anchors, const NegativeBank& bank,
                                              const MixConfig& mix, std::uint64_t seed,
                                              std::uint64_t step) {
    std::vector<Mat> out(anchors.rows, Mat(0, 0));
    const Mat bank_mat = bank.matrix();
    if (bank_mat.rows < mix.k_top) return out;
    auto rng = derive_rng(seed, 0x6D65747269ULL, step);  // "metri"
    for (std::size_t i = 0; i < anchors.rows; ++i) {
        const Mat g = topk_hard(anchors.row_vec(i), bank_mat, mix.k_top);
        out[i] = hnm_mixup(g, mix.m_synth, mix, rng);
    }
    return out;
}

}  // namespace trainer_detail

/// Shuffles once per epoch with the run RNG, iterates full batches (the tail
/// remainder is dropped), evaluates every eval_every steps and at the end.
inline TrainResult train(const std::vector<std::string>& corpus,
                         const std::vector<EvalPair>& eval_pairs, const TrainConfig& cfg) {
    validate(cfg);
    if (corpus.size() < cfg.batch_size)
        raise(ErrorKind::EmptyCorpus, "train: corpus smaller than one batch");

    TrainResult result;
    result.run = init_run(corpus, cfg);
    RunState& run = result.run;

    // diagnostic sentence set: a fixed corpus prefix, re-embedded at each
    // evaluation and compared against the previous evaluation's snapshot
    std::vector<std::vector<std::size_t>> diag_tokens;
    for (std::size_t i = 0; i < std::min<std::size_t>(64, corpus.size()); ++i)
        diag_tokens.push_back(tokenize(run.encoder.vocab, corpus[i], cfg.max_seq_len));

    // margin/accuracy anchors: high-gold eval pairs (anchor, positive)
    std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> margin_pairs;
    for (const auto& p : eval_pairs) {
        if (p.gold >= 4.0 && margin_pairs.size() < 32)
            margin_pairs.emplace_back(tokenize(run.encoder.vocab, p.a, cfg.max_seq_len),
                                      tokenize(run.encoder.vocab, p.b, cfg.max_seq_len));
    }

    result.initial_spearman =
        eval_pairs.empty() ? 0.0 : spearman_eval(run.encoder, eval_pairs, cfg.max_seq_len);

    Mat prev_snapshot = trainer_detail::snapshot_embeddings(run.encoder, diag_tokens);
    EncoderState prev_encoder = run.encoder;
    double last_spearman = result.initial_spearman;
    bool underflow_noted = false;

    const std::size_t steps_per_epoch = corpus.size() / cfg.batch_size;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;

    std::vector<std::size_t> order(corpus.size());
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        std::iota(order.begin(), order.end(), 0);
        fisher_yates(order, run.rng);
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            std::vector<std::string> batch;
            batch.reserve(cfg.batch_size);
            for (std::size_t i = 0; i < cfg.batch_size; ++i)
                batch.push_back(corpus[order[s * cfg.batch_size + i]]);

            const StepForward fwd = forward_step(run, batch, cfg);
            if (fwd.hnm_underflow && !underflow_noted) {
                std::cerr << "note: bank below k_top, hard-negative mixing disabled until it fills\n";
                underflow_noted = true;
            }
            MetricReport report = apply_step(run, fwd, cfg);
            result.step_loss.push_back(report.loss);

            const bool last = run.step == total_steps;
            if (run.step % cfg.eval_every == 0 || last) {
                const Mat now = trainer_detail::snapshot_embeddings(run.encoder, diag_tokens);
                report.delta_pairwise = pairwise_distance_delta(prev_snapshot, now);
                report.divergence = embedding_divergence(prev_snapshot, now);
                report.kl = similarity_kl(SimilarityHistogram::from_embeddings(prev_snapshot),
                                          SimilarityHistogram::from_embeddings(now));

                if (!margin_pairs.empty()) {
                    Mat anchors_now(0, 0), pos_now(0, 0), anchors_prev(0, 0), pos_prev(0, 0);
                    for (const auto& [ta, tb] : margin_pairs) {
                        anchors_now.push_row(l2_normalize(encode_nodrop(run.encoder, ta)));
                        pos_now.push_row(l2_normalize(encode_nodrop(run.encoder, tb)));
                        anchors_prev.push_row(l2_normalize(encode_nodrop(prev_encoder, ta)));
                        pos_prev.push_row(l2_normalize(encode_nodrop(prev_encoder, tb)));
                    }
                    const auto mixed = trainer_detail::diagnostic_mixed_negs(
                        anchors_now, run.bank, cfg.mix, cfg.seed, run.step);
                    const bool have_mixed = mixed[0].rows > 0;
                    if (have_mixed) {
                        std::vector<Mat> positives;
                        for (std::size_t i = 0; i < anchors_now.rows; ++i) {
                            Mat p(0, 0);
                            p.push_row(pos_now.row(i));
                            positives.push_back(std::move(p));
                        }
                        report.delta_margin = delta_margin(anchors_now, positives, mixed);
                        // accuracy over expanded (anchor, positive, mixed) triplets,
                        // the mixed embeddings held fixed for both encoders
                        Mat ea(0, 0), ep(0, 0), en(0, 0), pa(0, 0), pp(0, 0);
                        for (std::size_t i = 0; i < anchors_now.rows; ++i)
                            for (std::size_t n = 0; n < mixed[i].rows; ++n) {
                                ea.push_row(anchors_now.row(i));
                                ep.push_row(pos_now.row(i));
                                en.push_row(mixed[i].row(n));
                                pa.push_row(anchors_prev.row(i));
                                pp.push_row(pos_prev.row(i));
                            }
                        report.acc_delta =
                            triplet_accuracy(ea, ep, en) - triplet_accuracy(pa, pp, en);
                    }
                }

                if (!eval_pairs.empty())
                    last_spearman = spearman_eval(run.encoder, eval_pairs, cfg.max_seq_len);
                report.spearman = last_spearman;
                result.trace.push_back(report);
                prev_snapshot = now;
                prev_encoder = run.encoder;
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// RunState serialization (full f64 precision; resuming reproduces the exact
// trajectory, unlike the f32 encoder checkpoint).
// ---------------------------------------------------------------------------

inline std::string serialize_run_state(const RunState& run) {
    using namespace ckpt_detail;
    std::string out = "HNCSERUN1\n";
    std::string enc = serialize_checkpoint(run.encoder);
    put_u64(out, enc.size());
    out += enc;
    // encoder doubles at full precision (the checkpoint stores f32)
    auto put_f64 = [&](double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); };
    for (double x : run.encoder.emb.data) put_f64(x);
    for (double x : run.encoder.proj_w.data) put_f64(x);
    for (double x : run.encoder.proj_b) put_f64(x);
    put_f64(run.encoder.dropout_rate);
    put_u64(out, run.bank.capacity);
    put_u64(out, run.bank.entries.size());
    for (const auto& e : run.bank.entries) {
        put_u64(out, e.source_step);
        put_u64(out, e.v.size());
        for (double x : e.v) put_f64(x);
    }
    put_u64(out, run.step);
    put_f64(run.current_eta);
    std::ostringstream rng_text;
    rng_text << run.rng;
    put_u64(out, rng_text.str().size());
    out += rng_text.str();
    return out;
}

inline RunState deserialize_run_state(const std::string& buf) {
    using namespace ckpt_detail;
    const std::string magic = "HNCSERUN1\n";
    if (buf.size() < magic.size() || buf.compare(0, magic.size(), magic) != 0)
        raise(ErrorKind::BadCheckpoint, "bad run-state magic");
    Reader r{buf, magic.size()};
    RunState run;
    const std::uint64_t enc_len = r.u64();
    run.encoder = deserialize_checkpoint(r.bytes(enc_len));
    auto get_f64 = [&] { return std::bit_cast<double>(r.u64()); };
    for (double& x : run.encoder.emb.data) x = get_f64();
    for (double& x : run.encoder.proj_w.data) x = get_f64();
    for (double& x : run.encoder.proj_b) x = get_f64();
    run.encoder.dropout_rate = get_f64();
    run.bank.capacity = r.u64();
    const std::uint64_t n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        BankEntry e;
        e.source_step = r.u64();
        e.v.resize(r.u64());
        for (double& x : e.v) x = get_f64();
        run.bank.entries.push_back(std::move(e));
    }
    run.step = r.u64();
    run.current_eta = get_f64();
    const std::uint64_t rng_len = r.u64();
    std::istringstream rng_text(r.bytes(rng_len));
    rng_text >> run.rng;
    if (r.pos != buf.size()) raise(ErrorKind::BadCheckpoint, "trailing bytes in run state");
    return run;
}

}  // namespace hncse
