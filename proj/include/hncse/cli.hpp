#pragma once

#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hncse/data.hpp"
#include "hncse/trainer.hpp"

namespace hncse::cli {

constexpr std::size_t kDefaultMaxSeqLen = 32;

namespace detail {

inline void ensure_finite(double v, const char* what) {
    if (!std::isfinite(v)) raise(ErrorKind::NonFiniteEvaluation, std::string(what) + " is not finite");
}

inline int run_train(const std::string& config_path, const std::string& corpus_path,
                     const std::string& eval_path, const std::string& out_dir,
                     std::ostream& out) {
    const TrainConfig cfg = parse_config_json(read_text_file(config_path));
    const auto corpus = load_corpus(corpus_path);
    const auto pairs = load_eval_pairs(eval_path);

    const TrainResult result = train(corpus, pairs, cfg);
    for (const auto& r : result.trace)
        for (double v : {r.loss, r.delta_pairwise, r.divergence, r.kl, r.delta_margin,
                         r.acc_delta, r.spearman, r.lr})
            ensure_finite(v, "trace value");

    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    save_checkpoint(result.run.encoder, dir / "checkpoint.bin");

    std::string csv = metric_csv_header() + "\n";
    for (const auto& r : result.trace) csv += metric_csv_row(r) + "\n";
    write_file_atomic(dir / "trace.csv", csv);

    nlohmann::json manifest{{"config", config_to_json(cfg)},
                            {"seed", cfg.seed},
                            {"initial_spearman", result.initial_spearman}};
    if (!result.trace.empty()) {
        const auto& last = result.trace.back();
        manifest["final"] = {{"step", last.step},
                             {"loss", last.loss},
                             {"delta_pairwise", last.delta_pairwise},
                             {"divergence", last.divergence},
                             {"kl", last.kl},
                             {"delta_margin", last.delta_margin},
                             {"acc_delta", last.acc_delta},
                             {"spearman", last.spearman},
                             {"lr", last.lr}};
    }
    write_file_atomic(dir / "manifest.json", manifest.dump() + "\n");
    out << "wrote " << (dir / "checkpoint.bin").string() << ", trace.csv, manifest.json\n";
    return 0;
}

inline int run_eval(const std::string& ckpt_path, const std::string& eval_path,
                    std::ostream& out) {
    const EncoderState enc = load_checkpoint(ckpt_path);
    const auto pairs = load_eval_pairs(eval_path);
    if (pairs.empty()) raise(ErrorKind::EmptyCorpus, "eval file has no pairs");
    const double rho = spearman_eval(enc, pairs, kDefaultMaxSeqLen);
    ensure_finite(rho, "spearman");
    out << format_double(rho) << "\n";
    return 0;
}

inline int run_analyze(const std::string& before_path, const std::string& after_path,
                       const std::string& corpus_path, const std::string& triplets_path,
                       std::ostream& out) {
    const EncoderState before = load_checkpoint(before_path);
    const EncoderState after = load_checkpoint(after_path);
    const auto corpus = load_corpus(corpus_path);

    Mat emb_before(0, 0), emb_after(0, 0);
    for (const auto& s : corpus) {
        emb_before.push_row(l2_normalize(encode_sentence(before, s, kDefaultMaxSeqLen)));
        emb_after.push_row(l2_normalize(encode_sentence(after, s, kDefaultMaxSeqLen)));
    }
    const double delta = pairwise_distance_delta(emb_before, emb_after);
    const double div = embedding_divergence(emb_before, emb_after);
    const double kl = similarity_kl(SimilarityHistogram::from_embeddings(emb_before),
                                    SimilarityHistogram::from_embeddings(emb_after));
    ensure_finite(delta, "delta_pairwise");
    ensure_finite(div, "divergence");
    ensure_finite(kl, "kl");

    std::string header = "delta_pairwise,divergence,kl";
    std::string row = format_double(delta) + "," + format_double(div) + "," + format_double(kl);

    if (!triplets_path.empty()) {
        const auto triplets = load_triplets(triplets_path);
        if (triplets.empty()) raise(ErrorKind::EmptySet, "triplets file has no rows");

        Mat a_after(0, 0), p_after(0, 0), n_after(0, 0), a_before(0, 0), p_before(0, 0);
        for (const auto& t : triplets) {
            a_after.push_row(l2_normalize(encode_sentence(after, t.anchor, kDefaultMaxSeqLen)));
            p_after.push_row(l2_normalize(encode_sentence(after, t.positive, kDefaultMaxSeqLen)));
            n_after.push_row(l2_normalize(encode_sentence(after, t.negative, kDefaultMaxSeqLen)));
            a_before.push_row(l2_normalize(encode_sentence(before, t.anchor, kDefaultMaxSeqLen)));
            p_before.push_row(l2_normalize(encode_sentence(before, t.positive, kDefaultMaxSeqLen)));
        }

        // Negatives are embedded then mixed: each anchor's hn_mix set is
        // synthesized from the pool of all triplet negatives under the
        // after-encoder, and held fixed for both accuracy evaluations.
        MixConfig mix;
        auto rng = derive_rng(after.seed, 0x616E6C79ULL, 0);  // "anly"
        std::vector<Mat> mixed(triplets.size(), Mat(0, 0));
        for (std::size_t i = 0; i < triplets.size(); ++i) {
            if (n_after.rows >= 2) {
                const std::size_t k = std::min(mix.k_top, n_after.rows);
                const Mat g = topk_hard(a_after.row_vec(i), n_after, k);
                mixed[i] = hnm_mixup(g, mix.m_synth, mix, rng);
            } else {
                mixed[i].push_row(n_after.row(i));
            }
        }

        std::vector<Mat> positives;
        for (std::size_t i = 0; i < triplets.size(); ++i) {
            Mat p(0, 0);
            p.push_row(p_after.row(i));
            positives.push_back(std::move(p));
        }
        const double margin = delta_margin(a_after, positives, mixed);

        Mat ea(0, 0), ep(0, 0), en(0, 0), ba(0, 0), bp(0, 0);
        for (std::size_t i = 0; i < triplets.size(); ++i)
            for (std::size_t n = 0; n < mixed[i].rows; ++n) {
                ea.push_row(a_after.row(i));
                ep.push_row(p_after.row(i));
                en.push_row(mixed[i].row(n));
                ba.push_row(a_before.row(i));
                bp.push_row(p_before.row(i));
            }
        const double acc_delta = triplet_accuracy(ea, ep, en) - triplet_accuracy(ba, bp, en);
        ensure_finite(margin, "delta_margin");
        ensure_finite(acc_delta, "acc_delta");
        header += ",delta_margin,acc_delta";
        row += "," + format_double(margin) + "," + format_double(acc_delta);
    }

    out << header << "\n" << row << "\n";
    return 0;
}

}  // namespace detail

/// Entry point shared by the binary and the tests. Exit codes: 0 success,
/// 1 usage error, 2 data error, 3 numeric failure.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"HNCSE: contrastive sentence-embedding training laboratory"};
    app.require_subcommand(1);

    std::string config_path, corpus_path, eval_path, out_dir;
    auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoint + trace");
    train_cmd->add_option("--config", config_path, "run configuration JSON")->required();
    train_cmd->add_option("--corpus", corpus_path, "training corpus, one sentence per line")->required();
    train_cmd->add_option("--eval", eval_path, "evaluation pairs TSV")->required();
    train_cmd->add_option("--out", out_dir, "output directory")->required();

    std::string ckpt_path, eval2_path;
    auto* eval_cmd = app.add_subcommand("eval", "print Spearman correlation of a checkpoint");
    eval_cmd->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    eval_cmd->add_option("--eval", eval2_path, "evaluation pairs TSV")->required();

    std::string before_path, after_path, a_corpus_path, triplets_path;
    auto* analyze_cmd = app.add_subcommand("analyze", "compare two checkpoints");
    analyze_cmd->add_option("--before", before_path, "baseline checkpoint")->required();
    analyze_cmd->add_option("--after", after_path, "updated checkpoint")->required();
    analyze_cmd->add_option("--corpus", a_corpus_path, "sentences to embed")->required();
    analyze_cmd->add_option("--triplets", triplets_path, "anchor/positive/negative TSV");

    std::vector<const char*> argv;
    argv.push_back("hncse");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n" << app.help();
        return 1;
    }

    try {
        if (train_cmd->parsed())
            return detail::run_train(config_path, corpus_path, eval_path, out_dir, out);
        if (eval_cmd->parsed()) return detail::run_eval(ckpt_path, eval2_path, out);
        return detail::run_analyze(before_path, after_path, a_corpus_path, triplets_path, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return is_numeric_error(e.kind()) ? 3 : 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace hncse::cli
