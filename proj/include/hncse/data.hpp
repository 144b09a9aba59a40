#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hncse/metrics.hpp"
#include "hncse/text.hpp"
#include "hncse/trainer.hpp"

namespace hncse {

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) raise(ErrorKind::IoError, "cannot open: " + path.string());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

namespace data_detail {

inline std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) {
            if (start < text.size()) lines.push_back(text.substr(start));
            break;
        }
        std::string line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
        start = end + 1;
    }
    return lines;
}

inline bool parse_score(const std::string& s, double& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    const auto res = std::from_chars(first, last, out);
    return res.ec == std::errc() && res.ptr == last;
}

}  // namespace data_detail

/// One sentence per line; blank and token-free lines are dropped, CRLF
/// tolerated.
inline std::vector<std::string> load_corpus(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    if (!is_valid_utf8(text)) raise(ErrorKind::Utf8Error, "corpus is not valid UTF-8: " + path.string());
    std::vector<std::string> sentences;
    for (auto& line : data_detail::split_lines(text)) {
        if (line.empty()) continue;
        if (split_tokens(line).empty()) continue;
        sentences.push_back(std::move(line));
    }
    if (sentences.empty()) raise(ErrorKind::EmptyCorpus, "no usable sentences in " + path.string());
    return sentences;
}

/// TSV sentence_a <TAB> sentence_b <TAB> gold score in [0,5]. A first row
/// whose third field is non-numeric is treated as a header.
inline std::vector<EvalPair> load_eval_pairs(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    if (!is_valid_utf8(text)) raise(ErrorKind::Utf8Error, "eval file is not valid UTF-8: " + path.string());
    std::vector<EvalPair> pairs;
    const auto lines = data_detail::split_lines(text);
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const std::string& line = lines[ln];
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            if (tab == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
        if (fields.size() != 3)
            raise(ErrorKind::MalformedRow,
                  "line " + std::to_string(ln + 1) + ": expected 3 tab-separated fields");
        double score = 0.0;
        if (!data_detail::parse_score(fields[2], score)) {
            if (ln == 0) continue;  // header row
            raise(ErrorKind::MalformedRow,
                  "line " + std::to_string(ln + 1) + ": score is not a number");
        }
        if (!(score >= 0.0 && score <= 5.0) || !std::isfinite(score))
            raise(ErrorKind::ScoreOutOfRange,
                  "line " + std::to_string(ln + 1) + ": score outside [0,5]");
        pairs.push_back({std::move(fields[0]), std::move(fields[1]), score});
    }
    return pairs;
}

/// TSV anchor <TAB> positive <TAB> negative, no header.
inline std::vector<EvalTriplet> load_triplets(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    if (!is_valid_utf8(text)) raise(ErrorKind::Utf8Error, "triplets file is not valid UTF-8: " + path.string());
    std::vector<EvalTriplet> triplets;
    const auto lines = data_detail::split_lines(text);
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const std::string& line = lines[ln];
        if (line.empty()) continue;
        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
            raise(ErrorKind::MalformedRow,
                  "line " + std::to_string(ln + 1) + ": expected 3 tab-separated fields");
        triplets.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)});
    }
    return triplets;
}

// ---------------------------------------------------------------------------
// Run configuration JSON. Field names mirror the config structs in
// snake_case; unknown keys are rejected before any work starts.
// ---------------------------------------------------------------------------

namespace config_detail {

inline void check_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                       const std::string& scope) {
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) {
                ok = true;
                break;
            }
        if (!ok) raise(ErrorKind::BadConfig, "unknown config key '" + scope + key + "'");
    }
}

template <typename T>
void read_field(const nlohmann::json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace config_detail

inline TrainMode parse_mode(const std::string& s) {
    if (s == "simcse") return TrainMode::Simcse;
    if (s == "hncse_pm") return TrainMode::HncsePm;
    if (s == "hncse_hnm") return TrainMode::HncseHnm;
    if (s == "pm_single") return TrainMode::PmSingle;
    if (s == "hnm_single") return TrainMode::HnmSingle;
    raise(ErrorKind::BadConfig, "unknown mode '" + s + "'");
}

inline std::string mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::Simcse: return "simcse";
        case TrainMode::HncsePm: return "hncse_pm";
        case TrainMode::HncseHnm: return "hncse_hnm";
        case TrainMode::PmSingle: return "pm_single";
        case TrainMode::HnmSingle: return "hnm_single";
    }
    return "simcse";
}

inline AlphaPolicy parse_alpha_policy(const std::string& s) {
    if (s == "adaptive") return AlphaPolicy::Adaptive;
    if (s == "fixed") return AlphaPolicy::Fixed;
    if (s == "uniform_random") return AlphaPolicy::UniformRandom;
    raise(ErrorKind::BadConfig, "unknown alpha_policy '" + s + "'");
}

inline std::string alpha_policy_name(AlphaPolicy p) {
    switch (p) {
        case AlphaPolicy::Adaptive: return "adaptive";
        case AlphaPolicy::Fixed: return "fixed";
        case AlphaPolicy::UniformRandom: return "uniform_random";
    }
    return "adaptive";
}

inline TrainConfig parse_config_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::BadConfig, std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) raise(ErrorKind::BadConfig, "config root must be a JSON object");

    TrainConfig cfg;
    try {
        using namespace config_detail;
        check_keys(j,
                   {"batch_size", "max_seq_len", "epochs", "lr", "lr_decay", "seed",
                    "bank_capacity", "mode", "eval_every", "d_emb", "d_out", "dropout_rate",
                    "mix", "loss"},
                   "");
        read_field(j, "batch_size", cfg.batch_size);
        read_field(j, "max_seq_len", cfg.max_seq_len);
        read_field(j, "epochs", cfg.epochs);
        read_field(j, "lr", cfg.lr);
        read_field(j, "lr_decay", cfg.lr_decay);
        read_field(j, "seed", cfg.seed);
        read_field(j, "bank_capacity", cfg.bank_capacity);
        read_field(j, "eval_every", cfg.eval_every);
        read_field(j, "d_emb", cfg.d_emb);
        read_field(j, "d_out", cfg.d_out);
        read_field(j, "dropout_rate", cfg.dropout_rate);
        if (j.contains("mode")) cfg.mode = parse_mode(j.at("mode").get<std::string>());
        if (j.contains("mix")) {
            const auto& m = j.at("mix");
            if (!m.is_object()) raise(ErrorKind::BadConfig, "'mix' must be an object");
            check_keys(m,
                       {"theta", "k_top", "m_synth", "w1", "w2", "pm_threshold", "alpha_policy",
                        "alpha_fixed", "alpha_lo", "alpha_hi", "beta", "literal_case_c",
                        "renormalize"},
                       "mix.");
            read_field(m, "theta", cfg.mix.theta);
            read_field(m, "k_top", cfg.mix.k_top);
            read_field(m, "m_synth", cfg.mix.m_synth);
            read_field(m, "w1", cfg.mix.w1);
            read_field(m, "w2", cfg.mix.w2);
            read_field(m, "pm_threshold", cfg.mix.pm_threshold);
            read_field(m, "alpha_fixed", cfg.mix.alpha_fixed);
            read_field(m, "alpha_lo", cfg.mix.alpha_lo);
            read_field(m, "alpha_hi", cfg.mix.alpha_hi);
            read_field(m, "beta", cfg.mix.beta);
            read_field(m, "literal_case_c", cfg.mix.literal_case_c);
            read_field(m, "renormalize", cfg.mix.renormalize);
            if (m.contains("alpha_policy"))
                cfg.mix.alpha_policy = parse_alpha_policy(m.at("alpha_policy").get<std::string>());
        }
        if (j.contains("loss")) {
            const auto& l = j.at("loss");
            if (!l.is_object()) raise(ErrorKind::BadConfig, "'loss' must be an object");
            check_keys(l, {"tau", "lambda_reg", "exclude_self"}, "loss.");
            read_field(l, "tau", cfg.loss.tau);
            read_field(l, "lambda_reg", cfg.loss.lambda_reg);
            read_field(l, "exclude_self", cfg.loss.exclude_self);
        }
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::BadConfig, std::string("config field has wrong type: ") + e.what());
    }
    validate(cfg);
    return cfg;
}

inline nlohmann::json config_to_json(const TrainConfig& cfg) {
    return nlohmann::json{
        {"batch_size", cfg.batch_size},
        {"max_seq_len", cfg.max_seq_len},
        {"epochs", cfg.epochs},
        {"lr", cfg.lr},
        {"lr_decay", cfg.lr_decay},
        {"seed", cfg.seed},
        {"bank_capacity", cfg.bank_capacity},
        {"mode", mode_name(cfg.mode)},
        {"eval_every", cfg.eval_every},
        {"d_emb", cfg.d_emb},
        {"d_out", cfg.d_out},
        {"dropout_rate", cfg.dropout_rate},
        {"mix",
         {{"theta", cfg.mix.theta},
          {"k_top", cfg.mix.k_top},
          {"m_synth", cfg.mix.m_synth},
          {"w1", cfg.mix.w1},
          {"w2", cfg.mix.w2},
          {"pm_threshold", cfg.mix.pm_threshold},
          {"alpha_policy", alpha_policy_name(cfg.mix.alpha_policy)},
          {"alpha_fixed", cfg.mix.alpha_fixed},
          {"alpha_lo", cfg.mix.alpha_lo},
          {"alpha_hi", cfg.mix.alpha_hi},
          {"beta", cfg.mix.beta},
          {"literal_case_c", cfg.mix.literal_case_c},
          {"renormalize", cfg.mix.renormalize}}},
        {"loss",
         {{"tau", cfg.loss.tau},
          {"lambda_reg", cfg.loss.lambda_reg},
          {"exclude_self", cfg.loss.exclude_self}}},
    };
}

}  // namespace hncse
