#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hncse/errors.hpp"
#include "hncse/numerics.hpp"
#include "hncse/rng.hpp"
#include "hncse/text.hpp"

namespace hncse {

struct Vocab {
    static constexpr std::size_t kUnkIndex = 0;

    std::vector<std::string> tokens{"<unk>"};
    std::unordered_map<std::string, std::size_t> index{{"<unk>", 0}};

    std::size_t size() const { return tokens.size(); }

    std::size_t add(const std::string& token) {
        auto it = index.find(token);
        if (it != index.end()) return it->second;
        const std::size_t id = tokens.size();
        tokens.push_back(token);
        index.emplace(token, id);
        return id;
    }

    std::size_t lookup(const std::string& token) const {
        auto it = index.find(token);
        return it == index.end() ? kUnkIndex : it->second;
    }
};

/// Vocabulary in first-appearance order over the corpus.
inline Vocab build_vocab(const std::vector<std::string>& corpus) {
    Vocab v;
    for (const auto& sentence : corpus)
        for (const auto& tok : split_tokens(sentence)) v.add(tok);
    return v;
}

inline std::vector<std::size_t> tokenize(const Vocab& vocab, std::string_view text,
                                         std::size_t max_seq_len) {
    std::vector<std::size_t> ids;
    for (const auto& tok : split_tokens(text)) {
        if (ids.size() >= max_seq_len) break;
        ids.push_back(vocab.lookup(tok));
    }
    if (ids.empty()) raise(ErrorKind::EmptySentence, "tokenize: no tokens survive");
    return ids;
}

struct EncoderState {
    Vocab vocab;
    Mat emb;      // |V| x d_emb
    Mat proj_w;   // d_emb x d_out
    Vec proj_b;   // d_out
    double dropout_rate = 0.0;
    std::uint64_t seed = 0;

    std::size_t d_emb() const { return emb.cols; }
    std::size_t d_out() const { return proj_b.size(); }
};

/// Inverted-dropout keep flags, one per (token, embedding coordinate).
struct DropoutMask {
    std::size_t n_tokens = 0;
    std::size_t dim = 0;
    std::vector<std::uint8_t> keep;  // row-major n_tokens x dim
    double scale = 1.0;

    bool kept(std::size_t t, std::size_t j) const { return keep[t * dim + j] != 0; }
};

// Portable uniform in [0,1); avoids distribution objects so mask bytes are
// identical across standard libraries.
inline double canonical_u01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * canonical_u01(rng);
}

inline DropoutMask make_dropout_mask(std::size_t n_tokens, std::size_t dim, double rate,
                                     std::uint64_t seed, std::uint64_t step, std::uint32_t view) {
    DropoutMask m;
    m.n_tokens = n_tokens;
    m.dim = dim;
    m.keep.assign(n_tokens * dim, 1);
    if (rate <= 0.0) return m;
    m.scale = 1.0 / (1.0 - rate);
    auto rng = derive_rng(seed, step, 0x64726F70ULL + view);  // "drop" + view
    for (auto& k : m.keep) k = canonical_u01(rng) >= rate ? 1 : 0;
    return m;
}

inline EncoderState init_encoder(Vocab vocab, std::size_t d_emb, std::size_t d_out,
                                 double dropout_rate, std::uint64_t seed, std::mt19937_64& rng) {
    EncoderState s;
    s.vocab = std::move(vocab);
    s.dropout_rate = dropout_rate;
    s.seed = seed;
    s.emb = Mat(s.vocab.size(), d_emb);
    for (double& x : s.emb.data) x = uniform_in(rng, -0.1, 0.1);
    s.proj_w = Mat(d_emb, d_out);
    const double limit = std::sqrt(6.0 / static_cast<double>(d_emb + d_out));
    for (double& x : s.proj_w.data) x = uniform_in(rng, -limit, limit);
    s.proj_b.assign(d_out, 0.0);
    return s;
}

/// Mean of masked-and-scaled token embeddings, then tanh(W^T pooled + b).
inline Vec encode(const EncoderState& state, const std::vector<std::size_t>& tokens,
                  const DropoutMask& mask) {
    if (tokens.empty()) raise(ErrorKind::EmptySentence, "encode: empty token sequence");
    const std::size_t de = state.d_emb();
    const std::size_t dn = state.d_out();
    if (mask.n_tokens != tokens.size() || mask.dim != de)
        raise(ErrorKind::DimMismatch, "encode: mask shape mismatch");

    Vec pooled(de, 0.0);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const auto row = state.emb.row(tokens[t]);
        for (std::size_t j = 0; j < de; ++j)
            if (mask.kept(t, j)) pooled[j] += row[j] * mask.scale;
    }
    const double inv_len = 1.0 / static_cast<double>(tokens.size());
    for (double& x : pooled) x *= inv_len;

    Vec out(dn);
    for (std::size_t o = 0; o < dn; ++o) {
        double z = state.proj_b[o];
        for (std::size_t j = 0; j < de; ++j) z += pooled[j] * state.proj_w.row(j)[o];
        out[o] = std::tanh(z);
    }
    return out;
}

/// The two SimCSE views: independent masks derived from (seed, step, view id).
inline std::pair<Vec, Vec> encode_pair(const EncoderState& state,
                                       const std::vector<std::size_t>& tokens,
                                       std::uint64_t step) {
    const auto m0 = make_dropout_mask(tokens.size(), state.d_emb(), state.dropout_rate,
                                      state.seed, step, 0);
    const auto m1 = make_dropout_mask(tokens.size(), state.d_emb(), state.dropout_rate,
                                      state.seed, step, 1);
    return {encode(state, tokens, m0), encode(state, tokens, m1)};
}

struct ParamGrad {
    Mat emb;
    Mat proj_w;
    Vec proj_b;

    static ParamGrad zeros_like(const EncoderState& s) {
        ParamGrad g;
        g.emb = Mat(s.emb.rows, s.emb.cols);
        g.proj_w = Mat(s.proj_w.rows, s.proj_w.cols);
        g.proj_b.assign(s.proj_b.size(), 0.0);
        return g;
    }

    void accumulate(const ParamGrad& other, double w = 1.0) {
        for (std::size_t i = 0; i < emb.data.size(); ++i) emb.data[i] += w * other.emb.data[i];
        for (std::size_t i = 0; i < proj_w.data.size(); ++i)
            proj_w.data[i] += w * other.proj_w.data[i];
        for (std::size_t i = 0; i < proj_b.size(); ++i) proj_b[i] += w * other.proj_b[i];
    }
};

inline double param_squared_l2(const EncoderState& s) {
    double r = 0.0;
    for (double x : s.emb.data) r += x * x;
    for (double x : s.proj_w.data) r += x * x;
    for (double x : s.proj_b) r += x * x;
    return r;
}

/// Exact gradient of encode() w.r.t. touched embedding rows, proj_w and proj_b,
/// contracted with `upstream` (dL/d output).
inline void backward(const EncoderState& state, const std::vector<std::size_t>& tokens,
                     const DropoutMask& mask, const Vec& upstream, ParamGrad& grad) {
    const std::size_t de = state.d_emb();
    const std::size_t dn = state.d_out();
    if (upstream.size() != dn) raise(ErrorKind::DimMismatch, "backward: upstream dim mismatch");
    if (tokens.empty()) raise(ErrorKind::EmptySentence, "backward: empty token sequence");
    if (mask.n_tokens != tokens.size() || mask.dim != de)
        raise(ErrorKind::DimMismatch, "backward: mask shape mismatch");

    // forward recomputation
    Vec pooled(de, 0.0);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const auto row = state.emb.row(tokens[t]);
        for (std::size_t j = 0; j < de; ++j)
            if (mask.kept(t, j)) pooled[j] += row[j] * mask.scale;
    }
    const double inv_len = 1.0 / static_cast<double>(tokens.size());
    for (double& x : pooled) x *= inv_len;

    Vec dz(dn);
    for (std::size_t o = 0; o < dn; ++o) {
        double z = state.proj_b[o];
        for (std::size_t j = 0; j < de; ++j) z += pooled[j] * state.proj_w.row(j)[o];
        const double th = std::tanh(z);
        dz[o] = upstream[o] * (1.0 - th * th);
    }

    for (std::size_t o = 0; o < dn; ++o) grad.proj_b[o] += dz[o];
    Vec d_pooled(de, 0.0);
    for (std::size_t j = 0; j < de; ++j) {
        const auto wrow = state.proj_w.row(j);
        auto grow = grad.proj_w.row(j);
        double acc = 0.0;
        for (std::size_t o = 0; o < dn; ++o) {
            grow[o] += pooled[j] * dz[o];
            acc += wrow[o] * dz[o];
        }
        d_pooled[j] = acc;
    }
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        auto erow = grad.emb.row(tokens[t]);
        for (std::size_t j = 0; j < de; ++j)
            if (mask.kept(t, j)) erow[j] += d_pooled[j] * mask.scale * inv_len;
    }
}

inline ParamGrad backward(const EncoderState& state, const std::vector<std::size_t>& tokens,
                          const DropoutMask& mask, const Vec& upstream) {
    ParamGrad g = ParamGrad::zeros_like(state);
    backward(state, tokens, mask, upstream, g);
    return g;
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "HNCSE1\n", u32 LE (|V|, d_emb, d_out), vocabulary
// as u32-length-prefixed UTF-8 tokens, then emb / proj_w / proj_b as f32 LE
// row-major, then u64 LE seed.
// ---------------------------------------------------------------------------

namespace ckpt_detail {

constexpr char kMagic[] = "HNCSE1\n";
constexpr std::size_t kMagicLen = 7;

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, double v) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) raise(ErrorKind::BadCheckpoint, "checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace ckpt_detail

inline std::string serialize_checkpoint(const EncoderState& s) {
    using namespace ckpt_detail;
    std::string out(kMagic, kMagicLen);
    put_u32(out, static_cast<std::uint32_t>(s.vocab.size()));
    put_u32(out, static_cast<std::uint32_t>(s.d_emb()));
    put_u32(out, static_cast<std::uint32_t>(s.d_out()));
    for (const auto& tok : s.vocab.tokens) {
        put_u32(out, static_cast<std::uint32_t>(tok.size()));
        out.append(tok);
    }
    for (double x : s.emb.data) put_f32(out, x);
    for (double x : s.proj_w.data) put_f32(out, x);
    for (double x : s.proj_b) put_f32(out, x);
    put_u64(out, s.seed);
    return out;
}

inline EncoderState deserialize_checkpoint(const std::string& buf) {
    using namespace ckpt_detail;
    if (buf.size() < kMagicLen || buf.compare(0, kMagicLen, kMagic, kMagicLen) != 0)
        raise(ErrorKind::BadCheckpoint, "bad checkpoint magic");
    Reader r{buf, kMagicLen};
    const std::uint32_t vs = r.u32();
    const std::uint32_t de = r.u32();
    const std::uint32_t dn = r.u32();
    if (vs < 1 || de < 1 || dn < 1) raise(ErrorKind::BadCheckpoint, "bad checkpoint dimensions");
    EncoderState s;
    s.vocab.tokens.clear();
    s.vocab.index.clear();
    for (std::uint32_t i = 0; i < vs; ++i) {
        const std::uint32_t len = r.u32();
        std::string tok = r.bytes(len);
        if (!is_valid_utf8(tok)) raise(ErrorKind::BadCheckpoint, "checkpoint token not UTF-8");
        s.vocab.tokens.push_back(tok);
        s.vocab.index.emplace(std::move(tok), i);
    }
    s.emb = Mat(vs, de);
    for (double& x : s.emb.data) x = r.f32();
    s.proj_w = Mat(de, dn);
    for (double& x : s.proj_w.data) x = r.f32();
    s.proj_b.resize(dn);
    for (double& x : s.proj_b) x = r.f32();
    s.seed = r.u64();
    if (r.pos != buf.size()) raise(ErrorKind::BadCheckpoint, "trailing bytes in checkpoint");
    s.dropout_rate = 0.0;
    return s;
}

/// Atomic file write: temp file in the same directory, then rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) raise(ErrorKind::IoError, "cannot open for write: " + tmp.string());
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!f) raise(ErrorKind::IoError, "write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) raise(ErrorKind::IoError, "rename failed: " + path.string());
}

inline void save_checkpoint(const EncoderState& s, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_checkpoint(s));
}

inline EncoderState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) raise(ErrorKind::IoError, "cannot open checkpoint: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(buf);
}

}  // namespace hncse
