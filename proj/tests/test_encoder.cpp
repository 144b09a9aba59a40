#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hncse/encoder.hpp"
#include "support/test_util.hpp"

using namespace hncse;

namespace {

Vocab small_vocab() {
    Vocab v;
    for (const char* t : {"two", "dogs", "are", "running", "cats"}) v.add(t);
    return v;
}

// d_emb == d_out, identity projection, zero bias: encode == tanh(mean emb)
EncoderState identity_state(std::size_t d) {
    EncoderState s;
    s.vocab = small_vocab();
    s.emb = Mat(s.vocab.size(), d);
    std::mt19937_64 rng(123);
    for (double& x : s.emb.data) x = uniform_in(rng, -0.5, 0.5);
    s.proj_w = Mat(d, d);
    for (std::size_t i = 0; i < d; ++i) s.proj_w.row(i)[i] = 1.0;
    s.proj_b.assign(d, 0.0);
    s.dropout_rate = 0.0;
    s.seed = 42;
    return s;
}

}  // namespace

TEST(Tokenize, DirectLookup) {
    const Vocab v = small_vocab();
    const auto ids = tokenize(v, "Two dogs are running", 32);
    ASSERT_EQ(ids.size(), 4u);
    EXPECT_EQ(ids[0], v.lookup("two"));
    EXPECT_EQ(ids[1], v.lookup("dogs"));
    EXPECT_EQ(ids[2], v.lookup("are"));
    EXPECT_EQ(ids[3], v.lookup("running"));
}

TEST(Tokenize, PunctuationOnlyIsEmpty) {
    const Vocab v = small_vocab();
    try {
        tokenize(v, "???", 32);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::EmptySentence);
    }
}

TEST(Tokenize, CaseFoldingAndUnk) {
    const Vocab v = small_vocab();
    const auto ids = tokenize(v, "Dogs dogs", 32);
    ASSERT_EQ(ids.size(), 2u);
    EXPECT_EQ(ids[0], ids[1]);
    EXPECT_EQ(ids[0], v.lookup("dogs"));
    const auto unk = tokenize(v, "zebra", 32);
    EXPECT_EQ(unk[0], Vocab::kUnkIndex);
}

TEST(Tokenize, StripsPunctuationAndTruncates) {
    const Vocab v = small_vocab();
    const auto ids = tokenize(v, "\"Dogs,\" running... two two two", 2);
    ASSERT_EQ(ids.size(), 2u);
    EXPECT_EQ(ids[0], v.lookup("dogs"));
    EXPECT_EQ(ids[1], v.lookup("running"));
}

TEST(Encode, SingleTokenIdentityNet) {
    const EncoderState s = identity_state(3);
    const std::vector<std::size_t> toks{1};
    const auto mask = make_dropout_mask(1, 3, 0.0, 0, 0, 0);
    const Vec out = encode(s, toks, mask);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out[j], std::tanh(s.emb.row(1)[j]), 1e-15);
}

TEST(Encode, TwoTokenMeanPooling) {
    const EncoderState s = identity_state(3);
    const std::vector<std::size_t> toks{1, 2};
    const auto mask = make_dropout_mask(2, 3, 0.0, 0, 0, 0);
    const Vec out = encode(s, toks, mask);
    // hand-computed pooling oracle
    for (std::size_t j = 0; j < 3; ++j) {
        const double pooled = (s.emb.row(1)[j] + s.emb.row(2)[j]) / 2.0;
        EXPECT_NEAR(out[j], std::tanh(pooled), 1e-15);
    }
}

TEST(EncodePair, NoDropoutViewsCoincide) {
    EncoderState s = identity_state(4);
    s.dropout_rate = 0.0;
    const auto [a, b] = encode_pair(s, {1, 2, 3}, 5);
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_DOUBLE_EQ(a[j], b[j]);
}

TEST(EncodePair, DeterministicAcrossCalls) {
    EncoderState s = identity_state(4);
    s.dropout_rate = 0.1;
    const auto [a1, b1] = encode_pair(s, {1, 2, 3, 4}, 9);
    const auto [a2, b2] = encode_pair(s, {1, 2, 3, 4}, 9);
    EXPECT_EQ(a1, a2);
    EXPECT_EQ(b1, b2);
}

TEST(EncodePair, DropoutViewsDiffer) {
    // pinned: with seed 42, step 0, 16 tokens x 4 dims = 64 >= 50 coordinates
    EncoderState s = identity_state(4);
    s.dropout_rate = 0.1;
    const std::vector<std::size_t> toks(16, 2);
    const auto [a, b] = encode_pair(s, toks, 0);
    EXPECT_NE(a, b);
}

TEST(DropoutMask, ReproducibleAndScaled) {
    const auto m1 = make_dropout_mask(4, 8, 0.25, 7, 3, 1);
    const auto m2 = make_dropout_mask(4, 8, 0.25, 7, 3, 1);
    EXPECT_EQ(m1.keep, m2.keep);
    EXPECT_DOUBLE_EQ(m1.scale, 1.0 / 0.75);
    const auto other_view = make_dropout_mask(4, 8, 0.25, 7, 3, 0);
    EXPECT_NE(m1.keep, other_view.keep);
}

TEST(DropoutMask, ExpectationMatchesUnmasked) {
    // E[keep * scale * e] = e; Monte Carlo over 10k masks at rate 0.1
    const double rate = 0.1;
    const std::size_t dim = 8;
    Vec sums(dim, 0.0);
    const Vec e{0.5, -0.25, 1.0, 0.75, -1.5, 0.3, 2.0, -0.8};
    const int samples = 10000;
    for (int s = 0; s < samples; ++s) {
        const auto m = make_dropout_mask(1, dim, rate, 99, static_cast<std::uint64_t>(s), 0);
        for (std::size_t j = 0; j < dim; ++j)
            if (m.kept(0, j)) sums[j] += e[j] * m.scale;
    }
    for (std::size_t j = 0; j < dim; ++j)
        EXPECT_NEAR(sums[j] / samples, e[j], std::abs(e[j]) * 0.02);
}

TEST(Backward, ZeroUpstreamGivesZeroGrad) {
    const EncoderState s = identity_state(3);
    const std::vector<std::size_t> toks{0, 2};
    const auto mask = make_dropout_mask(2, 3, 0.0, 0, 0, 0);
    const ParamGrad g = backward(s, toks, mask, Vec(3, 0.0));
    for (double x : g.emb.data) EXPECT_DOUBLE_EQ(x, 0.0);
    for (double x : g.proj_w.data) EXPECT_DOUBLE_EQ(x, 0.0);
    for (double x : g.proj_b) EXPECT_DOUBLE_EQ(x, 0.0);
}

TEST(Backward, UntouchedRowsStayZero) {
    const EncoderState s = identity_state(3);
    const std::vector<std::size_t> toks{1, 1};
    const auto mask = make_dropout_mask(2, 3, 0.0, 0, 0, 0);
    const ParamGrad g = backward(s, toks, mask, Vec{1.0, -2.0, 0.5});
    for (std::size_t r = 0; r < s.emb.rows; ++r) {
        const bool touched = r == 1;
        double rowsum = 0.0;
        for (double x : g.emb.row(r)) rowsum += std::abs(x);
        if (touched)
            EXPECT_GT(rowsum, 0.0);
        else
            EXPECT_DOUBLE_EQ(rowsum, 0.0);
    }
}

TEST(Backward, MatchesFiniteDifferences) {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        std::mt19937_64 rng(seed);
        Vocab vocab = small_vocab();
        EncoderState s = init_encoder(vocab, 4, 3, 0.2, seed, rng);
        const std::vector<std::size_t> toks{1, 3, 3};
        const auto mask = make_dropout_mask(3, 4, 0.2, seed, 0, 0);
        const Vec upstream = testutil::random_vec(rng, 3);

        const ParamGrad analytic = backward(s, toks, mask, upstream);

        auto scalar = [&](EncoderState& state) {
            return dot(upstream, encode(state, toks, mask));
        };
        const double h = 1e-6;
        Vec fd_flat, an_flat;
        auto probe = [&](double* param, double analytic_g) {
            const double orig = *param;
            *param = orig + h;
            const double fp = scalar(s);
            *param = orig - h;
            const double fm = scalar(s);
            *param = orig;
            fd_flat.push_back((fp - fm) / (2.0 * h));
            an_flat.push_back(analytic_g);
        };
        EncoderState& m = s;
        for (std::size_t i = 0; i < m.emb.data.size(); ++i)
            probe(&m.emb.data[i], analytic.emb.data[i]);
        for (std::size_t i = 0; i < m.proj_w.data.size(); ++i)
            probe(&m.proj_w.data[i], analytic.proj_w.data[i]);
        for (std::size_t i = 0; i < m.proj_b.size(); ++i)
            probe(&m.proj_b[i], analytic.proj_b[i]);
        EXPECT_LT(testutil::rel_vec_error(fd_flat, an_flat), 1e-5);
    }
}

TEST(Checkpoint, RoundTripIsF32Exact) {
    std::mt19937_64 rng(5);
    EncoderState s = init_encoder(small_vocab(), 6, 4, 0.1, 5, rng);
    const std::string once = serialize_checkpoint(s);
    const EncoderState r1 = deserialize_checkpoint(once);
    const std::string twice = serialize_checkpoint(r1);
    EXPECT_EQ(once, twice);  // f32 quantization is idempotent
    EXPECT_EQ(r1.vocab.tokens, s.vocab.tokens);
    EXPECT_EQ(r1.seed, s.seed);
    for (std::size_t i = 0; i < s.emb.data.size(); ++i)
        EXPECT_DOUBLE_EQ(r1.emb.data[i], static_cast<double>(static_cast<float>(s.emb.data[i])));
}

TEST(Checkpoint, RejectsBadMagicAndTruncation) {
    std::mt19937_64 rng(5);
    const EncoderState s = init_encoder(small_vocab(), 3, 2, 0.0, 5, rng);
    std::string buf = serialize_checkpoint(s);

    std::string bad = buf;
    bad[0] = 'X';
    EXPECT_THROW(deserialize_checkpoint(bad), Error);

    const std::string truncated = buf.substr(0, buf.size() - 3);
    EXPECT_THROW(deserialize_checkpoint(truncated), Error);

    std::string trailing = buf + "zz";
    EXPECT_THROW(deserialize_checkpoint(trailing), Error);
}

TEST(Checkpoint, FileRoundTrip) {
    std::mt19937_64 rng(6);
    const EncoderState s = init_encoder(small_vocab(), 3, 2, 0.0, 6, rng);
    const auto path = std::filesystem::temp_directory_path() / "hncse_test_ckpt.bin";
    save_checkpoint(s, path);
    const EncoderState r = load_checkpoint(path);
    EXPECT_EQ(serialize_checkpoint(r), serialize_checkpoint(s));
    std::filesystem::remove(path);
}
