#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hncse/cli.hpp"
#include "support/synthetic.hpp"

namespace fs = std::filesystem;
using namespace hncse;

namespace {

struct CliResult {
    int code = 0;
    std::string out;
    std::string err;
};

CliResult run_cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

class CliFixture : public ::testing::Test {
  protected:
    void SetUp() override {
        dir = fs::temp_directory_path() / "hncse_cli_test";
        fs::remove_all(dir);
        fs::create_directories(dir);

        const auto corpus = testutil::synthetic_corpus();
        std::string corpus_text;
        for (std::size_t i = 0; i < 64; ++i) corpus_text += corpus[i] + "\n";
        write(dir / "corpus.txt", corpus_text);

        const auto pairs = testutil::synthetic_eval_pairs();
        std::string eval_text = "sentence_a\tsentence_b\tscore\n";
        for (std::size_t i = 0; i < 40; ++i) {
            const auto& p = pairs[i * 5];
            eval_text += p.a + "\t" + p.b + "\t" + format_double(p.gold) + "\n";
        }
        write(dir / "eval.tsv", eval_text);

        write(dir / "config.json",
              R"({"batch_size": 8, "epochs": 1, "seed": 3, "eval_every": 4,
                  "d_emb": 8, "d_out": 8, "max_seq_len": 8})");
    }

    void write(const fs::path& p, const std::string& text) {
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        f << text;
    }

    std::string slurp(const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    }

    fs::path dir;
};

}  // namespace

TEST_F(CliFixture, UnknownSubcommandIsUsageError) {
    const auto r = run_cli({"frobnicate"});
    EXPECT_EQ(r.code, 1);
    EXPECT_FALSE(r.err.empty());
}

TEST_F(CliFixture, MissingRequiredFlagIsUsageError) {
    const auto r = run_cli({"train", "--config", (dir / "config.json").string()});
    EXPECT_EQ(r.code, 1);
}

TEST_F(CliFixture, TrainWritesArtifacts) {
    const auto r = run_cli({"train", "--config", (dir / "config.json").string(), "--corpus",
                            (dir / "corpus.txt").string(), "--eval", (dir / "eval.tsv").string(),
                            "--out", (dir / "run1").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "run1" / "checkpoint.bin"));
    EXPECT_TRUE(fs::exists(dir / "run1" / "trace.csv"));
    EXPECT_TRUE(fs::exists(dir / "run1" / "manifest.json"));

    const std::string trace = slurp(dir / "run1" / "trace.csv");
    EXPECT_EQ(trace.rfind("step,loss,delta_pairwise,divergence,kl,delta_margin,acc_delta,"
                          "spearman,lr\n", 0), 0u);

    const std::string manifest = slurp(dir / "run1" / "manifest.json");
    EXPECT_EQ(std::count(manifest.begin(), manifest.end(), '\n'), 1);  // one-line JSON
    EXPECT_NE(manifest.find("\"seed\":3"), std::string::npos);
}

TEST_F(CliFixture, TrainIsByteDeterministic) {
    for (const char* out : {"runA", "runB"}) {
        const auto r = run_cli({"train", "--config", (dir / "config.json").string(), "--corpus",
                                (dir / "corpus.txt").string(), "--eval", (dir / "eval.tsv").string(),
                                "--out", (dir / out).string()});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    EXPECT_EQ(slurp(dir / "runA" / "checkpoint.bin"), slurp(dir / "runB" / "checkpoint.bin"));
    EXPECT_EQ(slurp(dir / "runA" / "trace.csv"), slurp(dir / "runB" / "trace.csv"));
    EXPECT_EQ(slurp(dir / "runA" / "manifest.json"), slurp(dir / "runB" / "manifest.json"));
}

TEST_F(CliFixture, EvalPrintsSpearman) {
    ASSERT_EQ(run_cli({"train", "--config", (dir / "config.json").string(), "--corpus",
                       (dir / "corpus.txt").string(), "--eval", (dir / "eval.tsv").string(),
                       "--out", (dir / "run2").string()})
                  .code,
              0);
    const auto r = run_cli({"eval", "--checkpoint", (dir / "run2" / "checkpoint.bin").string(),
                            "--eval", (dir / "eval.tsv").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const double rho = std::strtod(r.out.c_str(), nullptr);
    EXPECT_GE(rho, -1.0);
    EXPECT_LE(rho, 1.0);
}

TEST_F(CliFixture, AnalyzeIdenticalCheckpointsGivesZeros) {
    ASSERT_EQ(run_cli({"train", "--config", (dir / "config.json").string(), "--corpus",
                       (dir / "corpus.txt").string(), "--eval", (dir / "eval.tsv").string(),
                       "--out", (dir / "run3").string()})
                  .code,
              0);
    const std::string ckpt = (dir / "run3" / "checkpoint.bin").string();
    const auto r = run_cli(
        {"analyze", "--before", ckpt, "--after", ckpt, "--corpus", (dir / "corpus.txt").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, "delta_pairwise,divergence,kl\n0,0,0\n");
}

TEST_F(CliFixture, AnalyzeWithTripletsAddsColumns) {
    ASSERT_EQ(run_cli({"train", "--config", (dir / "config.json").string(), "--corpus",
                       (dir / "corpus.txt").string(), "--eval", (dir / "eval.tsv").string(),
                       "--out", (dir / "run4").string()})
                  .code,
              0);
    const auto corpus = testutil::synthetic_corpus();
    std::string tri;
    for (int g = 0; g < 4; ++g)
        tri += corpus[g * 10] + "\t" + corpus[g * 10 + 1] + "\t" + corpus[((g + 1) % 4) * 10] + "\n";
    write(dir / "triplets.tsv", tri);
    const std::string ckpt = (dir / "run4" / "checkpoint.bin").string();
    const auto r = run_cli({"analyze", "--before", ckpt, "--after", ckpt, "--corpus",
                            (dir / "corpus.txt").string(), "--triplets",
                            (dir / "triplets.tsv").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.rfind("delta_pairwise,divergence,kl,delta_margin,acc_delta\n", 0), 0u);
    // identical checkpoints: acc_delta must be exactly zero
    EXPECT_NE(r.out.find(",0\n"), std::string::npos);
}

TEST_F(CliFixture, DataErrorsExitTwo) {
    const auto missing = run_cli({"eval", "--checkpoint", "/nonexistent.bin", "--eval",
                                  (dir / "eval.tsv").string()});
    EXPECT_EQ(missing.code, 2);
    EXPECT_FALSE(missing.err.empty());

    write(dir / "bad_config.json", R"({"batch_size": 0})");
    const auto bad = run_cli({"train", "--config", (dir / "bad_config.json").string(), "--corpus",
                              "/nonexistent_corpus.txt", "--eval", (dir / "eval.tsv").string(),
                              "--out", (dir / "run5").string()});
    EXPECT_EQ(bad.code, 2);
    // config validation fails before the corpus path is ever opened
    EXPECT_NE(bad.err.find("batch_size"), std::string::npos);
}

TEST_F(CliFixture, NumericFailureExitsThree) {
    // checkpoint with all-zero parameters: every sentence encodes to the zero
    // vector and normalization reports it
    EncoderState zero;
    zero.vocab = build_vocab({"the falcon crosses the ridge"});
    zero.emb = Mat(zero.vocab.size(), 4);
    zero.proj_w = Mat(4, 4);
    zero.proj_b.assign(4, 0.0);
    save_checkpoint(zero, dir / "zero.bin");
    const auto r = run_cli({"analyze", "--before", (dir / "zero.bin").string(), "--after",
                            (dir / "zero.bin").string(), "--corpus", (dir / "corpus.txt").string()});
    EXPECT_EQ(r.code, 3);
    EXPECT_FALSE(r.err.empty());
}
