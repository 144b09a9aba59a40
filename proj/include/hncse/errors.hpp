#pragma once

#include <stdexcept>
#include <string>

namespace hncse {

enum class ErrorKind {
    // numeric failures
    ZeroNorm,
    DimMismatch,
    NonPositiveTau,
    NonFiniteEvaluation,
    DegenerateSimilarity,
    DegenerateMix,
    ShapeMismatch,
    BinMismatch,
    InvalidGamma,
    // data / input failures
    EmptySentence,
    InsufficientCandidates,
    EmptySet,
    DegenerateInput,
    IoError,
    Utf8Error,
    EmptyCorpus,
    MalformedRow,
    ScoreOutOfRange,
    BadCheckpoint,
    BadConfig,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

// Exit-code class used by the CLI: 2 = data error, 3 = numeric failure.
inline bool is_numeric_error(ErrorKind k) {
    switch (k) {
        case ErrorKind::ZeroNorm:
        case ErrorKind::DimMismatch:
        case ErrorKind::NonPositiveTau:
        case ErrorKind::NonFiniteEvaluation:
        case ErrorKind::DegenerateSimilarity:
        case ErrorKind::DegenerateMix:
        case ErrorKind::ShapeMismatch:
        case ErrorKind::BinMismatch:
        case ErrorKind::InvalidGamma:
            return true;
        default:
            return false;
    }
}

[[noreturn]] inline void raise(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace hncse
