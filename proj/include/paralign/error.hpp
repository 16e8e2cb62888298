#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace paralign {

enum class ErrorKind {
  LengthExceeded,
  VocabOverflow,
  ForbiddenPair,
  InsufficientTopics,
  InsufficientQueries,
  MalformedStream,
  EmptyResponse,
  DegenerateInput,
  DegenerateLabels,
  ContextOverflow,
  NonFiniteLoss,
  ShapeMismatch,
  DivergedTraining,
  RewardModelMissing,
  InvalidArgument,
  Config,
  Io,
  MissingArtifact,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::LengthExceeded: return "LengthExceeded";
    case ErrorKind::VocabOverflow: return "VocabOverflow";
    case ErrorKind::ForbiddenPair: return "ForbiddenPair";
    case ErrorKind::InsufficientTopics: return "InsufficientTopics";
    case ErrorKind::InsufficientQueries: return "InsufficientQueries";
    case ErrorKind::MalformedStream: return "MalformedStream";
    case ErrorKind::EmptyResponse: return "EmptyResponse";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::DegenerateLabels: return "DegenerateLabels";
    case ErrorKind::ContextOverflow: return "ContextOverflow";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DivergedTraining: return "DivergedTraining";
    case ErrorKind::RewardModelMissing: return "RewardModelMissing";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Config: return "Config";
    case ErrorKind::Io: return "Io";
    case ErrorKind::MissingArtifact: return "MissingArtifact";
  }
  return "Unknown";
}

// Every failure raised by the library carries a kind so callers (the CLI exit
// code table, the tests) can dispatch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace paralign
