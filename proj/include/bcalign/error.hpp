#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bcalign {

enum class ErrorKind {
  // corpus
  MalformedMarker,
  UnbalancedOverlap,
  NonAlternatingSpeakers,
  InsufficientDialogues,
  // prosody
  EmptySignal,
  EmptyInput,
  // shared data validation
  DimensionMismatch,
  NonFiniteValue,
  BadSchema,
  DuplicateId,
  UnknownId,
  UnknownLexeme,
  InvalidConfig,
  InvalidArgument,
  // lm
  EmptyCorpus,
  NoSamples,
  // contrastive
  MissingModality,
  CountMismatch,
  EmptySplit,
  NonFiniteLoss,
  VersionMismatch,
  CorruptFile,
  // eval
  SingularSystem,
  MissingGroundTruth,
  // explorer export
  MissingProbe,
  MissingFeature,
  // io
  IoError,
};

std::string_view to_string(ErrorKind kind);

/// All library failures are reported through this type; `kind()` is stable
/// and is what callers (and the CLI exit-code mapping) dispatch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace bcalign
