#include "bcalign/error.hpp"

namespace bcalign {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedMarker: return "MalformedMarker";
    case ErrorKind::UnbalancedOverlap: return "UnbalancedOverlap";
    case ErrorKind::NonAlternatingSpeakers: return "NonAlternatingSpeakers";
    case ErrorKind::InsufficientDialogues: return "InsufficientDialogues";
    case ErrorKind::EmptySignal: return "EmptySignal";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::BadSchema: return "BadSchema";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::UnknownId: return "UnknownId";
    case ErrorKind::UnknownLexeme: return "UnknownLexeme";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::NoSamples: return "NoSamples";
    case ErrorKind::MissingModality: return "MissingModality";
    case ErrorKind::CountMismatch: return "CountMismatch";
    case ErrorKind::EmptySplit: return "EmptySplit";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::CorruptFile: return "CorruptFile";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorKind::MissingProbe: return "MissingProbe";
    case ErrorKind::MissingFeature: return "MissingFeature";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace bcalign
