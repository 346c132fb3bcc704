#include "melodyforge/error.hpp"

namespace melodyforge {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::UnterminatedVlq: return "UnterminatedVlq";
    case Errc::UnexpectedEof: return "UnexpectedEof";
    case Errc::ValueTooLarge: return "ValueTooLarge";
    case Errc::BadMagic: return "BadMagic";
    case Errc::TruncatedChunk: return "TruncatedChunk";
    case Errc::UnsupportedSmpteDivision: return "UnsupportedSmpteDivision";
    case Errc::TrackCountMismatch: return "TrackCountMismatch";
    case Errc::InvariantViolation: return "InvariantViolation";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::TokenOutOfRange: return "TokenOutOfRange";
    case Errc::PitchOutOfRange: return "PitchOutOfRange";
    case Errc::InvalidNoteName: return "InvalidNoteName";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::TargetOutOfRange: return "TargetOutOfRange";
    case Errc::EmptySequence: return "EmptySequence";
    case Errc::SequenceTooShort: return "SequenceTooShort";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::VersionUnsupported: return "VersionUnsupported";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::InvalidSeedToken: return "InvalidSeedToken";
    case Errc::DegenerateDistribution: return "DegenerateDistribution";
    case Errc::InvalidRequest: return "InvalidRequest";
  }
  return "Unknown";
}

}  // namespace melodyforge
