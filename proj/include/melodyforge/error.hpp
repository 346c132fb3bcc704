#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace melodyforge {

enum class Errc {
  // smf
  UnterminatedVlq,
  UnexpectedEof,
  ValueTooLarge,
  BadMagic,
  TruncatedChunk,
  UnsupportedSmpteDivision,
  TrackCountMismatch,
  InvariantViolation,
  // pianoroll
  EmptyInput,
  TokenOutOfRange,
  PitchOutOfRange,
  InvalidNoteName,
  // tensor / model
  ShapeMismatch,
  TargetOutOfRange,
  EmptySequence,
  // trainer
  SequenceTooShort,
  EmptyCorpus,
  LengthMismatch,
  VersionUnsupported,
  DimensionMismatch,
  TruncatedFile,
  InvalidConfig,
  // generator
  InvalidSeedToken,
  DegenerateDistribution,
  InvalidRequest,
};

std::string_view errc_name(Errc code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (CLI exit codes, HTTP status mapping) can branch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace melodyforge
