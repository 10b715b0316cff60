#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace calign {

enum class ErrorKind {
  InvalidInput,
  DegenerateInput,
  DegenerateSpectrum,
  InvalidMask,
  Conditioning,
  OracleTooLarge,
  RankDeficient,
  InsufficientCoverage,
  InvalidModality,
  InvalidPosterior,
  InvalidStack,
  InvalidAnchor,
  InsufficientNegatives,
  InvalidImputation,
  NoMissingModality,
  DegenerateEmbedding,
  InvalidWarmupData,
  InvalidK,
  InvalidSpec,
  Parse,
  InvariantViolation,
  Usage,
  Io,
};

std::string_view to_string(ErrorKind kind);

// All library failures are reported through this type; `kind()` is stable and
// is what the CLI serializes into its error payload.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace calign
