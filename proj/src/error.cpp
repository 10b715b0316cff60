#include "calign/error.hpp"

namespace calign {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid_input";
    case ErrorKind::DegenerateInput: return "degenerate_input";
    case ErrorKind::DegenerateSpectrum: return "degenerate_spectrum";
    case ErrorKind::InvalidMask: return "invalid_mask";
    case ErrorKind::Conditioning: return "conditioning";
    case ErrorKind::OracleTooLarge: return "oracle_too_large";
    case ErrorKind::RankDeficient: return "rank_deficient";
    case ErrorKind::InsufficientCoverage: return "insufficient_coverage";
    case ErrorKind::InvalidModality: return "invalid_modality";
    case ErrorKind::InvalidPosterior: return "invalid_posterior";
    case ErrorKind::InvalidStack: return "invalid_stack";
    case ErrorKind::InvalidAnchor: return "invalid_anchor";
    case ErrorKind::InsufficientNegatives: return "insufficient_negatives";
    case ErrorKind::InvalidImputation: return "invalid_imputation";
    case ErrorKind::NoMissingModality: return "no_missing_modality";
    case ErrorKind::DegenerateEmbedding: return "degenerate_embedding";
    case ErrorKind::InvalidWarmupData: return "invalid_warmup_data";
    case ErrorKind::InvalidK: return "invalid_k";
    case ErrorKind::InvalidSpec: return "invalid_spec";
    case ErrorKind::Parse: return "parse_error";
    case ErrorKind::InvariantViolation: return "invariant_violation";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Io: return "io_error";
  }
  return "unknown";
}

}  // namespace calign
