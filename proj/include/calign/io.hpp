#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "calign/align_loss.hpp"
#include "calign/anchor.hpp"
#include "calign/latent_model.hpp"
#include "calign/synth.hpp"
#include "calign/toy_train.hpp"

namespace calign {

using Json = nlohmann::ordered_json;

inline constexpr std::string_view kParamsFormat = "params/v1";

/// 17 significant digits, so the text round-trips to the same double.
std::string format_number(double value);

// Matrix text format: a `rows,cols` header, then one comma-separated line per
// row. Parse failures throw Parse naming the source and line.
std::string format_matrix(const Matrix& m);
Matrix parse_matrix(std::string_view text, std::string_view source = "matrix");
void write_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix(const std::filesystem::path& path);

// Generative parameters:
//   {"format": "params/v1", "latent_dim": r,
//    "modalities": [{"id": ..., "W": [[...]], "mu": [...], "sigma": s}, ...]}
// Schema errors throw Parse with the offending field; σ ≤ 0 throws
// InvariantViolation.
std::string params_to_json(const GenerativeParams& params);
GenerativeParams params_from_json(std::string_view text);
void save_params(const std::filesystem::path& path, const GenerativeParams& params);
GenerativeParams load_params(const std::filesystem::path& path);

Json to_json(const AnchorReport& report);
Json to_json(const LossBreakdown& loss);
Json to_json(const ImputationMse& mse);
Json to_json(const ShiftSummary& summary);
Json to_json(const SynthSpec& spec);
SynthSpec spec_from_json(const Json& j);
/// Traces and counters only; encoders and parameters are written separately.
Json to_json(const TrainReport& report);

/// `{"weight": [...], "bias": b}`
MatchingHead head_from_json(std::string_view text);

std::string read_text(const std::filesystem::path& path);
/// Writes via a temporary file in the same directory, then renames.
void write_text(const std::filesystem::path& path, std::string_view text);
/// Compact single-line dump with a trailing newline.
std::string dump_line(const Json& j);
/// Indented dump with a trailing newline.
std::string dump_pretty(const Json& j);

/// Comma-separated rows with a header; numbers through `format_number`.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);
  CsvWriter& row(const std::vector<std::string>& cells);
  const std::string& text() const { return text_; }

 private:
  std::size_t width_;
  std::string text_;
};

}  // namespace calign
