#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "calign/synth.hpp"

namespace calign::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Exit codes: 0 success, 2 usage/parse/file errors, 3 computation errors.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitComputation = 3;

/// Runs one subcommand. `args` excludes the program name. Errors are
/// reported on `err` as a single JSON line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// World directory layout used by `synth` and read by the other commands:
/// world.json, truth.json and one matrix file per modality for embeddings,
/// raw features and raw bases (rows are instances), plus latents.txt.
std::vector<std::string> write_world(const std::filesystem::path& dir, const SynthWorld& world);
SynthWorld read_world(const std::filesystem::path& dir);

}  // namespace calign::cli
