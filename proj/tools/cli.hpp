#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

namespace isample::cli {

/// Exit codes of run().
enum Exit : int { ok = 0, failure = 1, usage = 2, interrupted = 130 };

/// Parses argv and runs one subcommand. Errors are reported on stderr.
int run(int argc, const char* const* argv, const std::atomic<bool>* stop = nullptr);

/// Hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

/// Content hash over files: sha256 of sorted "<sha256>  <relative path>" lines.
std::string inputs_hash(const std::vector<std::filesystem::path>& files, const std::filesystem::path& root);

}  // namespace isample::cli
