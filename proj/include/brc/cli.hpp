// Command-line front end. `run` is the whole program minus process setup so
// tests can drive it with in-memory streams.
#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace brc::cli {

/// args excludes the program name. Returns the process exit code:
/// 0 success, 1 runtime failure, 2 bad flags.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Plain key=value file. Blank lines and lines starting with '#' are
/// skipped; keys and values are trimmed. Throws std::runtime_error on a
/// malformed line or unreadable file.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Appends "--key=value" for every config entry whose flag does not already
/// appear in args, so explicit flags win. Underscores in keys become dashes.
std::vector<std::string> merge_config(const std::vector<std::string>& args,
                                      const std::map<std::string, std::string>& config);

std::string version();

}  // namespace brc::cli
