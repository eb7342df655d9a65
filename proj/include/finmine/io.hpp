#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace finmine {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t fnv1a64(std::string_view text);
std::string hex64(std::uint64_t value);

/// Hash of a file's contents; throws IOFailure if unreadable.
std::uint64_t file_digest(const std::filesystem::path& path);

// Minimal RFC 4180 CSV: fields containing a comma, quote or newline are
// quoted, quotes doubled.
std::string csv_field(std::string_view value);
std::vector<std::string> split_csv_line(std::string_view line);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws MalformedContainer if missing.
  std::size_t column(std::string_view name) const;
};

/// Reads a CSV file with a header row. Blank lines are skipped; every row
/// must have as many fields as the header.
CsvTable read_csv(const std::filesystem::path& path);

double parse_double(std::string_view text, std::string_view what);
long long parse_integer(std::string_view text, std::string_view what);

}  // namespace finmine
