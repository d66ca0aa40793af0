#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fairmtl::io {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column; throws kInvalidInput naming the file if absent.
  std::size_t Column(std::string_view name) const;
  std::filesystem::path source;
};

// Comma-separated, header row required, no quoting.
CsvTable ReadCsv(const std::filesystem::path& path);

double ParseDouble(std::string_view text);
long long ParseInt(std::string_view text);

// Shortest representation that round-trips.
std::string FormatDouble(double value);

std::string ReadFile(const std::filesystem::path& path);

// Writes to a sibling temp file, then renames over the destination.
void WriteFileAtomic(const std::filesystem::path& path, std::string_view content);

// Hex SHA-256 of a byte string.
std::string Sha256Hex(std::string_view bytes);

}  // namespace fairmtl::io
