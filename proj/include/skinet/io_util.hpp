#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace skinet::io {

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written file. Creates parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// Lowercase hex SHA-256 of the file contents.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view bytes);

/// Splits one CSV line on commas and trims surrounding whitespace. Quoting is
/// not supported; none of the formats read here need it.
std::vector<std::string> split_csv_line(std::string_view line);

std::string trim(std::string_view text);

}  // namespace skinet::io
