#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace qavlm::util {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool istarts_with(std::string_view s, std::string_view prefix);
std::vector<std::string> split_whitespace(std::string_view s);
std::size_t count_tokens(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Replaces every occurrence and returns how many there were.
std::size_t replace_all(std::string& s, std::string_view placeholder, std::string_view value);
std::size_t count_occurrences(std::string_view s, std::string_view needle);

// UTC wall clock as 2026-01-02T03:04:05.678Z.
std::string utc_timestamp();

std::string sha256_hex(std::string_view data);
std::uint64_t fnv1a64(std::string_view data);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

std::string read_file(const std::filesystem::path& path);
// Write via a temporary sibling and rename, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Byte offset -> 1-based line number.
std::size_t line_of_offset(std::string_view text, std::size_t offset);

}  // namespace qavlm::util
