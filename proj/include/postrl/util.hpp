// Small file/IO/string helpers shared across modules.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace postrl::util {

// Whole-file text IO. Writes go through a temp file in the same directory
// followed by an atomic rename, so readers never observe a half-written file.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file_atomic(const std::filesystem::path& path, std::string_view content);

nlohmann::json json_from_file(const std::filesystem::path& path);
void json_to_file_atomic(const std::filesystem::path& path, const nlohmann::json& j, int indent = 2);

// Splits on '\n'; a trailing newline does not produce a final empty line.
std::vector<std::string> split_lines(std::string_view text);

void ensure_dir(const std::filesystem::path& dir);

uint64_t fnv1a64_file(const std::filesystem::path& path);
std::string hex64(uint64_t v);

// Display rounding to one decimal, half away from zero for non-negative
// inputs: 77.45 -> 77.5.
double round_half_up_1dp(double v);

std::string trim(std::string_view s);
std::string lower(std::string_view s);
std::vector<std::string> split_ws(std::string_view s);
bool is_whitespace_only(std::string_view s);

}  // namespace postrl::util
