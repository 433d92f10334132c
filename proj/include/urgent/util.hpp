#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace urgent {

// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

// Milliseconds since the Unix epoch.
std::int64_t wall_clock_ms();

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace urgent
