#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace cdsynth {

// Lower-case hex SHA-256 digest of a byte string.
std::string sha256_hex(std::string_view bytes);

// Streaming SHA-256 of a file's contents; raises a data error when the file
// cannot be read.
std::string sha256_file(const std::filesystem::path& path);

} // namespace cdsynth
