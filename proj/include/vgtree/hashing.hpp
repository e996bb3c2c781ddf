#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace vgtree {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// Lowercase hex SHA-256 of a file's bytes. Throws IoError.
std::string file_sha256_hex(const std::filesystem::path& path);

} // namespace vgtree
