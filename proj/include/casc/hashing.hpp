#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace casc {

/// Lowercase hex SHA-256 of a byte range.
std::string sha256_hex(std::span<const uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Hash over (relative path, content hash) pairs of all regular files under `roots`,
/// in sorted path order. Stable across checkouts with identical content.
std::string tree_hash(const std::filesystem::path& base, const std::vector<std::string>& roots);

/// Content hash of this library's source tree, or "unknown" when unavailable.
std::string source_tree_hash();

}  // namespace casc
