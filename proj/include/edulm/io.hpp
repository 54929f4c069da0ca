#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace edulm {

/// Reads a whole file; throws InputError naming the path when it cannot.
std::string read_file(const std::filesystem::path &path);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path &path, std::string_view contents);

/// 64-bit FNV-1a digest, rendered as 16 lowercase hex digits by digest_hex.
std::uint64_t fnv1a64(std::string_view bytes);
std::string digest_hex(std::string_view bytes);

}  // namespace edulm
