#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace cogen {

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// 64-bit FNV-1a, printed as 16 hex digits by hex_digest().
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ull);
std::string hex_digest(std::uint64_t h);

}  // namespace cogen
