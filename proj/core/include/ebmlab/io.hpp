#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace ebmlab {

// 64-bit FNV-1a, chainable through `seed`.
std::uint64_t fnv1a64(std::span<const std::byte> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string to_hex(std::uint64_t value);

// Writes to "<path>.tmp" and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

// Parses "p/q", "p" or a decimal literal. Budgets such as 8/255 are written as
// rationals so the same double is produced everywhere they are parsed.
double parse_rational(std::string_view text);

}  // namespace ebmlab
