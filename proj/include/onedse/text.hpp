#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace onedse::text {

std::string_view trim(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char sep);
std::vector<std::string_view> split_ws(std::string_view s);
std::string lower(std::string_view s);

/// Strict integer parse of the whole field; accepts a 0x prefix for hex.
bool parse_u64(std::string_view s, std::uint64_t& out, int base = 0);
bool parse_double(std::string_view s, double& out);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Strips a trailing '#' comment.
std::string_view strip_comment(std::string_view line);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace onedse::text
