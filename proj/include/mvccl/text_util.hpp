#pragma once

// Small parsing/formatting helpers shared by the key=value config files,
// checkpoint headers and CSV outputs.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mvccl::text {

std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char delimiter);

/// Shortest decimal that round-trips to the same double.
std::string format_double(double value);

// Parsers throw ConfigError naming `what` on malformed input.
double parse_double(std::string_view s, std::string_view what);
std::size_t parse_size(std::string_view s, std::string_view what);
std::uint64_t parse_u64(std::string_view s, std::string_view what);
bool parse_bool(std::string_view s, std::string_view what);

}  // namespace mvccl::text
