#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace zslada::data {

/// Shortest decimal form that parses back to the same double.
std::string format_real(double value);

/// Throws parse_error with `context` on malformed input.
double parse_real(std::string_view text, std::string_view context = {});
long long parse_int(std::string_view text, std::string_view context = {});

std::vector<std::string_view> split_fields(std::string_view line, char sep = ',');

/// Reads all lines, stripping a trailing '\r'. Throws missing_file.
std::vector<std::string> read_lines(const std::string& path);

}  // namespace zslada::data
