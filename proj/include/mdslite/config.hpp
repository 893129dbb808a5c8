#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mdslite {

struct ConfigLine {
    std::size_t line = 0;
    std::string key;
    std::string value;
};

// "key=value" lines; blank lines and lines starting with '#' are skipped.
// Keys and values are whitespace-trimmed. Throws MalformedConfig.
std::vector<ConfigLine> parse_config_lines(std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

double parse_config_number(const ConfigLine& line);
std::uint64_t parse_config_uint(const ConfigLine& line, std::string_view text);
bool parse_config_bool(const ConfigLine& line);

} // namespace mdslite
