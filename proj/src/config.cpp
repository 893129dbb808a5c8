#include "mdslite/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "mdslite/error.hpp"

namespace mdslite {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

[[noreturn]] void bad(const ConfigLine& line, const std::string& why) {
    throw Error(Errc::MalformedConfig, "line " + std::to_string(line.line) + " (" + line.key +
                                           "): " + why);
}

} // namespace

std::vector<ConfigLine> parse_config_lines(std::string_view text) {
    std::vector<ConfigLine> out;
    std::size_t pos = 0;
    std::size_t no = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            nl = text.size();
        }
        std::string_view line = trim(text.substr(pos, nl - pos));
        pos = nl + 1;
        ++no;
        if (line.empty() || line.front() == '#') {
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw Error(Errc::MalformedConfig, "line " + std::to_string(no) + ": missing '='");
        }
        out.push_back({no, std::string(trim(line.substr(0, eq))),
                       std::string(trim(line.substr(eq + 1)))});
    }
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::IoError, "cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double parse_config_number(const ConfigLine& line) {
    try {
        std::size_t used = 0;
        double v = std::stod(line.value, &used);
        if (used != line.value.size()) {
            bad(line, "trailing characters in number");
        }
        return v;
    } catch (const std::logic_error&) {
        bad(line, "not a number: '" + line.value + "'");
    }
}

std::uint64_t parse_config_uint(const ConfigLine& line, std::string_view text) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        bad(line, "not an unsigned integer: '" + std::string(text) + "'");
    }
    return v;
}

bool parse_config_bool(const ConfigLine& line) {
    if (line.value == "true" || line.value == "1" || line.value == "yes") {
        return true;
    }
    if (line.value == "false" || line.value == "0" || line.value == "no") {
        return false;
    }
    bad(line, "not a boolean: '" + line.value + "'");
}

} // namespace mdslite
