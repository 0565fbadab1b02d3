#include "longfpca/text_io.hpp"

#include <array>
#include <charconv>
#include <algorithm>
#include <cmath>
#include <limits>

#include "longfpca/errors.hpp"

namespace longfpca::text {

std::string format_double(double value) {
    if (std::isnan(value)) return "NA";
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), res.ptr);
}

std::string format_list(std::span<const double> values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ' ';
        out += format_double(values[i]);
    }
    return out;
}

std::optional<double> parse_double(std::string_view field) {
    field = trim(field);
    if (field.empty()) return std::nullopt;
    if (field.front() == '+') field.remove_prefix(1);
    double value = 0.0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size()) return std::nullopt;
    return value;
}

std::optional<long long> parse_int(std::string_view field) {
    field = trim(field);
    if (field.empty()) return std::nullopt;
    long long value = 0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size()) return std::nullopt;
    return value;
}

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view line, char delim) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        if (pos == std::string_view::npos) {
            parts.push_back(line.substr(start));
            break;
        }
        parts.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

std::string_view strip_cr(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
}

KeyValueDocument::KeyValueDocument(std::string format, int version)
    : format_(std::move(format)), version_(version) {}

KeyValueDocument KeyValueDocument::parse(std::string_view content, std::string_view expected_format,
                                         int expected_version) {
    std::optional<KeyValueDocument> doc;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < content.size()) {
        auto end = content.find('\n', pos);
        if (end == std::string_view::npos) end = content.size();
        const auto line = trim(content.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const auto space = line.find(' ');
        const auto key = line.substr(0, space);
        const auto value = space == std::string_view::npos ? std::string_view{} : trim(line.substr(space + 1));
        if (!doc) {
            const auto parts = split(value, ' ');
            if (key != "format" || parts.size() != 2 || parts[0] != expected_format) {
                throw FormatError("line " + std::to_string(line_no) + ": expected `format " +
                                  std::string(expected_format) + " <version>`");
            }
            const auto version = parse_int(parts[1]);
            if (!version || *version != expected_version) {
                throw FormatError("unsupported " + std::string(expected_format) + " version `" +
                                  std::string(parts[1]) + "`");
            }
            doc.emplace(std::string(expected_format), expected_version);
            continue;
        }
        if (doc->contains(key)) throw FormatError("line " + std::to_string(line_no) + ": repeated key `" + std::string(key) + "`");
        doc->add(std::string(key), std::string(value));
    }
    if (!doc) throw FormatError("empty model file");
    return *doc;
}

void KeyValueDocument::add(std::string key, std::string value) { entries_.emplace_back(std::move(key), std::move(value)); }
void KeyValueDocument::add(std::string key, double value) { add(std::move(key), format_double(value)); }
void KeyValueDocument::add(std::string key, std::span<const double> values) { add(std::move(key), format_list(values)); }

bool KeyValueDocument::contains(std::string_view key) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == key; });
}

const std::string& KeyValueDocument::get(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) return v;
    }
    throw FormatError("missing key `" + std::string(key) + "`");
}

double KeyValueDocument::get_double(std::string_view key) const {
    const auto& raw = get(key);
    if (raw == "NA") return std::numeric_limits<double>::quiet_NaN();
    const auto v = parse_double(raw);
    if (!v) throw FormatError("key `" + std::string(key) + "`: `" + raw + "` is not a number");
    return *v;
}

long long KeyValueDocument::get_int(std::string_view key) const {
    const auto v = parse_int(get(key));
    if (!v) throw FormatError("key `" + std::string(key) + "`: expected an integer");
    return *v;
}

std::vector<double> KeyValueDocument::get_list(std::string_view key) const {
    const auto& raw = get(key);
    std::vector<double> out;
    if (trim(raw).empty()) return out;
    for (auto field : split(raw, ' ')) {
        if (field.empty()) continue;
        const auto v = parse_double(field);
        if (!v) throw FormatError("key `" + std::string(key) + "`: `" + std::string(field) + "` is not a number");
        out.push_back(*v);
    }
    return out;
}

std::string KeyValueDocument::str() const {
    std::string out = "format " + format_ + " " + std::to_string(version_) + "\n";
    for (const auto& [k, v] : entries_) out += k + " " + v + "\n";
    return out;
}

}  // namespace longfpca::text
