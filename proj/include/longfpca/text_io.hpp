#pragma once

#include <optional>
#include <utility>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace longfpca::text {

// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);

// Space-separated list of format_double values.
std::string format_list(std::span<const double> values);

// Strict full-field parse; nullopt on any trailing garbage or empty input.
std::optional<double> parse_double(std::string_view field);
std::optional<long long> parse_int(std::string_view field);

std::string_view trim(std::string_view s);

// Split on a single-character delimiter, no quoting.
std::vector<std::string_view> split(std::string_view line, char delim);

// Drops a trailing '\r' so CRLF and LF files read the same.
std::string_view strip_cr(std::string_view line);

// Versioned key/value model files: a first line `format <name> <version>`,
// then one `key value...` entry per line. Blank lines and `#` comments are
// ignored.
class KeyValueDocument {
public:
    KeyValueDocument(std::string format, int version);
    static KeyValueDocument parse(std::string_view content, std::string_view expected_format, int expected_version);

    void add(std::string key, std::string value);
    void add(std::string key, double value);
    void add(std::string key, std::span<const double> values);

    bool contains(std::string_view key) const;
    const std::string& get(std::string_view key) const;
    double get_double(std::string_view key) const;
    long long get_int(std::string_view key) const;
    std::vector<double> get_list(std::string_view key) const;

    std::string str() const;

private:
    std::string format_;
    int version_;
    std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace longfpca::text
