#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "longfpca/evaluation.hpp"
#include "longfpca/spline_basis.hpp"

namespace longfpca {

// Sectioned `key = value` text. Keys are addressed as `section.key`; every
// entry remembers where it came from (`file:line` or `--set`).
class IniDocument {
public:
    struct Entry {
        std::string value;
        std::string origin;
    };

    // Throws ConfigError with file:line context on malformed lines, keys
    // outside a section and repeated keys.
    static IniDocument parse(std::string_view content, std::string source_name);
    static IniDocument load(const std::filesystem::path& path);

    // `section.key=value`; replaces any existing value.
    void apply_override(std::string_view assignment);
    void set(std::string dotted_key, std::string value, std::string origin);

    const std::map<std::string, Entry>& entries() const { return entries_; }

private:
    std::map<std::string, Entry> entries_;
};

enum class FitMethod { fpca, lmm };

std::string to_string(FitMethod m);
FitMethod fit_method_from_string(std::string_view name);

// Settings of the `fit` command.
struct FitConfig {
    FitMethod method = FitMethod::fpca;
    // fpca
    double fve = 0.99;
    std::optional<std::size_t> components;
    // lmm
    BasisKind basis = BasisKind::natural_cubic;
    int degree = 2;  // polynomial degree
    int order = 4;   // B-spline order
    int knots = 2;
    KnotStrategy knot_strategy = KnotStrategy::quantile;
    std::optional<std::pair<double, double>> boundary;  // data range when absent
    bool intercept = true;
};

struct RunConfig {
    ScenarioConfig scenario;
    FitConfig fit;
    std::filesystem::path out_dir = "out";
};

// Validated configuration. Unknown keys and invalid values raise ConfigError
// naming the key and where it was set.
RunConfig build_run_config(const IniDocument& doc);

// Keys accepted by build_run_config, as `section.key`.
const std::vector<std::string>& known_config_keys();

}  // namespace longfpca
