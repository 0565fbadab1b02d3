#include "longfpca/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "longfpca/errors.hpp"
#include "longfpca/text_io.hpp"

namespace longfpca {

IniDocument IniDocument::parse(std::string_view content, std::string source_name) {
    IniDocument doc;
    std::string section;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    if (content.substr(0, 3) == "\xEF\xBB\xBF") pos = 3;
    while (pos <= content.size()) {
        const auto end = content.find('\n', pos);
        const auto raw = content.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
        pos = end == std::string_view::npos ? content.size() + 1 : end + 1;
        ++line_no;
        const std::string origin = source_name + ":" + std::to_string(line_no);
        auto line = text::trim(text::strip_cr(raw));
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = text::trim(line.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(origin + ": unterminated section header");
            section = std::string(text::trim(line.substr(1, line.size() - 2)));
            if (section.empty()) throw ConfigError(origin + ": empty section name");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError(origin + ": expected `key = value`");
        const auto key = text::trim(line.substr(0, eq));
        const auto value = text::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ": missing key before `=`");
        if (section.empty()) throw ConfigError(origin + ": key `" + std::string(key) + "` outside any section");
        const std::string dotted = section + "." + std::string(key);
        if (doc.entries_.count(dotted)) {
            throw ConfigError(origin + ": `" + dotted + "` already set at " + doc.entries_.at(dotted).origin);
        }
        doc.entries_[dotted] = {std::string(value), origin};
    }
    return doc;
}

IniDocument IniDocument::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

void IniDocument::apply_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    const std::string origin = "--set " + std::string(assignment);
    if (eq == std::string_view::npos) throw ConfigError(origin + ": expected section.key=value");
    const auto key = text::trim(assignment.substr(0, eq));
    if (key.find('.') == std::string_view::npos || key.front() == '.' || key.back() == '.') {
        throw ConfigError(origin + ": key must have the form section.key");
    }
    set(std::string(key), std::string(text::trim(assignment.substr(eq + 1))), origin);
}

void IniDocument::set(std::string dotted_key, std::string value, std::string origin) {
    entries_[std::move(dotted_key)] = {std::move(value), std::move(origin)};
}

std::string to_string(FitMethod m) { return m == FitMethod::lmm ? "lmm" : "fpca"; }

FitMethod fit_method_from_string(std::string_view name) {
    if (name == "fpca") return FitMethod::fpca;
    if (name == "lmm") return FitMethod::lmm;
    throw ConfigError("unknown fit method `" + std::string(name) + "` (expected fpca or lmm)");
}

namespace {

using Setter = std::function<void(RunConfig&, std::string_view)>;

[[noreturn]] void invalid(std::string_view what) { throw ConfigError(std::string(what)); }

double as_double(std::string_view v) {
    const auto d = text::parse_double(v);
    if (!d || !std::isfinite(*d)) invalid("expected a number, got `" + std::string(v) + "`");
    return *d;
}

long long as_int(std::string_view v) {
    const auto i = text::parse_int(v);
    if (!i) invalid("expected an integer, got `" + std::string(v) + "`");
    return *i;
}

std::size_t as_count(std::string_view v) {
    const auto i = as_int(v);
    if (i < 0) invalid("expected a nonnegative integer, got `" + std::string(v) + "`");
    return static_cast<std::size_t>(i);
}

bool as_bool(std::string_view v) {
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    invalid("expected true or false, got `" + std::string(v) + "`");
}

std::optional<double> as_optional_double(std::string_view v) {
    if (v == "auto" || v.empty()) return std::nullopt;
    return as_double(v);
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table{
        {"scenario.study", [](RunConfig& c, std::string_view v) { c.scenario.study = static_cast<int>(as_int(v)); }},
        {"scenario.spacing", [](RunConfig& c, std::string_view v) { c.scenario.spacing = as_double(v); }},
        {"scenario.horizon", [](RunConfig& c, std::string_view v) { c.scenario.horizon = as_double(v); }},
        {"scenario.subjects",
         [](RunConfig& c, std::string_view v) {
             if (v == "auto") c.scenario.n_subjects.reset();
             else c.scenario.n_subjects = as_count(v);
         }},
        {"scenario.train", [](RunConfig& c, std::string_view v) { c.scenario.n_train = as_count(v); }},
        {"scenario.replicates", [](RunConfig& c, std::string_view v) { c.scenario.n_replicates = as_count(v); }},
        {"scenario.seed", [](RunConfig& c, std::string_view v) { c.scenario.base_seed = as_count(v); }},
        {"scenario.discretize_step", [](RunConfig& c, std::string_view v) { c.scenario.discretize_step = as_double(v); }},
        {"scenario.roster",
         [](RunConfig& c, std::string_view v) {
             c.scenario.roster.clear();
             for (auto item : text::split(v, ',')) {
                 item = text::trim(item);
                 if (!item.empty()) c.scenario.roster.push_back(model_kind_from_string(item));
             }
         }},
        {"dropout.mechanism",
         [](RunConfig& c, std::string_view v) {
             try {
                 c.scenario.mechanism = dropout_mechanism_from_string(v);
             } catch (const ParameterError& e) {
                 invalid(e.what());
             }
         }},
        {"dropout.rate", [](RunConfig& c, std::string_view v) { c.scenario.dropout_rate = as_double(v); }},
        {"dropout.slope", [](RunConfig& c, std::string_view v) { c.scenario.dropout_slope = as_optional_double(v); }},
        {"dropout.threshold",
         [](RunConfig& c, std::string_view v) { c.scenario.dropout_threshold = as_optional_double(v); }},
        {"dropout.calibration_pool",
         [](RunConfig& c, std::string_view v) { c.scenario.calibration_pool = as_count(v); }},
        {"dropout.calibration_tolerance",
         [](RunConfig& c, std::string_view v) { c.scenario.calibration_tolerance = as_double(v); }},
        {"fpca.grid_size",
         [](RunConfig& c, std::string_view v) { c.scenario.fpca_grid_size = static_cast<int>(as_int(v)); }},
        {"fpca.kl_seed", [](RunConfig& c, std::string_view v) { c.scenario.kl_seed = as_count(v); }},
        {"fpca.saved_estimates", [](RunConfig& c, std::string_view v) { c.scenario.n_saved_estimates = as_count(v); }},
        {"lmm.re_structure",
         [](RunConfig& c, std::string_view v) {
             try {
                 c.scenario.lmm_re_structure = re_structure_from_string(v);
             } catch (const SpecError& e) {
                 invalid(e.what());
             }
         }},
        {"lmm.max_iterations",
         [](RunConfig& c, std::string_view v) { c.scenario.lmm_max_iterations = static_cast<int>(as_int(v)); }},
        {"fit.method", [](RunConfig& c, std::string_view v) { c.fit.method = fit_method_from_string(v); }},
        {"fit.fve", [](RunConfig& c, std::string_view v) { c.fit.fve = as_double(v); }},
        {"fit.components",
         [](RunConfig& c, std::string_view v) {
             if (v == "auto") c.fit.components.reset();
             else c.fit.components = as_count(v);
         }},
        {"fit.basis",
         [](RunConfig& c, std::string_view v) {
             try {
                 c.fit.basis = basis_kind_from_string(v);
             } catch (const SpecError& e) {
                 invalid(e.what());
             }
             if (c.fit.basis == BasisKind::tabulated) invalid("tabulated bases cannot be configured from a file");
         }},
        {"fit.degree", [](RunConfig& c, std::string_view v) { c.fit.degree = static_cast<int>(as_int(v)); }},
        {"fit.order", [](RunConfig& c, std::string_view v) { c.fit.order = static_cast<int>(as_int(v)); }},
        {"fit.knots", [](RunConfig& c, std::string_view v) { c.fit.knots = static_cast<int>(as_int(v)); }},
        {"fit.knot_strategy",
         [](RunConfig& c, std::string_view v) {
             if (v == "quantile") c.fit.knot_strategy = KnotStrategy::quantile;
             else if (v == "equidistant") c.fit.knot_strategy = KnotStrategy::equidistant;
             else invalid("expected quantile or equidistant, got `" + std::string(v) + "`");
         }},
        {"fit.boundary",
         [](RunConfig& c, std::string_view v) {
             if (v == "auto") {
                 c.fit.boundary.reset();
                 return;
             }
             std::vector<double> values;
             for (auto item : text::split(v, ' ')) {
                 item = text::trim(item);
                 if (!item.empty()) values.push_back(as_double(item));
             }
             if (values.size() != 2 || !(values[1] > values[0])) invalid("expected `lower upper` with lower < upper");
             c.fit.boundary = std::pair{values[0], values[1]};
         }},
        {"fit.intercept", [](RunConfig& c, std::string_view v) { c.fit.intercept = as_bool(v); }},
        {"output.dir", [](RunConfig& c, std::string_view v) { c.out_dir = std::string(v); }},
    };
    return table;
}

}  // namespace

const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        for (const auto& [key, setter] : setters()) out.push_back(key);
        return out;
    }();
    return keys;
}

RunConfig build_run_config(const IniDocument& doc) {
    RunConfig cfg;
    const auto& table = setters();
    for (const auto& [key, entry] : doc.entries()) {
        const auto it = table.find(key);
        if (it == table.end()) throw ConfigError(entry.origin + ": unknown key `" + key + "`");
        try {
            it->second(cfg, entry.value);
        } catch (const ConfigError& e) {
            throw ConfigError(entry.origin + ": " + key + ": " + e.what());
        }
    }
    const auto origin_of = [&](const std::string& key) {
        const auto it = doc.entries().find(key);
        return it == doc.entries().end() ? std::string("default") : it->second.origin;
    };
    try {
        cfg.scenario.validate();
    } catch (const ConfigError& e) {
        // Messages start with the offending key.
        const std::string msg = e.what();
        const auto key = msg.substr(0, msg.find(' '));
        throw ConfigError(origin_of(key) + ": " + msg);
    }
    const auto& f = cfg.fit;
    if (!(f.fve > 0.0 && f.fve <= 1.0)) throw ConfigError(origin_of("fit.fve") + ": fit.fve must lie in (0, 1]");
    if (f.components && *f.components < 1) {
        throw ConfigError(origin_of("fit.components") + ": fit.components must be at least 1");
    }
    if (f.degree < 1) throw ConfigError(origin_of("fit.degree") + ": fit.degree must be at least 1");
    if (f.order < 2) throw ConfigError(origin_of("fit.order") + ": fit.order must be at least 2");
    if (f.knots < 1 && f.basis != BasisKind::polynomial) {
        throw ConfigError(origin_of("fit.knots") + ": fit.knots must be at least 1");
    }
    if (cfg.out_dir.empty()) throw ConfigError(origin_of("output.dir") + ": output.dir must not be empty");
    return cfg;
}

}  // namespace longfpca
