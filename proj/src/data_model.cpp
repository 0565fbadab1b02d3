#include "longfpca/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "longfpca/errors.hpp"
#include "longfpca/text_io.hpp"

namespace longfpca {

Trajectory::Trajectory(std::string subject_id, std::vector<double> times, std::vector<double> values,
                       std::optional<double> dropout_time)
    : subject_id_(std::move(subject_id)),
      times_(std::move(times)),
      values_(std::move(values)),
      dropout_time_(dropout_time) {
    if (times_.size() != values_.size()) {
        throw InvariantError("subject " + subject_id_ + ": times and values differ in length");
    }
    for (std::size_t j = 0; j < times_.size(); ++j) {
        if (!std::isfinite(times_[j]) || !std::isfinite(values_[j])) {
            throw InvariantError("subject " + subject_id_ + ": non-finite observation");
        }
        if (j > 0 && !(times_[j] > times_[j - 1])) {
            throw InvariantError("subject " + subject_id_ + ": times not strictly increasing");
        }
    }
    if (dropout_time_ && !times_.empty() && !(times_.back() < *dropout_time_)) {
        throw InvariantError("subject " + subject_id_ + ": observation at or after dropout time");
    }
}

Trajectory Trajectory::prefix(std::size_t count) const {
    if (count >= times_.size()) return *this;
    return Trajectory(subject_id_, std::vector<double>(times_.begin(), times_.begin() + count),
                      std::vector<double>(values_.begin(), values_.begin() + count), times_[count]);
}

namespace {

Window infer_window(std::span<const Trajectory> trajectories) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& tr : trajectories) {
        for (double t : tr.times()) {
            lo = std::min(lo, t);
            hi = std::max(hi, t);
        }
    }
    if (!std::isfinite(lo)) throw SizeError("dataset has no observations");
    return {lo, hi};
}

}  // namespace

Dataset::Dataset(std::vector<Trajectory> trajectories, Window window)
    : trajectories_(std::move(trajectories)), window_(window) {
    if (trajectories_.empty()) throw SizeError("dataset must contain at least one trajectory");
    if (!(window_.upper >= window_.lower)) throw InvariantError("dataset window is inverted");
    std::unordered_set<std::string> ids;
    for (const auto& tr : trajectories_) {
        if (!ids.insert(tr.subject_id()).second) {
            throw InvariantError("duplicate subject id " + tr.subject_id());
        }
        for (double t : tr.times()) {
            if (!window_.contains(t)) {
                throw InvariantError("subject " + tr.subject_id() + ": time " + text::format_double(t) +
                                     " outside the dataset window");
            }
        }
    }
}

Dataset::Dataset(std::vector<Trajectory> trajectories)
    : Dataset(trajectories, infer_window(trajectories)) {}

std::size_t Dataset::observation_count() const {
    std::size_t n = 0;
    for (const auto& tr : trajectories_) n += tr.size();
    return n;
}

std::vector<double> Dataset::pooled_times() const {
    std::vector<double> out;
    out.reserve(observation_count());
    for (const auto& tr : trajectories_) out.insert(out.end(), tr.times().begin(), tr.times().end());
    return out;
}

std::vector<double> Dataset::pooled_values() const {
    std::vector<double> out;
    out.reserve(observation_count());
    for (const auto& tr : trajectories_) out.insert(out.end(), tr.values().begin(), tr.values().end());
    return out;
}

ObservationMask::ObservationMask(std::vector<std::vector<bool>> observed) : observed_(std::move(observed)) {}

ObservationMask ObservationMask::from_dropout(const Dataset& complete, const Dataset& observed) {
    if (complete.size() != observed.size()) throw SizeError("complete and observed datasets differ in size");
    std::vector<std::vector<bool>> flags;
    flags.reserve(complete.size());
    for (std::size_t i = 0; i < complete.size(); ++i) {
        const auto& full = complete[i];
        const auto& seen = observed[i];
        if (full.subject_id() != seen.subject_id() || seen.size() > full.size()) {
            throw InvariantError("observed trajectory " + seen.subject_id() + " is not a prefix of its complete data");
        }
        std::vector<bool> row(full.size(), false);
        for (std::size_t j = 0; j < seen.size(); ++j) {
            if (seen.times()[j] != full.times()[j]) {
                throw InvariantError("observed trajectory " + seen.subject_id() + " is not a prefix of its complete data");
            }
            row[j] = true;
        }
        flags.push_back(std::move(row));
    }
    return ObservationMask(std::move(flags));
}

bool ObservationMask::is_monotone() const {
    return std::all_of(observed_.begin(), observed_.end(), [](const std::vector<bool>& row) {
        return std::is_sorted(row.begin(), row.end(), std::greater<>());
    });
}

// ---------------------------------------------------------------------------
// CSV

Dataset parse_long_csv(std::string_view content, std::optional<Window> window) {
    if (content.starts_with("\xEF\xBB\xBF")) content.remove_prefix(3);

    std::size_t pos = 0;
    std::size_t line_no = 0;
    auto next_line = [&](std::string_view& line) {
        if (pos >= content.size()) return false;
        auto end = content.find('\n', pos);
        if (end == std::string_view::npos) end = content.size();
        line = text::strip_cr(content.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        return true;
    };

    std::string_view line;
    if (!next_line(line)) throw SchemaError("empty file: header row `subject_id,time,value` required");
    const auto header = text::split(line, ',');
    int col_id = -1, col_time = -1, col_value = -1;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const auto name = text::trim(header[c]);
        if (name == "subject_id") col_id = static_cast<int>(c);
        else if (name == "time") col_time = static_cast<int>(c);
        else if (name == "value") col_value = static_cast<int>(c);
        else throw SchemaError("unexpected column `" + std::string(name) + "`");
    }
    for (auto [col, name] : {std::pair{col_id, "subject_id"}, {col_time, "time"}, {col_value, "value"}}) {
        if (col < 0) throw SchemaError(std::string("missing column `") + name + "`");
    }

    struct Rows {
        std::vector<std::pair<double, double>> obs;
        std::vector<std::size_t> lines;
    };
    std::vector<std::string> order;
    std::unordered_map<std::string, Rows> by_subject;

    while (next_line(line)) {
        if (text::trim(line).empty()) continue;
        const auto fields = text::split(line, ',');
        if (fields.size() != header.size()) {
            throw ParseError("row " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                             " fields, got " + std::to_string(fields.size()));
        }
        const std::string id(text::trim(fields[col_id]));
        if (id.empty()) throw ParseError("row " + std::to_string(line_no) + ": empty subject_id");
        const auto t = text::parse_double(fields[col_time]);
        if (!t || !std::isfinite(*t)) {
            throw ParseError("row " + std::to_string(line_no) + ": time `" + std::string(fields[col_time]) +
                             "` is not a number");
        }
        const auto v = text::parse_double(fields[col_value]);
        if (!v || !std::isfinite(*v)) {
            throw ParseError("row " + std::to_string(line_no) + ": value `" + std::string(fields[col_value]) +
                             "` is not a number");
        }
        auto [it, inserted] = by_subject.try_emplace(id);
        if (inserted) order.push_back(id);
        it->second.obs.emplace_back(*t, *v);
        it->second.lines.push_back(line_no);
    }
    if (order.empty()) throw SizeError("file contains a header but no observations");

    std::vector<Trajectory> trajectories;
    trajectories.reserve(order.size());
    for (const auto& id : order) {
        auto& rows = by_subject[id];
        std::vector<std::size_t> idx(rows.obs.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return rows.obs[a].first < rows.obs[b].first; });
        std::vector<double> times, values;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto [t, v] = rows.obs[idx[k]];
            if (k > 0 && t == times.back()) {
                throw DuplicateObservationError("duplicate observation for subject " + id + " at time " +
                                                text::format_double(t) + " (row " +
                                                std::to_string(rows.lines[idx[k]]) + ")");
            }
            times.push_back(t);
            values.push_back(v);
        }
        trajectories.emplace_back(id, std::move(times), std::move(values));
    }
    if (window) return Dataset(std::move(trajectories), *window);
    return Dataset(std::move(trajectories));
}

Dataset load_long_csv(const std::filesystem::path& path, std::optional<Window> window) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open data file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_long_csv(buffer.str(), window);
}

std::string to_long_csv(const Dataset& ds) {
    std::string out = "subject_id,time,value\n";
    for (const auto& tr : ds.trajectories()) {
        for (std::size_t j = 0; j < tr.size(); ++j) {
            out += tr.subject_id();
            out += ',';
            out += text::format_double(tr.times()[j]);
            out += ',';
            out += text::format_double(tr.values()[j]);
            out += '\n';
        }
    }
    return out;
}

void write_long_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_long_csv(ds);
}

void write_mask_csv(const Dataset& complete, const ObservationMask& mask, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "subject_id,visit_index,observed\n";
    const auto& flags = mask.flags();
    for (std::size_t i = 0; i < complete.size(); ++i) {
        for (std::size_t j = 0; j < flags[i].size(); ++j) {
            out << complete[i].subject_id() << ',' << (j + 1) << ',' << (flags[i][j] ? 1 : 0) << '\n';
        }
    }
}

// ---------------------------------------------------------------------------

std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, std::size_t n_train, std::uint64_t seed) {
    if (n_train == 0 || n_train >= ds.size()) {
        throw SizeError("training size must be in [1, " + std::to_string(ds.size() - 1) + "], got " +
                        std::to_string(n_train));
    }
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::sort(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());

    std::vector<Trajectory> train, test;
    train.reserve(n_train);
    test.reserve(ds.size() - n_train);
    for (std::size_t k = 0; k < idx.size(); ++k) (k < n_train ? train : test).push_back(ds[idx[k]]);
    return {Dataset(std::move(train), ds.window()), Dataset(std::move(test), ds.window())};
}

double round_to_step(double t, double step) { return std::round(t / step) * step; }

Dataset discretize_times(const Dataset& ds, double step) {
    if (!(step > 0.0) || !std::isfinite(step)) throw ParameterError("discretization step must be positive");
    Window window = ds.window();
    window.lower = std::min(window.lower, round_to_step(window.lower, step));
    window.upper = std::max(window.upper, round_to_step(window.upper, step));

    std::vector<Trajectory> out;
    out.reserve(ds.size());
    for (const auto& tr : ds.trajectories()) {
        std::vector<double> times, values;
        std::vector<int> counts;
        for (std::size_t j = 0; j < tr.size(); ++j) {
            const double t = round_to_step(tr.times()[j], step);
            if (!times.empty() && t == times.back()) {
                values.back() += tr.values()[j];
                ++counts.back();
            } else {
                times.push_back(t);
                values.push_back(tr.values()[j]);
                counts.push_back(1);
            }
        }
        for (std::size_t k = 0; k < values.size(); ++k) values[k] /= counts[k];
        std::optional<double> dropout = tr.dropout_time();
        if (dropout) {
            dropout = round_to_step(*dropout, step);
            if (!times.empty() && !(*dropout > times.back())) dropout = times.back() + step;
        }
        out.emplace_back(tr.subject_id(), std::move(times), std::move(values), dropout);
    }
    return Dataset(std::move(out), window);
}

}  // namespace longfpca
