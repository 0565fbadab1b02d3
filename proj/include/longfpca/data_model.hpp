#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "longfpca/grid.hpp"

namespace longfpca {

// One subject's irregular repeated measures. Immutable once built; the
// constructor enforces strictly increasing times, matching lengths and that
// every observation precedes the dropout time.
class Trajectory {
public:
    Trajectory() = default;
    Trajectory(std::string subject_id, std::vector<double> times, std::vector<double> values,
               std::optional<double> dropout_time = std::nullopt);

    const std::string& subject_id() const { return subject_id_; }
    std::span<const double> times() const { return times_; }
    std::span<const double> values() const { return values_; }
    const std::optional<double>& dropout_time() const { return dropout_time_; }
    std::size_t size() const { return times_.size(); }
    bool empty() const { return times_.empty(); }

    // First `count` observations, keeping the subject id. The dropout time
    // is set to the first removed visit when anything is removed.
    Trajectory prefix(std::size_t count) const;

    friend bool operator==(const Trajectory&, const Trajectory&) = default;

private:
    std::string subject_id_;
    std::vector<double> times_;
    std::vector<double> values_;
    std::optional<double> dropout_time_;
};

// A nonempty collection of trajectories with unique subject ids that all lie
// inside a shared observation window.
class Dataset {
public:
    Dataset(std::vector<Trajectory> trajectories, Window window);
    // Window inferred as [min time, max time] over all observations.
    explicit Dataset(std::vector<Trajectory> trajectories);

    std::span<const Trajectory> trajectories() const { return trajectories_; }
    const Trajectory& operator[](std::size_t i) const { return trajectories_[i]; }
    std::size_t size() const { return trajectories_.size(); }
    const Window& window() const { return window_; }
    std::size_t observation_count() const;

    // Pooled (time, value) pairs in subject order.
    std::vector<double> pooled_times() const;
    std::vector<double> pooled_values() const;

    friend bool operator==(const Dataset&, const Dataset&) = default;

private:
    std::vector<Trajectory> trajectories_;
    Window window_;
};

// Per subject, per theoretical visit: whether the value was observed.
class ObservationMask {
public:
    ObservationMask() = default;
    explicit ObservationMask(std::vector<std::vector<bool>> observed);

    // Observed flags for `complete` given that `observed` holds a prefix of
    // each complete trajectory (matched by position and subject id).
    static ObservationMask from_dropout(const Dataset& complete, const Dataset& observed);

    const std::vector<std::vector<bool>>& flags() const { return observed_; }
    // True when each row is a run of `true` followed by a run of `false`.
    bool is_monotone() const;

private:
    std::vector<std::vector<bool>> observed_;
};

// Long-format CSV with header `subject_id,time,value` (any column order,
// extra columns rejected). Trajectories keep first-appearance order of ids.
Dataset load_long_csv(const std::filesystem::path& path, std::optional<Window> window = std::nullopt);
Dataset parse_long_csv(std::string_view content, std::optional<Window> window = std::nullopt);

std::string to_long_csv(const Dataset& ds);
void write_long_csv(const Dataset& ds, const std::filesystem::path& path);

// Companion mask file: `subject_id,visit_index,observed` (1-based visits).
void write_mask_csv(const Dataset& complete, const ObservationMask& mask, const std::filesystem::path& path);

// Random partition of subjects into (train, test) with |train| = n_train.
// Deterministic in `seed`; both parts keep the input window and order.
std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, std::size_t n_train, std::uint64_t seed);

// Rounds every time to the nearest multiple of `step`; observations of one
// subject landing on the same point are averaged. The window is widened if
// needed so the rounded times stay inside it.
Dataset discretize_times(const Dataset& ds, double step);

double round_to_step(double t, double step);

}  // namespace longfpca
