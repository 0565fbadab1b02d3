#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "longfpca/fpca.hpp"
#include "longfpca/lmm.hpp"
#include "longfpca/simulation.hpp"

namespace longfpca {

// ---------------------------------------------------------------------------
// Metrics

struct RmseSplit {
    std::optional<double> observed;  // absent when no observed points
    std::optional<double> missing;   // absent when no missing points
};

// Pooled RMSE within the observed (flag false) and missing (flag true)
// points. NoDataError when both splits are empty.
RmseSplit rmse_split(std::span<const double> pred, std::span<const double> truth, const std::vector<bool>& missing);

// model / reference; DegenerateReferenceError unless reference > 0.
double standardized_rmse(double model_rmse, double reference_rmse);

struct AlignedFunction {
    std::vector<double> values;
    bool orthogonal = false;  // inner product was zero; estimate kept as-is
};

// Multiplies `estimated` by the sign of its inner product with `truth`.
AlignedFunction align_sign(std::span<const double> grid, std::span<const double> estimated,
                           std::span<const double> truth);

struct BiasCurve {
    std::vector<double> grid;
    std::vector<double> bias;  // relative where reportable, absolute elsewhere
    std::vector<bool> absolute;  // true where |truth| <= 0.05 max|truth|
};

// Pointwise (mean estimate - truth) / truth over replicates. Points where
// |truth| <= 0.05 max|truth| report the absolute bias and are marked.
BiasCurve relative_bias(const std::vector<std::vector<double>>& estimates, std::span<const double> truth,
                        std::span<const double> grid);

// ---------------------------------------------------------------------------
// Studies

enum class ModelKind { lmm_quad, lmm_cub, lmm_spl_quant, lmm_spl_equi, fpca_fve90, fpca_fve99, reference };

std::string to_string(ModelKind m);
ModelKind model_kind_from_string(std::string_view name);

struct ScenarioConfig {
    int study = 1;
    double spacing = 2.0;
    DropoutMechanism mechanism = DropoutMechanism::mcar;
    double dropout_rate = 0.3;  // 0 disables dropout
    std::vector<ModelKind> roster{ModelKind::lmm_quad,      ModelKind::lmm_cub,    ModelKind::lmm_spl_quant,
                                  ModelKind::lmm_spl_equi,  ModelKind::fpca_fve90, ModelKind::fpca_fve99};
    std::size_t n_replicates = 100;
    std::uint64_t base_seed = 1;
    std::optional<std::size_t> n_subjects;  // 700 for study 1, 200 for study 2
    std::size_t n_train = 200;              // study 1 only
    double horizon = 12.0;
    double discretize_step = 0.5;  // 0 keeps raw times
    std::optional<double> dropout_slope;      // default_slope when absent
    std::optional<double> dropout_threshold;  // pool 75th percentile when absent
    std::size_t calibration_pool = 100000;
    double calibration_tolerance = 0.005;
    int fpca_grid_size = 51;
    ReStructure lmm_re_structure = ReStructure::diagonal;
    int lmm_max_iterations = 500;
    std::size_t n_saved_estimates = 10;
    std::uint64_t kl_seed = 20240607;
    std::size_t threads = 1;

    std::size_t subjects() const;
    // Throws ConfigError naming the offending field.
    void validate() const;
};

// Generator design with the dropout model calibrated for the scenario.
struct PreparedScenario {
    StudyDesign design;
    std::optional<double> calibrated_rate;  // rate achieved on the calibration pool
};

PreparedScenario prepare_scenario(const ScenarioConfig& cfg);

struct ReplicateResult {
    std::size_t replicate = 0;
    std::string model;
    std::optional<double> rmse_obs;
    std::optional<double> rmse_miss;
    std::optional<double> std_rmse_obs;
    std::optional<double> std_rmse_miss;
    bool converged = true;
    std::string failure;  // nonempty when the fit failed or did not converge
};

struct SummaryRow {
    std::string model;
    std::string metric;
    std::size_t n = 0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
};

struct EstimateSample {
    std::size_t replicate = 0;
    std::string target;
    std::vector<double> values;
};

struct EvalReport {
    ScenarioConfig config;
    std::optional<DropoutSpec> dropout;
    std::optional<double> calibrated_rate;
    std::vector<ReplicateResult> replicates;
    std::vector<SummaryRow> summary;
    // Study 2 only.
    std::vector<double> grid;
    std::vector<std::pair<std::string, std::vector<double>>> truth;
    std::vector<std::pair<std::string, BiasCurve>> bias;
    std::vector<EstimateSample> samples;

    std::size_t failure_count() const;
};

// Study 1: per replicate generate, discretize, split, fit the reference on
// complete training data and the roster on observed training data, then
// score test predictions.
EvalReport run_study1(const ScenarioConfig& cfg);

// Study 2: per replicate generate KL data with dropout, fit a two-component
// FPCA, and collect sign-aligned mean and component estimates.
EvalReport run_study2(const ScenarioConfig& cfg);

EvalReport run_study(const ScenarioConfig& cfg);

// Result for one study-1 replicate and every roster model.
std::vector<ReplicateResult> run_study1_replicate(const ScenarioConfig& cfg, const StudyDesign& design,
                                                  std::size_t replicate);

// CSV files, deterministic byte-for-byte for a given report.
std::string replicates_csv(const EvalReport& report);
std::string summary_csv(const EvalReport& report);
std::string bias_csv(const EvalReport& report);
std::string estimates_csv(const EvalReport& report);

// Writes replicates.csv and summary.csv, plus bias.csv and estimates.csv for
// study 2. Returns the written paths.
std::vector<std::filesystem::path> write_report(const EvalReport& report, const std::filesystem::path& dir);

// Runs `task(i)` for i in [0, count) on up to `threads` workers.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& task);

}  // namespace longfpca
