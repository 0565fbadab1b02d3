#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "longfpca/data_model.hpp"

namespace longfpca {

using Rng = std::mt19937_64;

// Seed for a named substream: a seed_seq over the base seed and the path.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path);

// Theoretical visits 0, spacing, 2 spacing, ... up to the horizon, each
// jittered uniformly by +-jitter_half_width.
struct VisitGridSpec {
    double spacing = 2.0;
    double jitter_half_width = 1.0;
    double horizon = 12.0;

    // Jitter of half the spacing: 3 -> 1.5, 2 -> 1, 1 -> 0.5.
    static VisitGridSpec for_spacing(double spacing, double horizon = 12.0);
    // Throws ParameterError.
    void validate() const;
};

// Jittered visits clamped to [0, horizon], then pushed apart to a minimum
// gap of 1e-3 so times are strictly increasing.
std::vector<double> gen_visit_grid(const VisitGridSpec& spec, Rng& rng);

// Five-parameter logistic growth with subject random effects b ~ N(0, diag(re_sd^2)):
//   y0 = y0_mean + b1, yinf = yinf_mean + b2, tau = tau_mean + b3,
//   alpha = alpha_mean + b4, theta = theta_base + b4 / 3.
struct FplParams {
    double y0_mean = 10.0;
    double yinf_mean = 35.0;
    double tau_mean = 10.0;
    double alpha_mean = 5.0;
    double theta_base = 1.0;
    std::array<double, 4> re_sd{1.7320508075688772, 2.23606797749979, 1.4142135623730951, 1.4142135623730951};
    double noise_sd = 3.0;

    void validate() const;
};

// Noiseless curve value for random effects `b`. At t <= 0 the limit is taken
// analytically: y0 for alpha > 0, yinf for alpha < 0.
double fpl_curve(double t, const FplParams& params, const std::array<double, 4>& b);

Trajectory gen_5pl_subject(std::string subject_id, std::span<const double> times, const FplParams& params, Rng& rng);

// Two-component Karhunen-Loeve generator y = mu + Phi xi + eps, xi ~ N(0, Xi).
struct KlGenSpec {
    std::vector<double> grid;
    std::vector<double> mean;
    Eigen::MatrixXd components;  // grid.size() x 2, orthonormal on the grid
    Eigen::Matrix2d score_cov = Eigen::Matrix2d::Identity();
    double noise_sd = 3.0;

    // Throws ParameterError (including components not orthonormal to 1e-6).
    void validate() const;
};

// Components and scores rotated so the score covariance is diagonal with
// decreasing entries; the generated process is unchanged. Eigenfunction
// signs follow the positive-integral convention.
KlGenSpec diagonalize(const KlGenSpec& spec);

Trajectory gen_kl_subject(std::string subject_id, std::span<const double> times, const KlGenSpec& spec, Rng& rng);

// Mean and two leading components of an FPCA fitted to complete 5PL data
// (700 subjects, yearly visits), score covariance from the empirical
// covariance of the subject scores, then diagonalized.
KlGenSpec derive_kl_spec(std::uint64_t seed, const FplParams& params = {});

enum class DropoutMechanism { mcar, fixed_mar, threshold_mar, increasing_mar, threshold_mnar, increasing_mnar };

std::string to_string(DropoutMechanism m);
DropoutMechanism dropout_mechanism_from_string(std::string_view name);

// Dropout model scanned at visits j >= 2 (the first visit is never dropped):
//   mcar            Bernoulli(expit(intercept + slope * t_j))
//   fixed_mar       Y_{j-1} > threshold, deterministic
//   threshold_mar   Bernoulli(expit(intercept + slope * 1{Y_{j-1} > threshold}))
//   increasing_mar  Bernoulli(expit(intercept + slope * Y_{j-1}))
//   *_mnar          as the MAR variant with Y_j in place of Y_{j-1}
struct DropoutSpec {
    DropoutMechanism mechanism = DropoutMechanism::mcar;
    double target_rate = 0.3;
    double threshold = 0.0;
    double slope = 0.0;
    double intercept = 0.0;

    void validate() const;
};

// Default logistic slope per mechanism.
double default_slope(DropoutMechanism m);

// Index of the first removed visit (n when nothing fires). `uniforms[j]`
// drives the Bernoulli draw at visit j; entry 0 is unused.
std::size_t dropout_index(std::span<const double> times, std::span<const double> values, const DropoutSpec& spec,
                          std::span<const double> uniforms);

// Draws one uniform per visit, then truncates at dropout_index.
Trajectory apply_dropout(const Trajectory& traj, const DropoutSpec& spec, Rng& rng);

using SubjectGenerator = std::function<Trajectory(std::string subject_id, Rng& rng)>;

// Fixed subjects and dropout uniforms shared by every calibration step
// (common random numbers), so the achieved rate is a monotone step function
// of the calibrated parameter.
struct CalibrationPool {
    std::vector<Trajectory> subjects;
    std::vector<std::vector<double>> uniforms;
};

CalibrationPool make_calibration_pool(const SubjectGenerator& generator, std::size_t n_subjects, std::uint64_t seed);

// Fraction of pool subjects that drop out under `spec`.
double dropout_fraction(const CalibrationPool& pool, const DropoutSpec& spec);

// 75th percentile of all pooled marker values.
double default_threshold(const CalibrationPool& pool);

// Bisection on the intercept (on the threshold for fixed_mar) until the pool
// rate is within `tolerance` of the target. The initial bracket is widened up
// to tenfold; CalibrationError if it never brackets or the target falls in a
// jump of the step function.
DropoutSpec calibrate_dropout(DropoutSpec spec, const CalibrationPool& pool, double tolerance = 0.005);

enum class GeneratorKind { fpl, kl };

struct StudyDesign {
    GeneratorKind generator = GeneratorKind::fpl;
    std::size_t n_subjects = 700;
    VisitGridSpec visits;
    FplParams fpl;
    KlGenSpec kl;  // used when generator == kl
    std::optional<DropoutSpec> dropout;

    SubjectGenerator subject_generator() const;
};

struct StudyData {
    Dataset complete;
    Dataset observed;
};

// Subject i is generated from its own stream derive_seed(seed, {i}), so the
// dataset is reproducible and independent of evaluation order. Subject ids
// are `s0001`, `s0002`, ...
StudyData gen_study_dataset(const StudyDesign& design, std::uint64_t seed);

// Share of subjects whose observed trajectory is shorter than the complete one.
double dropped_fraction(const StudyData& data);

}  // namespace longfpca
