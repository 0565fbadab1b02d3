#include "longfpca/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "longfpca/errors.hpp"
#include "longfpca/fpca.hpp"
#include "longfpca/grid.hpp"
#include "longfpca/text_io.hpp"

namespace longfpca {

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::vector<std::uint32_t> words{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32)};
    for (auto p : path) {
        words.push_back(static_cast<std::uint32_t>(p));
        words.push_back(static_cast<std::uint32_t>(p >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// ---------------------------------------------------------------------------
// Visit grids

VisitGridSpec VisitGridSpec::for_spacing(double spacing, double horizon) {
    VisitGridSpec spec{spacing, spacing / 2.0, horizon};
    spec.validate();
    return spec;
}

void VisitGridSpec::validate() const {
    if (!(spacing > 0.0) || !std::isfinite(spacing)) throw ParameterError("visit spacing must be positive");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ParameterError("visit horizon must be positive");
    if (!(jitter_half_width >= 0.0) || jitter_half_width > spacing / 2.0 + 1e-12) {
        throw ParameterError("visit jitter half-width must lie in [0, spacing / 2]");
    }
}

std::vector<double> gen_visit_grid(const VisitGridSpec& spec, Rng& rng) {
    spec.validate();
    constexpr double min_gap = 1e-3;
    const auto n_visits = static_cast<std::size_t>(std::floor(spec.horizon / spec.spacing + 1e-9)) + 1;
    std::uniform_real_distribution<double> jitter(-spec.jitter_half_width, spec.jitter_half_width);
    std::vector<double> times(n_visits);
    for (std::size_t j = 0; j < n_visits; ++j) {
        const double offset = spec.jitter_half_width > 0.0 ? jitter(rng) : 0.0;
        times[j] = std::clamp(static_cast<double>(j) * spec.spacing + offset, 0.0, spec.horizon);
    }
    for (std::size_t j = 1; j < n_visits; ++j) times[j] = std::max(times[j], times[j - 1] + min_gap);
    if (times.back() > spec.horizon) {
        times.back() = spec.horizon;
        for (std::size_t j = n_visits - 1; j-- > 0;) times[j] = std::min(times[j], times[j + 1] - min_gap);
    }
    return times;
}

// ---------------------------------------------------------------------------
// Five-parameter logistic generator

void FplParams::validate() const {
    for (double sd : re_sd) {
        if (!(sd >= 0.0)) throw ParameterError("random-effect standard deviations must be nonnegative");
    }
    if (!(noise_sd >= 0.0)) throw ParameterError("noise standard deviation must be nonnegative");
    if (!(tau_mean > 0.0)) throw ParameterError("tau mean must be positive");
}

double fpl_curve(double t, const FplParams& params, const std::array<double, 4>& b) {
    const double y0 = params.y0_mean + b[0];
    const double yinf = params.yinf_mean + b[1];
    const double tau = std::max(params.tau_mean + b[2], std::numeric_limits<double>::min());
    const double alpha = params.alpha_mean + b[3];
    const double theta = params.theta_base + b[3] / 3.0;
    if (t <= 0.0) {
        if (alpha > 0.0) return y0;
        if (alpha < 0.0) return yinf;
        return yinf + (y0 - yinf) / std::pow(2.0, theta);
    }
    const double denom = std::pow(1.0 + std::exp(alpha * (std::log(t) - std::log(tau))), theta);
    if (!std::isfinite(denom)) return theta > 0.0 ? yinf : (y0 - yinf) * denom;
    return yinf + (y0 - yinf) / denom;
}

Trajectory gen_5pl_subject(std::string subject_id, std::span<const double> times, const FplParams& params, Rng& rng) {
    params.validate();
    std::normal_distribution<double> normal;
    std::array<double, 4> b{};
    for (std::size_t k = 0; k < 4; ++k) b[k] = params.re_sd[k] * normal(rng);
    std::vector<double> values(times.size());
    for (std::size_t j = 0; j < times.size(); ++j) {
        if (times[j] < 0.0) throw ParameterError("5PL times must be nonnegative");
        values[j] = fpl_curve(times[j], params, b) + params.noise_sd * normal(rng);
    }
    return Trajectory(std::move(subject_id), {times.begin(), times.end()}, std::move(values));
}

// ---------------------------------------------------------------------------
// Karhunen-Loeve generator

void KlGenSpec::validate() const {
    const auto m = static_cast<Eigen::Index>(grid.size());
    if (m < 2) throw ParameterError("KL generator grid needs at least 2 points");
    if (mean.size() != grid.size()) throw ParameterError("KL mean length differs from the grid");
    if (components.rows() != m || components.cols() != 2) throw ParameterError("KL components must be grid x 2");
    for (Eigen::Index a = 0; a < 2; ++a) {
        for (Eigen::Index c = 0; c < 2; ++c) {
            std::vector<double> fa(components.col(a).data(), components.col(a).data() + m);
            std::vector<double> fc(components.col(c).data(), components.col(c).data() + m);
            const double ip = inner_product(grid, fa, fc);
            if (std::abs(ip - (a == c ? 1.0 : 0.0)) > 1e-6) throw ParameterError("KL components are not orthonormal");
        }
    }
    if ((score_cov - score_cov.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        throw ParameterError("KL score covariance is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(score_cov);
    if (eig.eigenvalues()(0) < -1e-12) throw ParameterError("KL score covariance is not positive semidefinite");
    if (!(noise_sd >= 0.0)) throw ParameterError("KL noise standard deviation must be nonnegative");
}

KlGenSpec diagonalize(const KlGenSpec& spec) {
    spec.validate();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(spec.score_cov);
    Eigen::Matrix2d q;
    q.col(0) = eig.eigenvectors().col(1);
    q.col(1) = eig.eigenvectors().col(0);
    KlGenSpec out = spec;
    out.components = spec.components * q;
    out.score_cov = Eigen::Vector2d(std::max(eig.eigenvalues()(1), 0.0), std::max(eig.eigenvalues()(0), 0.0)).asDiagonal();
    for (Eigen::Index c = 0; c < 2; ++c) {
        std::vector<double> f(out.components.col(c).data(), out.components.col(c).data() + out.components.rows());
        if (trapezoid(out.grid, f) < 0.0) out.components.col(c) *= -1.0;
    }
    return out;
}

Trajectory gen_kl_subject(std::string subject_id, std::span<const double> times, const KlGenSpec& spec, Rng& rng) {
    std::normal_distribution<double> normal;
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(spec.score_cov);
    const Eigen::Matrix2d root =
        eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
    const Eigen::Vector2d z(normal(rng), normal(rng));
    const Eigen::Vector2d xi = root * z;
    const auto m = static_cast<std::size_t>(spec.components.rows());
    std::span<const double> phi1(spec.components.col(0).data(), m);
    std::span<const double> phi2(spec.components.col(1).data(), m);
    std::vector<double> values(times.size());
    for (std::size_t j = 0; j < times.size(); ++j) {
        const double t = times[j];
        values[j] = interpolate_linear(spec.grid, spec.mean, t) + xi(0) * interpolate_linear(spec.grid, phi1, t) +
                    xi(1) * interpolate_linear(spec.grid, phi2, t) + spec.noise_sd * normal(rng);
    }
    return Trajectory(std::move(subject_id), {times.begin(), times.end()}, std::move(values));
}

namespace {

std::string subject_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%04zu", index + 1);
    return buf;
}

}  // namespace

KlGenSpec derive_kl_spec(std::uint64_t seed, const FplParams& params) {
    StudyDesign design;
    design.generator = GeneratorKind::fpl;
    design.n_subjects = 700;
    design.visits = VisitGridSpec::for_spacing(1.0);
    design.fpl = params;
    const auto data = gen_study_dataset(design, seed);

    FpcaOptions options;
    options.fixed_components = 2;
    const FpcaModel model = fit_fpca(data.complete, options);

    Eigen::MatrixXd scores(static_cast<Eigen::Index>(data.complete.size()), 2);
    for (std::size_t i = 0; i < data.complete.size(); ++i) {
        const auto xi = pace_scores(model, data.complete[i]);
        scores(static_cast<Eigen::Index>(i), 0) = xi[0];
        scores(static_cast<Eigen::Index>(i), 1) = xi[1];
    }
    const Eigen::MatrixXd centered = scores.rowwise() - scores.colwise().mean();
    KlGenSpec spec;
    spec.grid.assign(model.work_grid().begin(), model.work_grid().end());
    spec.mean.assign(model.mean().begin(), model.mean().end());
    spec.components = model.eigenfunctions();
    spec.score_cov = centered.transpose() * centered / static_cast<double>(scores.rows() - 1);
    spec.noise_sd = params.noise_sd;
    return diagonalize(spec);
}

// ---------------------------------------------------------------------------
// Dropout

std::string to_string(DropoutMechanism m) {
    switch (m) {
        case DropoutMechanism::mcar: return "mcar";
        case DropoutMechanism::fixed_mar: return "fixed_mar";
        case DropoutMechanism::threshold_mar: return "threshold_mar";
        case DropoutMechanism::increasing_mar: return "increasing_mar";
        case DropoutMechanism::threshold_mnar: return "threshold_mnar";
        case DropoutMechanism::increasing_mnar: return "increasing_mnar";
    }
    return "unknown";
}

DropoutMechanism dropout_mechanism_from_string(std::string_view name) {
    for (auto m : {DropoutMechanism::mcar, DropoutMechanism::fixed_mar, DropoutMechanism::threshold_mar,
                   DropoutMechanism::increasing_mar, DropoutMechanism::threshold_mnar,
                   DropoutMechanism::increasing_mnar}) {
        if (name == to_string(m)) return m;
    }
    throw ParameterError("unknown dropout mechanism `" + std::string(name) +
                         "` (expected mcar, fixed_mar, threshold_mar, increasing_mar, threshold_mnar or "
                         "increasing_mnar)");
}

void DropoutSpec::validate() const {
    if (!(target_rate > 0.0 && target_rate < 1.0)) throw ParameterError("dropout target rate must lie in (0, 1)");
    if (!std::isfinite(slope)) throw ParameterError("dropout slope must be finite");
    if (!std::isfinite(threshold)) throw ParameterError("dropout threshold must be finite");
    if (std::isnan(intercept)) throw ParameterError("dropout intercept must not be NaN");
}

double default_slope(DropoutMechanism m) {
    switch (m) {
        case DropoutMechanism::mcar: return 0.0;
        case DropoutMechanism::fixed_mar: return 0.0;
        case DropoutMechanism::threshold_mar:
        case DropoutMechanism::threshold_mnar: return 3.0;
        case DropoutMechanism::increasing_mar:
        case DropoutMechanism::increasing_mnar: return 0.25;
    }
    return 0.0;
}

std::size_t dropout_index(std::span<const double> times, std::span<const double> values, const DropoutSpec& spec,
                          std::span<const double> uniforms) {
    const std::size_t n = values.size();
    if (times.size() != n || uniforms.size() < n) throw ParameterError("dropout inputs have inconsistent sizes");
    const auto expit = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    for (std::size_t j = 1; j < n; ++j) {
        const double previous = values[j - 1];
        const double current = values[j];
        bool fires = false;
        switch (spec.mechanism) {
            case DropoutMechanism::fixed_mar: fires = previous > spec.threshold; break;
            case DropoutMechanism::mcar: fires = uniforms[j] < expit(spec.intercept + spec.slope * times[j]); break;
            case DropoutMechanism::threshold_mar:
                fires = uniforms[j] < expit(spec.intercept + spec.slope * (previous > spec.threshold ? 1.0 : 0.0));
                break;
            case DropoutMechanism::increasing_mar:
                fires = uniforms[j] < expit(spec.intercept + spec.slope * previous);
                break;
            case DropoutMechanism::threshold_mnar:
                fires = uniforms[j] < expit(spec.intercept + spec.slope * (current > spec.threshold ? 1.0 : 0.0));
                break;
            case DropoutMechanism::increasing_mnar:
                fires = uniforms[j] < expit(spec.intercept + spec.slope * current);
                break;
        }
        if (fires) return j;
    }
    return n;
}

Trajectory apply_dropout(const Trajectory& traj, const DropoutSpec& spec, Rng& rng) {
    if (traj.empty()) throw SizeError("dropout needs at least one observation");
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::vector<double> u(traj.size());
    for (auto& x : u) x = uniform(rng);
    return traj.prefix(dropout_index(traj.times(), traj.values(), spec, u));
}

CalibrationPool make_calibration_pool(const SubjectGenerator& generator, std::size_t n_subjects, std::uint64_t seed) {
    if (n_subjects == 0) throw ParameterError("calibration pool must be nonempty");
    CalibrationPool pool;
    pool.subjects.reserve(n_subjects);
    pool.uniforms.reserve(n_subjects);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (std::size_t i = 0; i < n_subjects; ++i) {
        Rng rng(derive_seed(seed, {i}));
        pool.subjects.push_back(generator(subject_name(i), rng));
        std::vector<double> u(pool.subjects.back().size());
        for (auto& x : u) x = uniform(rng);
        pool.uniforms.push_back(std::move(u));
    }
    return pool;
}

double dropout_fraction(const CalibrationPool& pool, const DropoutSpec& spec) {
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < pool.subjects.size(); ++i) {
        const auto& s = pool.subjects[i];
        if (dropout_index(s.times(), s.values(), spec, pool.uniforms[i]) < s.size()) ++dropped;
    }
    return static_cast<double>(dropped) / static_cast<double>(pool.subjects.size());
}

double default_threshold(const CalibrationPool& pool) {
    std::vector<double> all;
    for (const auto& s : pool.subjects) all.insert(all.end(), s.values().begin(), s.values().end());
    if (all.empty()) throw ParameterError("calibration pool holds no values");
    return quantile(std::move(all), 0.75);
}

DropoutSpec calibrate_dropout(DropoutSpec spec, const CalibrationPool& pool, double tolerance) {
    spec.validate();
    const double target = spec.target_rate;
    const bool on_threshold = spec.mechanism == DropoutMechanism::fixed_mar;
    double& param = on_threshold ? spec.threshold : spec.intercept;
    // The rate increases with the intercept and decreases with the threshold.
    const auto excess = [&](double value) {
        param = value;
        const double rate = dropout_fraction(pool, spec);
        return on_threshold ? target - rate : rate - target;
    };

    double lo = -10.0;
    double hi = 10.0;
    if (on_threshold) {
        double vmin = std::numeric_limits<double>::infinity();
        double vmax = -vmin;
        for (const auto& s : pool.subjects) {
            for (double v : s.values()) {
                vmin = std::min(vmin, v);
                vmax = std::max(vmax, v);
            }
        }
        const double centre = 0.5 * (vmin + vmax);
        const double half = 0.5 * (vmax - vmin) + 1.0;
        lo = centre - half;
        hi = centre + half;
    }
    double f_lo = excess(lo);
    double f_hi = excess(hi);
    const double centre = 0.5 * (lo + hi);
    const double half = 0.5 * (hi - lo);
    for (double widen = 2.0; (f_lo > 0.0 || f_hi < 0.0) && widen <= 10.0; widen += 1.0) {
        lo = centre - widen * half;
        hi = centre + widen * half;
        f_lo = excess(lo);
        f_hi = excess(hi);
    }
    if (f_lo > 0.0 || f_hi < 0.0) {
        throw CalibrationError("cannot bracket dropout rate " + text::format_double(target) + " for " +
                               to_string(spec.mechanism));
    }
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        const double f_mid = excess(mid);
        if (std::abs(f_mid) < tolerance) {
            param = mid;
            return spec;
        }
        if (f_mid < 0.0) lo = mid;
        else hi = mid;
        if (hi - lo <= 1e-12 * std::max(1.0, std::abs(mid))) break;
    }
    throw CalibrationError("dropout rate " + text::format_double(target) + " for " + to_string(spec.mechanism) +
                           " falls in a jump of the calibration pool");
}

// ---------------------------------------------------------------------------
// Study datasets

SubjectGenerator StudyDesign::subject_generator() const {
    const VisitGridSpec v = visits;
    if (generator == GeneratorKind::fpl) {
        const FplParams p = fpl;
        return [v, p](std::string id, Rng& rng) {
            const auto times = gen_visit_grid(v, rng);
            return gen_5pl_subject(std::move(id), times, p, rng);
        };
    }
    const KlGenSpec k = kl;
    return [v, k](std::string id, Rng& rng) {
        const auto times = gen_visit_grid(v, rng);
        return gen_kl_subject(std::move(id), times, k, rng);
    };
}

StudyData gen_study_dataset(const StudyDesign& design, std::uint64_t seed) {
    if (design.n_subjects == 0) throw ParameterError("study needs at least one subject");
    design.visits.validate();
    if (design.generator == GeneratorKind::kl) design.kl.validate();
    if (design.dropout) design.dropout->validate();
    const auto generator = design.subject_generator();
    std::vector<Trajectory> complete;
    std::vector<Trajectory> observed;
    complete.reserve(design.n_subjects);
    observed.reserve(design.n_subjects);
    for (std::size_t i = 0; i < design.n_subjects; ++i) {
        Rng rng(derive_seed(seed, {i}));
        complete.push_back(generator(subject_name(i), rng));
        observed.push_back(design.dropout ? apply_dropout(complete.back(), *design.dropout, rng) : complete.back());
    }
    const Window window{0.0, design.visits.horizon};
    return {Dataset(std::move(complete), window), Dataset(std::move(observed), window)};
}

double dropped_fraction(const StudyData& data) {
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < data.complete.size(); ++i) {
        if (data.observed[i].size() < data.complete[i].size()) ++dropped;
    }
    return static_cast<double>(dropped) / static_cast<double>(data.complete.size());
}

}  // namespace longfpca
