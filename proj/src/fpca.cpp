#include "longfpca/fpca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "longfpca/errors.hpp"
#include "longfpca/grid.hpp"
#include "longfpca/text_io.hpp"

namespace longfpca {

namespace {

constexpr double kOrthoTol = 1e-6;

void check_grid_size(int grid_size) {
    if (grid_size < 10) throw ParameterError("work grid needs at least 10 points, got " + std::to_string(grid_size));
}

std::vector<double> column(const Eigen::MatrixXd& m, Eigen::Index k) {
    std::vector<double> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index a = 0; a < m.rows(); ++a) out[a] = m(a, k);
    return out;
}

struct Smoothed {
    std::vector<double> values;
    double bandwidth;
};

// 1D smooth of scattered data on `grid`: binned when large, bandwidth by GCV
// unless given. GCV candidates are tried best first until one supports a
// nondegenerate fit at every grid point.
Smoothed smooth_scatter(std::span<const double> x, std::span<const double> y, std::span<const double> grid,
                        std::optional<double> bandwidth, const FpcaOptions& options) {
    std::vector<double> bx, by, bw;
    double within = 0.0;
    if (x.size() > options.binning_threshold) {
        auto binned = bin_1d(x, y, grid);
        bx = std::move(binned.x);
        by = std::move(binned.y);
        bw = std::move(binned.weight);
        within = binned.within_ss;
    } else {
        bx.assign(x.begin(), x.end());
        by.assign(y.begin(), y.end());
    }
    if (bandwidth) return {smooth_1d(bx, by, bw, *bandwidth, grid, options.kernel), *bandwidth};

    const auto candidates = default_bandwidth_candidates(grid.back() - grid.front(), static_cast<int>(grid.size()));
    for (double h : rank_bandwidths_gcv(bx, by, bw, candidates, options.kernel, within)) {
        try {
            return {smooth_1d(bx, by, bw, h, grid, options.kernel), h};
        } catch (const BandwidthTooSmallError&) {
        }
    }
    throw NoValidBandwidthError("no GCV candidate bandwidth gives a nondegenerate fit on the work grid");
}

}  // namespace

// ---------------------------------------------------------------------------
// FpcaModel

FpcaModel::FpcaModel(std::vector<double> work_grid, std::vector<double> mean, std::vector<double> eigenvalues,
                     Eigen::MatrixXd eigenfunctions, double sigma2, double fve)
    : work_grid_(std::move(work_grid)),
      mean_(std::move(mean)),
      eigenvalues_(std::move(eigenvalues)),
      eigenfunctions_(std::move(eigenfunctions)),
      sigma2_(sigma2),
      fve_(fve) {
    const auto m = work_grid_.size();
    if (m < 2 || !std::is_sorted(work_grid_.begin(), work_grid_.end()) ||
        std::adjacent_find(work_grid_.begin(), work_grid_.end()) != work_grid_.end()) {
        throw InvariantError("work grid must be strictly increasing with at least 2 points");
    }
    if (mean_.size() != m) throw InvariantError("mean length differs from the work grid");
    if (eigenvalues_.empty()) throw InvariantError("model needs at least one component");
    if (static_cast<std::size_t>(eigenfunctions_.rows()) != m ||
        static_cast<std::size_t>(eigenfunctions_.cols()) != eigenvalues_.size()) {
        throw InvariantError("eigenfunction matrix must be grid size x number of eigenvalues");
    }
    for (std::size_t k = 0; k < eigenvalues_.size(); ++k) {
        if (!(eigenvalues_[k] > 0.0) || !std::isfinite(eigenvalues_[k])) {
            throw InvariantError("eigenvalues must be positive and finite");
        }
        if (k > 0 && eigenvalues_[k] > eigenvalues_[k - 1]) throw InvariantError("eigenvalues must be nonincreasing");
    }
    if (!(sigma2_ >= 0.0) || !std::isfinite(sigma2_)) throw InvariantError("sigma2 must be finite and >= 0");
    if (!(fve_ > 0.0 && fve_ <= 1.0 + 1e-12)) throw InvariantError("fve must lie in (0, 1]");
    for (std::size_t j = 0; j < eigenvalues_.size(); ++j) {
        const auto fj = column(eigenfunctions_, static_cast<Eigen::Index>(j));
        for (std::size_t k = j; k < eigenvalues_.size(); ++k) {
            const auto fk = column(eigenfunctions_, static_cast<Eigen::Index>(k));
            const double ip = inner_product(work_grid_, fj, fk);
            if (std::abs(ip - (j == k ? 1.0 : 0.0)) > kOrthoTol) {
                throw InvariantError("eigenfunctions are not orthonormal on the work grid");
            }
        }
    }
}

std::vector<double> FpcaModel::eigenfunction(std::size_t k) const {
    return column(eigenfunctions_, static_cast<Eigen::Index>(k));
}

double FpcaModel::mean_at(double t) const { return interpolate_linear(work_grid_, mean_, t); }

Eigen::MatrixXd FpcaModel::eigenfunctions_at(std::span<const double> times) const {
    const auto k = static_cast<Eigen::Index>(score_dim());
    Eigen::MatrixXd phi(static_cast<Eigen::Index>(times.size()), k);
    for (Eigen::Index c = 0; c < k; ++c) {
        const auto f = column(eigenfunctions_, c);
        for (std::size_t r = 0; r < times.size(); ++r) phi(static_cast<Eigen::Index>(r), c) = interpolate_linear(work_grid_, f, times[r]);
    }
    return phi;
}

FpcaModel FpcaFit::model(std::size_t components) const {
    if (components == 0 || components > spectrum.values.size()) {
        throw DegenerateModelError("requested " + std::to_string(components) + " components but " +
                                   std::to_string(spectrum.values.size()) + " positive eigenvalues are available");
    }
    const double total = std::accumulate(spectrum.values.begin(), spectrum.values.end(), 0.0);
    const double kept = std::accumulate(spectrum.values.begin(), spectrum.values.begin() + components, 0.0);
    return FpcaModel(mean.grid, mean.values,
                     std::vector<double>(spectrum.values.begin(), spectrum.values.begin() + components),
                     spectrum.functions.leftCols(static_cast<Eigen::Index>(components)), covariance.sigma2,
                     std::min(1.0, kept / total));
}

FpcaModel FpcaFit::model_for_fve(double target) const { return model(select_k_fve(spectrum.values, target)); }

// ---------------------------------------------------------------------------
// Estimation

MeanEstimate estimate_mean(const Dataset& ds, const FpcaOptions& options) {
    check_grid_size(options.grid_size);
    auto grid = equispaced_grid(ds.window(), options.grid_size);
    const auto x = ds.pooled_times();
    const auto y = ds.pooled_values();
    auto smoothed = smooth_scatter(x, y, grid, options.mean_bandwidth, options);
    return {std::move(grid), std::move(smoothed.values), smoothed.bandwidth};
}

CovarianceEstimate estimate_covariance(const Dataset& ds, const MeanEstimate& mean, const FpcaOptions& options) {
    const auto& grid = mean.grid;
    std::vector<double> s, t, z;        // off-diagonal raw covariances
    std::vector<double> dt, dz;         // diagonal raw terms
    std::size_t informative = 0;
    for (const auto& tr : ds.trajectories()) {
        std::vector<double> resid(tr.size());
        for (std::size_t j = 0; j < tr.size(); ++j) {
            resid[j] = tr.values()[j] - interpolate_linear(grid, mean.values, tr.times()[j]);
            dt.push_back(tr.times()[j]);
            dz.push_back(resid[j] * resid[j]);
        }
        if (tr.size() >= 2) ++informative;
        for (std::size_t j = 0; j < tr.size(); ++j) {
            for (std::size_t l = 0; l < tr.size(); ++l) {
                if (j == l) continue;
                s.push_back(tr.times()[j]);
                t.push_back(tr.times()[l]);
                z.push_back(resid[j] * resid[l]);
            }
        }
    }
    if (informative == 0 || s.size() < 3) {
        throw CovarianceUnidentifiableError("covariance needs subjects with at least 2 observations");
    }

    std::vector<double> bs, bt, bz, bw;
    double within = 0.0;
    if (s.size() > options.binning_threshold) {
        auto binned = bin_2d(s, t, z, grid);
        bs = std::move(binned.s);
        bt = std::move(binned.t);
        bz = std::move(binned.z);
        bw = std::move(binned.weight);
        within = binned.within_ss;
    } else {
        bs = s;
        bt = t;
        bz = z;
    }

    CovarianceEstimate out;
    bool done = false;
    if (options.covariance_bandwidth) {
        const double h = *options.covariance_bandwidth;
        out.surface = smooth_2d(bs, bt, bz, bw, {h, h}, grid, options.kernel);
        out.bandwidth = h;
        done = true;
    } else {
        const auto candidates = default_bandwidth_candidates(grid.back() - grid.front(), static_cast<int>(grid.size()));
        for (double h : rank_bandwidths_gcv_2d(bs, bt, bz, bw, candidates, options.kernel, within)) {
            try {
                out.surface = smooth_2d(bs, bt, bz, bw, {h, h}, grid, options.kernel);
                out.bandwidth = h;
                done = true;
                break;
            } catch (const BandwidthTooSmallError&) {
            }
        }
    }
    if (!done) throw NoValidBandwidthError("no GCV candidate bandwidth gives a nondegenerate covariance surface");

    const auto variance = smooth_scatter(dt, dz, grid, std::nullopt, options);
    out.variance_bandwidth = variance.bandwidth;

    const double lo = grid.front();
    const double range = grid.back() - lo;
    const double margin = 0.5 * (1.0 - options.sigma2_central_fraction) * range;
    double total = 0.0;
    int count = 0;
    for (std::size_t a = 0; a < grid.size(); ++a) {
        if (grid[a] < lo + margin - 1e-12 || grid[a] > grid.back() - margin + 1e-12) continue;
        total += variance.values[a] - out.surface(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a));
        ++count;
    }
    out.sigma2 = count > 0 ? std::max(0.0, total / count) : 0.0;
    return out;
}

Eigenstructure eigendecompose(const Eigen::MatrixXd& surface, std::span<const double> grid) {
    const auto m = static_cast<Eigen::Index>(grid.size());
    if (surface.rows() != m || surface.cols() != m) throw ContractViolation("surface does not match the grid size");
    const double scale = std::max(1.0, surface.cwiseAbs().maxCoeff());
    if ((surface - surface.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
        throw ContractViolation("covariance surface is not symmetric");
    }
    const auto w = trapezoid_weights(grid);
    Eigen::VectorXd root(m);
    for (Eigen::Index a = 0; a < m; ++a) root(a) = std::sqrt(w[a]);
    const Eigen::MatrixXd op = root.asDiagonal() * (0.5 * (surface + surface.transpose())) * root.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(op);
    if (solver.info() != Eigen::Success) throw ContractViolation("eigen solver failed");

    Eigenstructure out;
    const auto& evals = solver.eigenvalues();  // ascending
    const double largest = evals(m - 1);
    if (!(largest > 0.0)) {
        out.functions.resize(m, 0);
        return out;
    }
    const double floor = 1e-10 * largest;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index k = m - 1; k >= 0 && evals(k) > floor; --k) keep.push_back(k);

    out.functions.resize(m, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) {
        out.values.push_back(evals(keep[c]));
        Eigen::VectorXd f = solver.eigenvectors().col(keep[c]).cwiseQuotient(root);
        std::vector<double> fv(f.data(), f.data() + m);
        const double integral = trapezoid(grid, fv);
        double sign = integral > 0.0 ? 1.0 : -1.0;
        if (std::abs(integral) < 1e-8) {
            Eigen::Index at = 0;
            f.cwiseAbs().maxCoeff(&at);
            sign = f(at) > 0.0 ? 1.0 : -1.0;
        }
        out.functions.col(static_cast<Eigen::Index>(c)) = sign * f;
    }
    return out;
}

std::size_t select_k_fve(std::span<const double> eigenvalues, double target) {
    if (eigenvalues.empty()) throw ParameterError("select_k_fve needs at least one eigenvalue");
    if (!(target > 0.0 && target <= 1.0)) throw ParameterError("fve target must lie in (0, 1]");
    const double total = std::accumulate(eigenvalues.begin(), eigenvalues.end(), 0.0);
    double cumulative = 0.0;
    for (std::size_t k = 0; k < eigenvalues.size(); ++k) {
        cumulative += eigenvalues[k];
        if (cumulative >= target * total * (1.0 - 1e-12)) return k + 1;
    }
    return eigenvalues.size();
}

Eigen::VectorXd pace_conditional_mean(const Eigen::MatrixXd& phi, std::span<const double> eigenvalues,
                                      double sigma2, const Eigen::VectorXd& centered) {
    const Eigen::Index n = phi.rows();
    const auto k = static_cast<Eigen::Index>(eigenvalues.size());
    if (phi.cols() != k || centered.size() != n) throw ParameterError("PACE plug-ins have inconsistent sizes");
    if (n == 0) throw SizeError("PACE scores need at least one observation");
    Eigen::VectorXd lambda(k);
    for (Eigen::Index c = 0; c < k; ++c) lambda(c) = eigenvalues[c];

    Eigen::MatrixXd cov = phi * lambda.asDiagonal() * phi.transpose();
    cov.diagonal().array() += sigma2;
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (sigma2 == 0.0 && (llt.info() != Eigen::Success || llt.rcond() < 1e-12)) {
        cov.diagonal().array() += 1e-8 * cov.trace() / static_cast<double>(n);
        llt.compute(cov);
    }
    if (llt.info() != Eigen::Success) throw ContractViolation("subject covariance is not positive definite");
    return lambda.asDiagonal() * (phi.transpose() * llt.solve(centered));
}

std::vector<double> pace_scores(const FpcaModel& model, const Trajectory& traj) {
    if (traj.empty()) throw SizeError("PACE scores need at least one observation for subject " + traj.subject_id());
    const auto phi = model.eigenfunctions_at(traj.times());
    Eigen::VectorXd centered(static_cast<Eigen::Index>(traj.size()));
    for (std::size_t j = 0; j < traj.size(); ++j) centered(static_cast<Eigen::Index>(j)) = traj.values()[j] - model.mean_at(traj.times()[j]);
    const Eigen::VectorXd xi = pace_conditional_mean(phi, model.eigenvalues(), model.sigma2(), centered);
    return {xi.data(), xi.data() + xi.size()};
}

FpcaFit fit_fpca_spectrum(const Dataset& ds, const FpcaOptions& options) {
    if (ds.size() < 2) throw DegenerateModelError("FPCA needs at least 2 subjects");
    FpcaFit fit;
    fit.mean = estimate_mean(ds, options);
    fit.covariance = estimate_covariance(ds, fit.mean, options);
    fit.spectrum = eigendecompose(fit.covariance.surface, fit.mean.grid);
    if (fit.spectrum.values.empty()) throw DegenerateModelError("estimated covariance has no positive eigenvalue");
    return fit;
}

FpcaModel fit_fpca(const Dataset& ds, const FpcaOptions& options) {
    const auto fit = fit_fpca_spectrum(ds, options);
    if (options.fixed_components) return fit.model(*options.fixed_components);
    return fit.model_for_fve(options.target_fve);
}

std::vector<double> predict_from_scores(const FpcaModel& model, std::span<const double> scores,
                                        std::span<const double> eval_times) {
    if (scores.size() != model.score_dim()) throw ParameterError("score dimension differs from the model");
    const Eigen::MatrixXd phi = model.eigenfunctions_at(eval_times);
    const Eigen::Map<const Eigen::VectorXd> xi(scores.data(), static_cast<Eigen::Index>(scores.size()));
    const Eigen::VectorXd deviation = phi * xi;
    std::vector<double> out;
    out.reserve(eval_times.size());
    for (std::size_t r = 0; r < eval_times.size(); ++r) {
        out.push_back(model.mean_at(eval_times[r]) + deviation(static_cast<Eigen::Index>(r)));
    }
    return out;
}

std::vector<double> predict_trajectory(const FpcaModel& model, const Trajectory& traj,
                                       std::span<const double> eval_times) {
    for (double t : eval_times) model.mean_at(t);  // extrapolation check before scoring
    if (eval_times.empty()) return {};
    const auto scores = pace_scores(model, traj);
    return predict_from_scores(model, scores, eval_times);
}

MeanBands bootstrap_mean_ci(const Dataset& ds, std::size_t n_boot, double level, std::uint64_t seed,
                            const FpcaOptions& options) {
    if (n_boot < 2) throw ParameterError("bootstrap needs at least 2 resamples");
    if (!(level > 0.0 && level < 1.0)) throw ParameterError("confidence level must lie in (0, 1)");
    const auto full = estimate_mean(ds, options);
    const auto& grid = full.grid;
    FpcaOptions fixed = options;
    fixed.mean_bandwidth = full.bandwidth;

    const std::size_t n = ds.size();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::vector<double>> draws(grid.size(), std::vector<double>(n_boot));
    std::vector<double> x, y;
    for (std::size_t b = 0; b < n_boot; ++b) {
        x.clear();
        y.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const auto& tr = ds[pick(rng)];
            x.insert(x.end(), tr.times().begin(), tr.times().end());
            y.insert(y.end(), tr.values().begin(), tr.values().end());
        }
        const auto est = smooth_scatter(x, y, grid, fixed.mean_bandwidth, fixed);
        for (std::size_t a = 0; a < grid.size(); ++a) draws[a][b] = est.values[a];
    }
    MeanBands bands{grid, full.values, {}, {}, full.bandwidth};
    for (auto& column_draws : draws) {
        std::sort(column_draws.begin(), column_draws.end());
        bands.lower.push_back(quantile_sorted(column_draws, 0.5 * (1.0 - level)));
        bands.upper.push_back(quantile_sorted(column_draws, 0.5 * (1.0 + level)));
    }
    return bands;
}

// ---------------------------------------------------------------------------
// Serialization

std::string serialize(const FpcaModel& model) {
    text::KeyValueDocument doc("longfpca-fpca", 1);
    doc.add("grid_size", std::to_string(model.work_grid().size()));
    doc.add("score_dim", std::to_string(model.score_dim()));
    doc.add("sigma2", model.sigma2());
    doc.add("fve", model.fve());
    doc.add("grid", model.work_grid());
    doc.add("mean", model.mean());
    doc.add("eigenvalues", model.eigenvalues());
    for (std::size_t k = 0; k < model.score_dim(); ++k) {
        doc.add("eigenfunction." + std::to_string(k + 1), model.eigenfunction(k));
    }
    return doc.str();
}

FpcaModel deserialize_fpca(std::string_view content) {
    const auto doc = text::KeyValueDocument::parse(content, "longfpca-fpca", 1);
    const auto m = doc.get_int("grid_size");
    const auto k = doc.get_int("score_dim");
    auto grid = doc.get_list("grid");
    auto mean = doc.get_list("mean");
    auto eigenvalues = doc.get_list("eigenvalues");
    if (static_cast<long long>(grid.size()) != m || static_cast<long long>(mean.size()) != m ||
        static_cast<long long>(eigenvalues.size()) != k) {
        throw FormatError("model file lengths disagree with grid_size/score_dim");
    }
    Eigen::MatrixXd functions(m, k);
    for (long long c = 0; c < k; ++c) {
        const auto f = doc.get_list("eigenfunction." + std::to_string(c + 1));
        if (static_cast<long long>(f.size()) != m) throw FormatError("eigenfunction length differs from grid_size");
        for (long long a = 0; a < m; ++a) functions(a, c) = f[a];
    }
    return FpcaModel(std::move(grid), std::move(mean), std::move(eigenvalues), std::move(functions),
                     doc.get_double("sigma2"), doc.get_double("fve"));
}

}  // namespace longfpca
