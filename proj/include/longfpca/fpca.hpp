#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "longfpca/data_model.hpp"
#include "longfpca/kernel_smoothing.hpp"

namespace longfpca {

struct FpcaOptions {
    int grid_size = 51;
    Kernel kernel = Kernel::gaussian;
    // GCV-selected when absent.
    std::optional<double> mean_bandwidth;
    std::optional<double> covariance_bandwidth;
    double target_fve = 0.99;
    // Overrides target_fve when set.
    std::optional<std::size_t> fixed_components;
    // Pooled inputs larger than this are binned on the work grid before
    // smoothing (bin positions are member means, so affine data is still
    // reproduced exactly).
    std::size_t binning_threshold = 3000;
    // Part of the window, centered, over which sigma^2 is averaged.
    double sigma2_central_fraction = 0.5;
};

struct MeanEstimate {
    std::vector<double> grid;
    std::vector<double> values;
    double bandwidth = 0.0;
};

struct CovarianceEstimate {
    Eigen::MatrixXd surface;  // on grid x grid, exactly symmetric
    double sigma2 = 0.0;
    double bandwidth = 0.0;
    double variance_bandwidth = 0.0;
};

// Eigenpairs of a covariance operator tabulated on a grid. Eigenfunctions
// are the columns of `functions`, unit L2 norm under trapezoid quadrature.
struct Eigenstructure {
    std::vector<double> values;
    Eigen::MatrixXd functions;
};

// Fitted sparse FPCA: mean, leading eigenpairs, measurement-error variance.
// Construction validates ordering, positivity and orthonormality.
class FpcaModel {
public:
    FpcaModel(std::vector<double> work_grid, std::vector<double> mean, std::vector<double> eigenvalues,
              Eigen::MatrixXd eigenfunctions, double sigma2, double fve);

    std::span<const double> work_grid() const { return work_grid_; }
    std::span<const double> mean() const { return mean_; }
    std::span<const double> eigenvalues() const { return eigenvalues_; }
    const Eigen::MatrixXd& eigenfunctions() const { return eigenfunctions_; }
    std::vector<double> eigenfunction(std::size_t k) const;
    double sigma2() const { return sigma2_; }
    double fve() const { return fve_; }
    std::size_t score_dim() const { return eigenvalues_.size(); }
    Window window() const { return {work_grid_.front(), work_grid_.back()}; }

    double mean_at(double t) const;
    // n x K matrix of eigenfunctions interpolated at `times`.
    Eigen::MatrixXd eigenfunctions_at(std::span<const double> times) const;

    friend bool operator==(const FpcaModel&, const FpcaModel&) = default;

private:
    std::vector<double> work_grid_;
    std::vector<double> mean_;
    std::vector<double> eigenvalues_;
    Eigen::MatrixXd eigenfunctions_;
    double sigma2_;
    double fve_;
};

// Everything estimated before the number of components is chosen.
struct FpcaFit {
    MeanEstimate mean;
    CovarianceEstimate covariance;
    Eigenstructure spectrum;

    // Model keeping the leading `components` eigenpairs.
    FpcaModel model(std::size_t components) const;
    FpcaModel model_for_fve(double target) const;
};

MeanEstimate estimate_mean(const Dataset& ds, const FpcaOptions& options = {});

CovarianceEstimate estimate_covariance(const Dataset& ds, const MeanEstimate& mean, const FpcaOptions& options = {});

// Symmetric eigenproblem of the discretized covariance operator. Keeps
// eigenvalues above max(0, 1e-10 * largest) and fixes signs so each
// eigenfunction integrates positive (or, when the integral is below 1e-8 in
// magnitude, is positive where it is largest in absolute value).
Eigenstructure eigendecompose(const Eigen::MatrixXd& surface, std::span<const double> grid);

// Smallest K whose cumulative share of the eigenvalue total reaches target.
std::size_t select_k_fve(std::span<const double> eigenvalues, double target);

// Conditional expectation of the scores given one subject's data:
//   xi = Lambda Phi^T (Phi Lambda Phi^T + sigma2 I)^{-1} (y - mu).
std::vector<double> pace_scores(const FpcaModel& model, const Trajectory& traj);

// The same formula on explicit plug-ins (rows of `phi` are observation
// times). A ridge of 1e-8 * trace / n is added when sigma2 == 0 leaves the
// covariance singular.
Eigen::VectorXd pace_conditional_mean(const Eigen::MatrixXd& phi, std::span<const double> eigenvalues,
                                      double sigma2, const Eigen::VectorXd& centered);

FpcaFit fit_fpca_spectrum(const Dataset& ds, const FpcaOptions& options = {});
FpcaModel fit_fpca(const Dataset& ds, const FpcaOptions& options = {});

// mu(t) + sum_k xi_k phi_k(t) at each eval time, scores from `traj`.
std::vector<double> predict_trajectory(const FpcaModel& model, const Trajectory& traj,
                                       std::span<const double> eval_times);
std::vector<double> predict_from_scores(const FpcaModel& model, std::span<const double> scores,
                                        std::span<const double> eval_times);

struct MeanBands {
    std::vector<double> grid;
    std::vector<double> mean;
    std::vector<double> lower;
    std::vector<double> upper;
    double bandwidth = 0.0;
};

// Subject-level bootstrap of the mean function. The bandwidth is chosen once
// on the full data (or taken from options) and reused for every resample.
MeanBands bootstrap_mean_ci(const Dataset& ds, std::size_t n_boot, double level, std::uint64_t seed,
                            const FpcaOptions& options = {});

std::string serialize(const FpcaModel& model);
FpcaModel deserialize_fpca(std::string_view content);

}  // namespace longfpca
