#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "longfpca/data_model.hpp"
#include "longfpca/spline_basis.hpp"

namespace longfpca {

enum class ReStructure { full, diagonal };

std::string to_string(ReStructure re);
ReStructure re_structure_from_string(std::string_view name);

// Linear mixed model y_i = Z_i (beta + b_i) + eps_i, b_i ~ N(0, B),
// eps_i ~ N(0, sigma2 I), with Z_i the basis evaluated at subject times.
struct LmmModel {
    BasisSpec basis;
    ReStructure re_structure = ReStructure::diagonal;
    Eigen::VectorXd beta;
    Eigen::MatrixXd re_cov;
    double sigma2 = 1.0;
    double loglik = 0.0;
    bool converged = false;
    int iterations = 0;
    // Log-likelihood after each accepted optimizer step of the winning start.
    std::vector<double> loglik_trace;

    // Throws InvariantError unless beta is finite, re_cov symmetric PSD and
    // sigma2 positive.
    void validate() const;
};

struct SubjectDesign {
    Eigen::MatrixXd z;
    Eigen::VectorXd y;
};

std::vector<SubjectDesign> build_designs(const Dataset& ds, const BasisSpec& basis);

// Gaussian marginal log-likelihood, sum_i log N(y_i; Z_i beta, Z_i B Z_i^T + sigma2 I).
double marginal_loglik(const Eigen::VectorXd& beta, const Eigen::MatrixXd& re_cov, double sigma2,
                       std::span<const SubjectDesign> designs);
double marginal_loglik(const LmmModel& model, const Dataset& ds);

// Unconstrained variance parameters: log standard deviations (diagonal) or
// a Cholesky factor with log diagonal (full), then log sigma.
Eigen::VectorXd encode_variance(const Eigen::MatrixXd& re_cov, double sigma2, ReStructure re);
void decode_variance(const Eigen::VectorXd& theta, std::size_t p, ReStructure re, Eigen::MatrixXd& re_cov,
                     double& sigma2);

// Log-likelihood with beta replaced by its GLS estimate given the variance
// parameters; the estimate is written to `beta_out` when non-null.
double profiled_loglik(const Eigen::VectorXd& theta, std::size_t p, ReStructure re,
                       std::span<const SubjectDesign> designs, Eigen::VectorXd* beta_out = nullptr);

// Central finite differences with step h * max(1, |x_i|).
Eigen::VectorXd central_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                 double h = 1e-5);

struct LmmOptions {
    ReStructure re_structure = ReStructure::diagonal;
    int max_iterations = 500;
    double relative_tolerance = 1e-8;
    // Max-norm of the gradient of the log-likelihood per observation.
    double gradient_tolerance = 1e-4;
};

// Maximum likelihood by quasi-Newton (BFGS) on the profiled likelihood with
// numeric gradients, from two starts; the higher likelihood wins.
// Non-convergence is reported through `converged`, not thrown.
LmmModel fit_lmm(const Dataset& ds, const BasisSpec& basis, const LmmOptions& options = {});

// BLUP b = B Z^T (Z B Z^T + sigma2 I)^{-1} r for a residual r = y - Z beta.
Eigen::VectorXd blup(const Eigen::MatrixXd& z, const Eigen::MatrixXd& re_cov, double sigma2,
                     const Eigen::VectorXd& residual);

Eigen::VectorXd predict_re(const LmmModel& model, const Trajectory& traj);

// Z(eval) (beta + b_i), random effects from the subject's observed data.
std::vector<double> predict_lmm(const LmmModel& model, const Trajectory& traj, std::span<const double> eval_times);

std::string serialize(const LmmModel& model);
LmmModel deserialize_lmm(std::string_view content);

}  // namespace longfpca
