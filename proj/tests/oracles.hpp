#pragma once

// Independent reference computations used as test oracles. Each one takes a
// different numerical route from the library code it checks.

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

inline double gaussian(double z) { return std::exp(-0.5 * z * z); }

// Intercept of the kernel-weighted least-squares line at x0, solved by QR on
// the explicit sqrt-weighted design [1, x - x0].
inline double local_linear(const std::vector<double>& x, const std::vector<double>& y, double h, double x0) {
    const auto n = static_cast<Eigen::Index>(x.size());
    Eigen::MatrixXd a(n, 2);
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double sw = std::sqrt(gaussian((x[i] - x0) / h));
        a(i, 0) = sw;
        a(i, 1) = sw * (x[i] - x0);
        b(i) = sw * y[i];
    }
    return a.colPivHouseholderQr().solve(b)(0);
}

// Intercept of the kernel-weighted least-squares plane at (s0, t0).
inline double local_plane(const std::vector<double>& s, const std::vector<double>& t, const std::vector<double>& z,
                          double h, double s0, double t0) {
    const auto n = static_cast<Eigen::Index>(s.size());
    Eigen::MatrixXd a(n, 3);
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double sw = std::sqrt(gaussian((s[i] - s0) / h) * gaussian((t[i] - t0) / h));
        a(i, 0) = sw;
        a(i, 1) = sw * (s[i] - s0);
        a(i, 2) = sw * (t[i] - t0);
        b(i) = sw * z[i];
    }
    return a.colPivHouseholderQr().solve(b)(0);
}

// E[xi | y] for xi ~ N(0, diag(lambda)), y = phi xi + N(0, sigma2 I), in the
// information form (Lambda^-1 + phi^T phi / sigma2)^-1 phi^T y / sigma2.
inline Eigen::VectorXd posterior_mean(const Eigen::MatrixXd& phi, const Eigen::VectorXd& lambda, double sigma2,
                                      const Eigen::VectorXd& y) {
    Eigen::MatrixXd precision = phi.transpose() * phi / sigma2;
    for (Eigen::Index k = 0; k < lambda.size(); ++k) precision(k, k) += 1.0 / lambda(k);
    return precision.fullPivLu().solve(phi.transpose() * y / sigma2);
}

// The same conditional mean from the joint covariance of (xi, y) through an
// explicit inverse.
inline Eigen::VectorXd joint_conditional_mean(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& re_cov, double sigma2,
                                              const Eigen::VectorXd& y) {
    const Eigen::MatrixXd cross = re_cov * phi.transpose();
    Eigen::MatrixXd cov_y = phi * re_cov * phi.transpose();
    cov_y += sigma2 * Eigen::MatrixXd::Identity(y.size(), y.size());
    return cross * cov_y.fullPivLu().inverse() * y;
}

// Multivariate normal log density through an LU determinant and inverse.
inline double mvn_logpdf(const Eigen::VectorXd& y, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(cov);
    const Eigen::VectorXd r = y - mean;
    const double quad = r.dot(lu.inverse() * r);
    return -0.5 * (static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi) + std::log(lu.determinant()) + quad);
}

}  // namespace oracle
