#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "longfpca/fpca.hpp"
#include "longfpca/grid.hpp"
#include "longfpca/simulation.hpp"

namespace fixtures {

// The study-2 generating model, derived once per test binary.
inline const longfpca::KlGenSpec& study2_kl() {
    static const longfpca::KlGenSpec spec = longfpca::derive_kl_spec(20240607);
    return spec;
}

// Complete KL data on jitter-free visits every `spacing` years over [0, 12].
inline longfpca::Dataset kl_dataset(const longfpca::KlGenSpec& spec, std::size_t n, double spacing,
                                    std::uint64_t seed) {
    longfpca::StudyDesign design;
    design.generator = longfpca::GeneratorKind::kl;
    design.kl = spec;
    design.n_subjects = n;
    design.visits = {spacing, 0.0, 12.0};
    return longfpca::gen_study_dataset(design, seed).complete;
}

// sqrt(2) sin(k pi t) on [0, 1]: orthonormal under trapezoid quadrature on
// any equispaced grid.
inline Eigen::MatrixXd sine_basis(const std::vector<double>& grid, int k) {
    Eigen::MatrixXd phi(static_cast<Eigen::Index>(grid.size()), k);
    for (Eigen::Index a = 0; a < phi.rows(); ++a) {
        for (int c = 0; c < k; ++c) phi(a, c) = std::sqrt(2.0) * std::sin((c + 1) * std::numbers::pi * grid[a]);
    }
    return phi;
}

inline longfpca::FpcaModel sine_model(std::vector<double> eigenvalues, double sigma2, int grid_size = 51) {
    auto grid = longfpca::equispaced_grid({0.0, 1.0}, grid_size);
    std::vector<double> mean(grid.size());
    for (std::size_t a = 0; a < grid.size(); ++a) mean[a] = 2.0 + grid[a] * grid[a];
    const auto phi = sine_basis(grid, static_cast<int>(eigenvalues.size()));
    return {grid, mean, std::move(eigenvalues), phi, sigma2, 1.0};
}

}  // namespace fixtures
