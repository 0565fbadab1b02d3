#pragma once

#include <span>
#include <vector>

namespace longfpca {

// Closed observation window [lower, upper].
struct Window {
    double lower = 0.0;
    double upper = 0.0;

    double length() const { return upper - lower; }
    bool contains(double t, double tol = 0.0) const { return t >= lower - tol && t <= upper + tol; }
    friend bool operator==(const Window&, const Window&) = default;
};

// `size` equispaced points covering the window, endpoints included exactly.
std::vector<double> equispaced_grid(const Window& window, int size);

// Trapezoid quadrature weights for an arbitrary increasing grid.
std::vector<double> trapezoid_weights(std::span<const double> grid);

double trapezoid(std::span<const double> grid, std::span<const double> values);
double inner_product(std::span<const double> grid, std::span<const double> f, std::span<const double> g);

// Piecewise-linear interpolation of `values` tabulated on the increasing
// `grid`. Returns the tabulated value exactly at grid points. Throws
// ExtrapolationError when `t` lies outside the grid by more than `tol`;
// points within `tol` are clamped.
double interpolate_linear(std::span<const double> grid, std::span<const double> values, double t,
                          double tol = 1e-9);

std::vector<double> interpolate_linear(std::span<const double> grid, std::span<const double> values,
                                       std::span<const double> at, double tol = 1e-9);

// Sample quantile with linear interpolation between order statistics
// (Hyndman-Fan type 7). `sorted` must be ascending and nonempty.
double quantile_sorted(std::span<const double> sorted, double prob);
double quantile(std::vector<double> values, double prob);

}  // namespace longfpca
