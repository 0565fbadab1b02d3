#include "longfpca/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "longfpca/errors.hpp"

namespace longfpca {

std::vector<double> equispaced_grid(const Window& window, int size) {
    if (size < 2) throw ParameterError("grid size must be at least 2, got " + std::to_string(size));
    if (!(window.upper > window.lower)) throw ParameterError("grid window must have positive length");
    std::vector<double> grid(static_cast<std::size_t>(size));
    const double step = window.length() / (size - 1);
    for (int k = 0; k < size; ++k) grid[k] = window.lower + step * k;
    grid.back() = window.upper;
    return grid;
}

std::vector<double> trapezoid_weights(std::span<const double> grid) {
    std::vector<double> w(grid.size(), 0.0);
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
        const double half = 0.5 * (grid[k + 1] - grid[k]);
        w[k] += half;
        w[k + 1] += half;
    }
    return w;
}

double trapezoid(std::span<const double> grid, std::span<const double> values) {
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < grid.size(); ++k)
        total += 0.5 * (grid[k + 1] - grid[k]) * (values[k] + values[k + 1]);
    return total;
}

double inner_product(std::span<const double> grid, std::span<const double> f, std::span<const double> g) {
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < grid.size(); ++k)
        total += 0.5 * (grid[k + 1] - grid[k]) * (f[k] * g[k] + f[k + 1] * g[k + 1]);
    return total;
}

double interpolate_linear(std::span<const double> grid, std::span<const double> values, double t, double tol) {
    const double lo = grid.front();
    const double hi = grid.back();
    if (t < lo - tol || t > hi + tol || std::isnan(t)) {
        throw ExtrapolationError("time " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                                 std::to_string(hi) + "]");
    }
    if (t <= lo) return values.front();
    if (t >= hi) return values.back();
    // first grid point strictly greater than t
    const auto it = std::upper_bound(grid.begin(), grid.end(), t);
    const std::size_t k = static_cast<std::size_t>(it - grid.begin()) - 1;
    if (t == grid[k]) return values[k];
    const double frac = (t - grid[k]) / (grid[k + 1] - grid[k]);
    return values[k] + frac * (values[k + 1] - values[k]);
}

std::vector<double> interpolate_linear(std::span<const double> grid, std::span<const double> values,
                                       std::span<const double> at, double tol) {
    std::vector<double> out;
    out.reserve(at.size());
    for (double t : at) out.push_back(interpolate_linear(grid, values, t, tol));
    return out;
}

double quantile_sorted(std::span<const double> sorted, double prob) {
    if (sorted.empty()) throw SizeError("quantile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(prob, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double quantile(std::vector<double> values, double prob) {
    std::sort(values.begin(), values.end());
    return quantile_sorted(values, prob);
}

}  // namespace longfpca
