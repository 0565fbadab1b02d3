#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace longfpca {

enum class BasisKind { polynomial, natural_cubic, bspline, tabulated };

std::string to_string(BasisKind kind);
BasisKind basis_kind_from_string(std::string_view name);

// Time basis g_1..g_p for the mixed models.
//
//  - polynomial:    columns (1, t, ..., t^degree); `intercept` controls the
//                   constant column.
//  - natural_cubic: truncated-power construction with natural constraints,
//                   linear beyond the boundary knots; p = #internal + 1 +
//                   intercept.
//  - bspline:       B-splines of the given order (4 = cubic) on the clamped
//                   knot sequence; with intercept the columns sum to one on
//                   the boundary span, without it the first column is
//                   dropped.
//  - tabulated:     caller-supplied functions on a grid, linearly
//                   interpolated (one column per function).
struct BasisSpec {
    BasisKind kind = BasisKind::polynomial;
    int degree = 2;  // polynomial degree, or B-spline order
    std::vector<double> internal_knots;
    std::pair<double, double> boundary_knots{0.0, 1.0};
    bool intercept = true;
    std::vector<double> table_grid;
    std::vector<std::vector<double>> table_columns;

    static BasisSpec polynomial(int degree, bool intercept = true);
    static BasisSpec natural_cubic(std::vector<double> internal_knots, std::pair<double, double> boundary,
                                   bool intercept = true);
    static BasisSpec bspline(std::vector<double> internal_knots, std::pair<double, double> boundary,
                             int order = 4, bool intercept = true);
    static BasisSpec tabulated(std::vector<double> grid, std::vector<std::vector<double>> columns);

    // Throws SpecError on an invalid specification.
    void validate() const;
    std::size_t dimension() const;

    friend bool operator==(const BasisSpec&, const BasisSpec&) = default;
};

enum class KnotStrategy { quantile, equidistant };

// Quantile strategy: empirical (type 7) quantiles of `times` at
// k / (n_knots + 1). Equidistant: evenly spaced strictly between the
// boundary knots. Throws DegenerateKnotsError on ties or knots on a boundary.
std::vector<double> place_knots(std::span<const double> times, int n_knots, KnotStrategy strategy,
                                std::pair<double, double> boundary);
// Boundary defaults to the range of `times`.
std::vector<double> place_knots(std::span<const double> times, int n_knots, KnotStrategy strategy);

// Design matrix, one row per time. B-spline times may exceed the boundary by
// 1e-8 of its width (clamped); anything further is a SpecError.
Eigen::MatrixXd evaluate_basis(const BasisSpec& spec, std::span<const double> times);

}  // namespace longfpca
