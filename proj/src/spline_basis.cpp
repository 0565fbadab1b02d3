#include "longfpca/spline_basis.hpp"

#include <algorithm>
#include <cmath>

#include "longfpca/errors.hpp"
#include "longfpca/grid.hpp"
#include "longfpca/text_io.hpp"

namespace longfpca {

std::string to_string(BasisKind kind) {
    switch (kind) {
        case BasisKind::polynomial: return "polynomial";
        case BasisKind::natural_cubic: return "natural_cubic";
        case BasisKind::bspline: return "bspline";
        case BasisKind::tabulated: return "tabulated";
    }
    return "unknown";
}

BasisKind basis_kind_from_string(std::string_view name) {
    if (name == "polynomial") return BasisKind::polynomial;
    if (name == "natural_cubic") return BasisKind::natural_cubic;
    if (name == "bspline") return BasisKind::bspline;
    if (name == "tabulated") return BasisKind::tabulated;
    throw SpecError("unknown basis kind `" + std::string(name) + "`");
}

BasisSpec BasisSpec::polynomial(int degree, bool intercept) {
    BasisSpec spec;
    spec.kind = BasisKind::polynomial;
    spec.degree = degree;
    spec.intercept = intercept;
    spec.validate();
    return spec;
}

BasisSpec BasisSpec::natural_cubic(std::vector<double> internal_knots, std::pair<double, double> boundary,
                                   bool intercept) {
    BasisSpec spec;
    spec.kind = BasisKind::natural_cubic;
    spec.degree = 3;
    spec.internal_knots = std::move(internal_knots);
    spec.boundary_knots = boundary;
    spec.intercept = intercept;
    spec.validate();
    return spec;
}

BasisSpec BasisSpec::bspline(std::vector<double> internal_knots, std::pair<double, double> boundary, int order,
                             bool intercept) {
    BasisSpec spec;
    spec.kind = BasisKind::bspline;
    spec.degree = order;
    spec.internal_knots = std::move(internal_knots);
    spec.boundary_knots = boundary;
    spec.intercept = intercept;
    spec.validate();
    return spec;
}

BasisSpec BasisSpec::tabulated(std::vector<double> grid, std::vector<std::vector<double>> columns) {
    BasisSpec spec;
    spec.kind = BasisKind::tabulated;
    spec.degree = 0;
    spec.intercept = false;
    spec.table_grid = std::move(grid);
    spec.table_columns = std::move(columns);
    spec.validate();
    return spec;
}

void BasisSpec::validate() const {
    switch (kind) {
        case BasisKind::polynomial:
            if (degree < 0 || (degree == 0 && !intercept)) throw SpecError("polynomial basis would be empty");
            return;
        case BasisKind::tabulated: {
            if (table_columns.empty()) throw SpecError("tabulated basis needs at least one column");
            if (table_grid.size() < 2 || !std::is_sorted(table_grid.begin(), table_grid.end()) ||
                std::adjacent_find(table_grid.begin(), table_grid.end()) != table_grid.end()) {
                throw SpecError("tabulated basis grid must be strictly increasing");
            }
            for (const auto& c : table_columns) {
                if (c.size() != table_grid.size()) throw SpecError("tabulated basis column length differs from grid");
            }
            return;
        }
        case BasisKind::natural_cubic:
        case BasisKind::bspline:
            break;
    }
    const auto [lo, hi] = boundary_knots;
    if (!(hi > lo)) throw SpecError("boundary knots must satisfy lower < upper");
    if (kind == BasisKind::bspline && degree < 1) throw SpecError("B-spline order must be at least 1");
    for (std::size_t k = 0; k < internal_knots.size(); ++k) {
        if (!(internal_knots[k] > lo && internal_knots[k] < hi)) {
            throw SpecError("internal knot " + text::format_double(internal_knots[k]) + " not inside the boundary");
        }
        if (k > 0 && !(internal_knots[k] > internal_knots[k - 1])) {
            throw SpecError("internal knots must be strictly increasing");
        }
    }
    if (dimension() == 0) throw SpecError("basis would be empty");
}

std::size_t BasisSpec::dimension() const {
    const std::size_t with_intercept = intercept ? 1 : 0;
    switch (kind) {
        case BasisKind::polynomial: return static_cast<std::size_t>(degree) + with_intercept;
        case BasisKind::natural_cubic: return internal_knots.size() + 1 + with_intercept;
        case BasisKind::bspline: return internal_knots.size() + static_cast<std::size_t>(degree) - 1 + with_intercept;
        case BasisKind::tabulated: return table_columns.size();
    }
    return 0;
}

// ---------------------------------------------------------------------------

std::vector<double> place_knots(std::span<const double> times, int n_knots, KnotStrategy strategy,
                                std::pair<double, double> boundary) {
    if (n_knots < 1) throw ParameterError("need at least one internal knot");
    const auto [lo, hi] = boundary;
    if (!(hi > lo)) throw DegenerateKnotsError("boundary knots must satisfy lower < upper");
    std::vector<double> knots;
    if (strategy == KnotStrategy::equidistant) {
        for (int k = 1; k <= n_knots; ++k) knots.push_back(lo + (hi - lo) * k / (n_knots + 1));
    } else {
        std::vector<double> sorted(times.begin(), times.end());
        std::sort(sorted.begin(), sorted.end());
        if (sorted.empty()) throw DegenerateKnotsError("no times to place quantile knots");
        for (int k = 1; k <= n_knots; ++k) knots.push_back(quantile_sorted(sorted, static_cast<double>(k) / (n_knots + 1)));
    }
    for (std::size_t k = 0; k < knots.size(); ++k) {
        if (!(knots[k] > lo && knots[k] < hi)) {
            throw DegenerateKnotsError("knot " + text::format_double(knots[k]) + " falls on or outside the boundary");
        }
        if (k > 0 && !(knots[k] > knots[k - 1])) {
            throw DegenerateKnotsError("tied times produce duplicate knots at " + text::format_double(knots[k]));
        }
    }
    return knots;
}

std::vector<double> place_knots(std::span<const double> times, int n_knots, KnotStrategy strategy) {
    if (times.empty()) throw DegenerateKnotsError("no times to place knots");
    const auto [lo, hi] = std::minmax_element(times.begin(), times.end());
    return place_knots(times, n_knots, strategy, {*lo, *hi});
}

namespace {

using RowRef = Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

double cube_plus(double x) { return x > 0.0 ? x * x * x : 0.0; }

// Natural cubic spline in the unit coordinate u of the boundary interval.
void natural_cubic_row(const BasisSpec& spec, double t, RowRef row) {
    const auto [lo, hi] = spec.boundary_knots;
    const double width = hi - lo;
    const double u = (t - lo) / width;
    std::vector<double> knots{0.0};
    for (double k : spec.internal_knots) knots.push_back((k - lo) / width);
    knots.push_back(1.0);
    const std::size_t last = knots.size() - 1;
    auto d = [&](std::size_t k) { return (cube_plus(u - knots[k]) - cube_plus(u - knots[last])) / (knots[last] - knots[k]); };

    Eigen::Index c = 0;
    if (spec.intercept) row(c++) = 1.0;
    row(c++) = u;
    const double d_last = d(last - 1);
    for (std::size_t k = 0; k + 1 < last; ++k) row(c++) = d(k) - d_last;
}

// Cox-de Boor recursion (triangular form) on the clamped knot vector.
void bspline_row(const BasisSpec& spec, double t, RowRef row) {
    const int order = spec.degree;
    const int deg = order - 1;
    const auto [lo, hi] = spec.boundary_knots;
    std::vector<double> knots(static_cast<std::size_t>(order), lo);
    knots.insert(knots.end(), spec.internal_knots.begin(), spec.internal_knots.end());
    knots.insert(knots.end(), static_cast<std::size_t>(order), hi);
    const int n_basis = static_cast<int>(spec.internal_knots.size()) + order;

    const double x = std::clamp(t, lo, hi);
    int span = n_basis - 1;
    if (x < hi) {
        span = static_cast<int>(std::upper_bound(knots.begin(), knots.end(), x) - knots.begin()) - 1;
    }
    std::vector<double> n(static_cast<std::size_t>(order), 0.0), left(order), right(order);
    n[0] = 1.0;
    for (int j = 1; j <= deg; ++j) {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double tmp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        n[j] = saved;
    }
    Eigen::RowVectorXd full = Eigen::RowVectorXd::Zero(n_basis);
    for (int r = 0; r <= deg; ++r) full(span - deg + r) = n[r];
    if (spec.intercept) row = full;
    else row = full.tail(n_basis - 1);
}

}  // namespace

Eigen::MatrixXd evaluate_basis(const BasisSpec& spec, std::span<const double> times) {
    spec.validate();
    const auto p = static_cast<Eigen::Index>(spec.dimension());
    Eigen::MatrixXd design(static_cast<Eigen::Index>(times.size()), p);
    for (std::size_t r = 0; r < times.size(); ++r) {
        const double t = times[r];
        auto row = design.row(static_cast<Eigen::Index>(r));
        switch (spec.kind) {
            case BasisKind::polynomial: {
                Eigen::Index c = 0;
                if (spec.intercept) row(c++) = 1.0;
                double power = 1.0;
                for (int d = 1; d <= spec.degree; ++d) {
                    power *= t;
                    row(c++) = power;
                }
                break;
            }
            case BasisKind::natural_cubic:
                natural_cubic_row(spec, t, row);
                break;
            case BasisKind::bspline: {
                const auto [lo, hi] = spec.boundary_knots;
                const double tol = 1e-8 * (hi - lo);
                if (t < lo - tol || t > hi + tol) {
                    throw SpecError("time " + text::format_double(t) + " outside the B-spline boundary knots");
                }
                bspline_row(spec, t, row);
                break;
            }
            case BasisKind::tabulated:
                for (Eigen::Index c = 0; c < p; ++c) {
                    row(c) = interpolate_linear(spec.table_grid, spec.table_columns[static_cast<std::size_t>(c)], t);
                }
                break;
        }
    }
    return design;
}

}  // namespace longfpca
