#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "longfpca/errors.hpp"
#include "longfpca/grid.hpp"
#include "longfpca/spline_basis.hpp"

using namespace longfpca;

namespace {

std::vector<double> uniform_times(std::size_t n, double lo, double hi, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> t(n);
    for (auto& v : t) v = u(rng);
    return t;
}

Eigen::RowVectorXd row_at(const BasisSpec& spec, double t) { return evaluate_basis(spec, std::vector<double>{t}).row(0); }

// Second difference divided by h^2.
Eigen::RowVectorXd second_difference(const BasisSpec& spec, double a, double b, double c, double h) {
    return (row_at(spec, a) - 2.0 * row_at(spec, b) + row_at(spec, c)) / (h * h);
}

}  // namespace

TEST(PlaceKnots, QuantileTercilesOfUniform) {
    const auto t = uniform_times(20000, 0.0, 12.0, 1);
    const auto k = place_knots(t, 2, KnotStrategy::quantile, {0.0, 12.0});
    ASSERT_EQ(k.size(), 2u);
    EXPECT_NEAR(k[0], 4.0, 0.2);
    EXPECT_NEAR(k[1], 8.0, 0.2);
}

TEST(PlaceKnots, EquidistantThirds) {
    const auto k = place_knots(std::vector<double>{0.0, 12.0}, 2, KnotStrategy::equidistant, {0.0, 12.0});
    ASSERT_EQ(k.size(), 2u);
    EXPECT_DOUBLE_EQ(k[0], 4.0);
    EXPECT_DOUBLE_EQ(k[1], 8.0);
}

TEST(PlaceKnots, ThreeQuantileKnotsAreQuartiles) {
    const auto t = uniform_times(501, 0.0, 12.0, 2);
    const auto k = place_knots(t, 3, KnotStrategy::quantile);
    ASSERT_EQ(k.size(), 3u);
    EXPECT_DOUBLE_EQ(k[0], quantile(t, 0.25));
    EXPECT_DOUBLE_EQ(k[1], quantile(t, 0.50));
    EXPECT_DOUBLE_EQ(k[2], quantile(t, 0.75));
}

TEST(PlaceKnots, TiesAreDegenerate) {
    std::vector<double> t(50, 2.0);
    t.push_back(0.0);
    t.push_back(10.0);
    EXPECT_THROW(place_knots(t, 2, KnotStrategy::quantile), DegenerateKnotsError);
    EXPECT_THROW(place_knots(t, 0, KnotStrategy::quantile), ParameterError);
}

TEST(Polynomial, DegreeTwoRow) {
    const auto row = row_at(BasisSpec::polynomial(2), 3.0);
    ASSERT_EQ(row.size(), 3);
    EXPECT_EQ(row(0), 1.0);
    EXPECT_EQ(row(1), 3.0);
    EXPECT_EQ(row(2), 9.0);
    EXPECT_EQ(BasisSpec::polynomial(3, false).dimension(), 3u);
}

TEST(BSpline, PartitionOfUnity) {
    const auto spec = BasisSpec::bspline({3.0, 6.0, 9.0}, {0.0, 12.0}, 4, true);
    EXPECT_EQ(spec.dimension(), 7u);
    const auto t = equispaced_grid({0.0, 12.0}, 241);
    const auto z = evaluate_basis(spec, t);
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        EXPECT_NEAR(z.row(r).sum(), 1.0, 1e-12) << "t = " << t[r];
        EXPECT_GE(z.row(r).minCoeff(), -1e-15);
    }
}

TEST(BSpline, OutsideBoundaryIsRejected) {
    const auto spec = BasisSpec::bspline({4.0, 8.0}, {0.0, 12.0});
    EXPECT_NO_THROW(evaluate_basis(spec, std::vector<double>{12.0 + 1e-10}));
    EXPECT_THROW(evaluate_basis(spec, std::vector<double>{12.5}), SpecError);
}

TEST(NaturalCubic, DimensionArithmetic) {
    EXPECT_EQ(BasisSpec::natural_cubic({4.0, 8.0}, {0.0, 12.0}, true).dimension(), 4u);
    EXPECT_EQ(BasisSpec::natural_cubic({4.0, 8.0}, {0.0, 12.0}, false).dimension(), 3u);
}

TEST(NaturalCubic, LinearAtAndBeyondBoundaries) {
    const auto spec = BasisSpec::natural_cubic({3.0, 7.0}, {1.0, 11.0});
    const double h = 0.5;
    for (double t : {11.0, 12.0, 15.0}) {
        EXPECT_LT(second_difference(spec, t, t + h, t + 2 * h, h).cwiseAbs().maxCoeff(), 1e-6) << t;
    }
    for (double t : {1.0, 0.0, -3.0}) {
        EXPECT_LT(second_difference(spec, t, t - h, t - 2 * h, h).cwiseAbs().maxCoeff(), 1e-6) << t;
    }
}

TEST(NaturalCubic, SecondDerivativeContinuousAtKnots) {
    const auto spec = BasisSpec::natural_cubic({3.0, 7.0}, {1.0, 11.0});
    const double h = 1e-2;
    for (double knot : {1.0, 3.0, 7.0, 11.0}) {
        const auto left = second_difference(spec, knot - 2 * h, knot - h, knot, h);
        const auto right = second_difference(spec, knot, knot + h, knot + 2 * h, h);
        // One-sided differences differ by O(h) times the third derivative jump.
        EXPECT_LT((left - right).cwiseAbs().maxCoeff(), 0.05) << "knot " << knot;
    }
}

TEST(NaturalCubic, ReproducesLinearFunctions) {
    // Constant and linear functions lie in the span.
    const auto spec = BasisSpec::natural_cubic({3.0, 7.0}, {1.0, 11.0});
    const auto t = equispaced_grid({0.0, 12.0}, 40);
    const auto z = evaluate_basis(spec, t);
    Eigen::VectorXd y(40);
    for (int i = 0; i < 40; ++i) y(i) = 2.0 - 0.5 * t[i];
    const Eigen::VectorXd coef = z.colPivHouseholderQr().solve(y);
    EXPECT_LT((z * coef - y).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Design, FullColumnRank) {
    const std::vector<BasisSpec> specs{BasisSpec::polynomial(3), BasisSpec::natural_cubic({4.0, 8.0}, {0.0, 12.0}),
                                       BasisSpec::bspline({3.0, 6.0, 9.0}, {0.0, 12.0})};
    for (const auto& spec : specs) {
        const auto p = static_cast<Eigen::Index>(spec.dimension());
        const auto t = equispaced_grid({0.0, 12.0}, static_cast<int>(p) + 3);
        const auto z = evaluate_basis(spec, t);
        EXPECT_EQ(z.colPivHouseholderQr().rank(), p) << to_string(spec.kind);
    }
}

TEST(Design, EmptyTimesGiveEmptyMatrix) {
    const auto z = evaluate_basis(BasisSpec::polynomial(2), std::vector<double>{});
    EXPECT_EQ(z.rows(), 0);
    EXPECT_EQ(z.cols(), 3);
}

TEST(Spec, InvalidSpecifications) {
    EXPECT_THROW(BasisSpec::natural_cubic({4.0, 4.0}, {0.0, 12.0}).validate(), SpecError);
    EXPECT_THROW(BasisSpec::natural_cubic({0.0, 4.0}, {0.0, 12.0}).validate(), SpecError);
    EXPECT_THROW(BasisSpec::bspline({4.0}, {12.0, 0.0}).validate(), SpecError);
    EXPECT_THROW(basis_kind_from_string("wavelet"), SpecError);
}

TEST(Tabulated, InterpolatesColumns) {
    const auto spec = BasisSpec::tabulated({0.0, 1.0, 2.0}, {{1.0, 1.0, 1.0}, {0.0, 2.0, 0.0}});
    const auto row = row_at(spec, 0.5);
    EXPECT_DOUBLE_EQ(row(0), 1.0);
    EXPECT_DOUBLE_EQ(row(1), 1.0);
}
