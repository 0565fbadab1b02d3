#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "longfpca/errors.hpp"
#include "longfpca/grid.hpp"
#include "longfpca/kernel_smoothing.hpp"
#include "oracles.hpp"

using namespace longfpca;

namespace {

struct Scatter {
    std::vector<double> x, y;
};

Scatter sine_scatter(std::size_t n, double noise_sd, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> e(0.0, noise_sd);
    Scatter s;
    for (std::size_t i = 0; i < n; ++i) {
        s.x.push_back(u(rng));
        s.y.push_back(std::sin(s.x.back()) + e(rng));
    }
    return s;
}

// GCV built from the oracle smoother: trace of the hat matrix from unit
// responses, residuals from the oracle fit.
double oracle_gcv(const std::vector<double>& x, const std::vector<double>& y, double h) {
    const auto n = x.size();
    double rss = 0.0, trace = 0.0;
    std::vector<double> unit(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - oracle::local_linear(x, y, h, x[i]);
        rss += r * r;
        unit[i] = 1.0;
        trace += oracle::local_linear(x, unit, h, x[i]);
        unit[i] = 0.0;
    }
    const double nn = static_cast<double>(n);
    const double d = 1.0 - trace / nn;
    return (rss / nn) / (d * d);
}

}  // namespace

TEST(Smooth1D, ReproducesAffineData) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 12.0);
    std::vector<double> x, y;
    for (int i = 0; i < 60; ++i) {
        x.push_back(u(rng));
        y.push_back(2.0 * x.back() + 1.0);
    }
    const auto grid = equispaced_grid({0.0, 12.0}, 41);
    for (double h : {0.3, 1.0, 5.0, 100.0}) {
        for (Kernel k : {Kernel::gaussian, Kernel::epanechnikov}) {
            if (k == Kernel::epanechnikov && h < 1.0) continue;
            const auto fit = smooth_1d(x, y, {}, h, grid, k);
            for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_NEAR(fit[i], 2.0 * grid[i] + 1.0, 1e-10);
        }
    }
}

TEST(Smooth1D, ReproducesConstant) {
    const std::vector<double> x{0, 1, 2, 3, 4, 5};
    const std::vector<double> y(6, -3.25);
    const auto fit = smooth_1d(x, y, {}, 0.8, std::vector<double>{0.0, 2.5, 5.0});
    for (double v : fit) EXPECT_NEAR(v, -3.25, 1e-12);
}

TEST(Smooth1D, SineWithGcvMatchesBruteForceOracle) {
    const auto s = sine_scatter(200, 0.1, 7);
    const double range = 2.0 * std::numbers::pi;
    const auto candidates = default_bandwidth_candidates(range, 51);
    const double h = select_bandwidth_gcv(s.x, s.y, {}, candidates);
    const auto grid = equispaced_grid({0.0, range}, 51);
    const auto fit = smooth_1d(s.x, s.y, {}, h, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        EXPECT_NEAR(fit[i], oracle::local_linear(s.x, s.y, h, grid[i]), 1e-10);
        if (grid[i] > 0.1 * range && grid[i] < 0.9 * range) {
            EXPECT_LT(std::abs(fit[i] - std::sin(grid[i])), 0.1);
        }
    }
}

TEST(Smooth1D, LinearInResponse) {
    const auto a = sine_scatter(80, 0.3, 2);
    const auto b = sine_scatter(80, 0.3, 3);
    std::vector<double> combo(a.y.size());
    for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = 2.5 * a.y[i] - 0.75 * b.y[i];
    const auto grid = equispaced_grid({0.0, 6.0}, 31);
    const auto fa = smooth_1d(a.x, a.y, {}, 0.7, grid);
    const auto fb = smooth_1d(a.x, b.y, {}, 0.7, grid);
    const auto fc = smooth_1d(a.x, combo, {}, 0.7, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_NEAR(fc[i], 2.5 * fa[i] - 0.75 * fb[i], 1e-10);
}

TEST(Smooth1D, WeightsActAsReplication) {
    const std::vector<double> x{0, 1, 2, 3, 4};
    const std::vector<double> y{1.0, 3.0, 2.0, 5.0, 4.0};
    const std::vector<double> w{1, 3, 1, 2, 1};
    std::vector<double> xr, yr;
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (int r = 0; r < static_cast<int>(w[i]); ++r) {
            xr.push_back(x[i]);
            yr.push_back(y[i]);
        }
    }
    const std::vector<double> eval{0.5, 2.2, 3.9};
    const auto weighted = smooth_1d(x, y, w, 1.1, eval);
    const auto replicated = smooth_1d(xr, yr, {}, 1.1, eval);
    for (std::size_t i = 0; i < eval.size(); ++i) EXPECT_NEAR(weighted[i], replicated[i], 1e-12);
    EXPECT_NEAR(gcv_score_1d(x, y, w, 1.1), gcv_score_1d(xr, yr, {}, 1.1), 1e-12);
}

TEST(Smooth1D, TinyBandwidthNamesThePoint) {
    const std::vector<double> x{0, 1, 2, 3};
    const std::vector<double> y{0, 1, 0, 1};
    try {
        smooth_1d(x, y, {}, 0.01, std::vector<double>{1.5});
        FAIL() << "expected BandwidthTooSmallError";
    } catch (const BandwidthTooSmallError& e) {
        EXPECT_NE(std::string(e.what()).find("1.5"), std::string::npos) << e.what();
    }
    EXPECT_THROW(Smoother1D(0.0), ParameterError);
}

TEST(Smooth2D, ReproducesPlane) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    std::vector<double> s, t, z;
    for (int i = 0; i < 300; ++i) {
        s.push_back(u(rng));
        t.push_back(u(rng));
        z.push_back(1.5 - 0.5 * s.back() + 2.0 * t.back());
    }
    const auto grid = equispaced_grid({0.0, 10.0}, 11);
    const auto surf = smooth_2d(s, t, z, {}, {1.3, 1.3}, grid, Kernel::gaussian, Symmetrize::no);
    for (std::size_t a = 0; a < grid.size(); ++a) {
        for (std::size_t b = 0; b < grid.size(); ++b) {
            EXPECT_NEAR(surf(a, b), 1.5 - 0.5 * grid[a] + 2.0 * grid[b], 1e-8);
        }
    }
}

TEST(Smooth2D, SymmetrizedOutputIsExactlySymmetric) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> s, t, z;
    for (int i = 0; i < 200; ++i) {
        s.push_back(u(rng));
        t.push_back(u(rng));
        z.push_back(std::sin(3 * s.back()) * t.back() + u(rng));
    }
    const auto grid = equispaced_grid({0.0, 1.0}, 15);
    const auto surf = smooth_2d(s, t, z, {}, {0.2, 0.2}, grid);
    EXPECT_TRUE(surf == surf.transpose());
}

TEST(Smooth2D, RankOneSurfaceMatchesOracle) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> e(0.0, 0.05);
    const auto phi = [](double x) { return std::sqrt(2.0) * std::sin(std::numbers::pi * x); };
    std::vector<double> s, t, z;
    for (int i = 0; i < 1500; ++i) {
        s.push_back(u(rng));
        t.push_back(u(rng));
        z.push_back(phi(s.back()) * phi(t.back()) + e(rng));
    }
    const auto grid = equispaced_grid({0.0, 1.0}, 11);
    const double h = 0.05;
    const auto surf = smooth_2d(s, t, z, {}, {h, h}, grid, Kernel::gaussian, Symmetrize::no);
    for (std::size_t a = 0; a < grid.size(); ++a) {
        for (std::size_t b = 0; b < grid.size(); ++b) {
            EXPECT_NEAR(surf(a, b), oracle::local_plane(s, t, z, h, grid[a], grid[b]), 1e-8);
            if (a >= 1 && a <= 9 && b >= 1 && b <= 9) {
                EXPECT_LT(std::abs(surf(a, b) - phi(grid[a]) * phi(grid[b])), 0.1);
            }
        }
    }
}

TEST(Gcv, LinearDataPicksLargestCandidate) {
    std::vector<double> x, y;
    for (int i = 0; i < 50; ++i) {
        x.push_back(0.2 * i);
        y.push_back(3.0 - 0.4 * x.back());
    }
    const auto candidates = geometric_candidates(0.2, 5.0);
    EXPECT_EQ(select_bandwidth_gcv(x, y, {}, candidates), candidates.back());
}

TEST(Gcv, WigglySignalMatchesExhaustiveSearch) {
    const auto s = sine_scatter(100, 0.2, 11);
    std::vector<double> x = s.x, y = s.y;
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::sin(3.0 * x[i]) + (y[i] - std::sin(x[i]));
    const auto candidates = geometric_candidates(0.05, 3.0);
    const double chosen = select_bandwidth_gcv(x, y, {}, candidates);
    double best = candidates.front(), best_score = std::numeric_limits<double>::infinity();
    for (double h : candidates) {
        const double score = oracle_gcv(x, y, h);
        EXPECT_NEAR(gcv_score_1d(x, y, {}, h), score, 1e-9 * score);
        if (score < best_score) {
            best_score = score;
            best = h;
        }
    }
    EXPECT_EQ(chosen, best);
    EXPECT_LT(chosen, candidates.back());
}

TEST(Gcv, SingleValidCandidate) {
    const std::vector<double> x{0, 1, 2, 3, 4, 5};
    const std::vector<double> y{0, 1, 0, 1, 0, 1};
    const std::vector<double> candidates{0.2, 0.5, 3.0};
    EXPECT_EQ(select_bandwidth_gcv(x, y, {}, candidates, Kernel::epanechnikov), 3.0);
    EXPECT_THROW(select_bandwidth_gcv(x, y, {}, std::vector<double>{0.2, 0.5}, Kernel::epanechnikov),
                 NoValidBandwidthError);
}

TEST(Gcv, RankingStartsWithSelection) {
    const auto s = sine_scatter(120, 0.3, 12);
    const auto candidates = geometric_candidates(0.1, 3.0);
    const auto ranked = rank_bandwidths_gcv(s.x, s.y, {}, candidates);
    ASSERT_FALSE(ranked.empty());
    EXPECT_EQ(ranked.front(), select_bandwidth_gcv(s.x, s.y, {}, candidates));
}

TEST(Candidates, GeometricSpacing) {
    const auto c = geometric_candidates(0.24, 6.0, 10);
    ASSERT_EQ(c.size(), 10u);
    EXPECT_DOUBLE_EQ(c.front(), 0.24);
    EXPECT_NEAR(c.back(), 6.0, 1e-12);
    for (std::size_t i = 2; i < c.size(); ++i) EXPECT_NEAR(c[i] / c[i - 1], c[1] / c[0], 1e-12);
    const auto d = default_bandwidth_candidates(12.0, 51);
    EXPECT_DOUBLE_EQ(d.front(), 0.24);
    EXPECT_NEAR(d.back(), 6.0, 1e-12);
}

TEST(Binning, PreservesAffineReproduction) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(0.0, 12.0);
    std::vector<double> x, y;
    for (int i = 0; i < 5000; ++i) {
        x.push_back(u(rng));
        y.push_back(4.0 - 0.3 * x.back());
    }
    const auto grid = equispaced_grid({0.0, 12.0}, 51);
    const auto b = bin_1d(x, y, grid);
    double total = 0.0;
    for (double w : b.weight) total += w;
    EXPECT_EQ(total, 5000.0);
    const auto fit = smooth_1d(b.x, b.y, b.weight, 0.5, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_NEAR(fit[i], 4.0 - 0.3 * grid[i], 1e-10);
}
