#pragma once

#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace longfpca {

enum class Kernel { gaussian, epanechnikov };

// Unnormalized kernel profile, peak value 1 at zero.
double kernel_weight(Kernel kernel, double z);

struct Smoother1D {
    double bandwidth;
    Kernel kernel = Kernel::gaussian;

    Smoother1D(double bandwidth, Kernel kernel = Kernel::gaussian);

    std::vector<double> operator()(std::span<const double> x, std::span<const double> y,
                                   std::span<const double> weights, std::span<const double> eval_points) const;
};

struct Smoother2D {
    std::pair<double, double> bandwidths;
    Kernel kernel = Kernel::gaussian;

    Smoother2D(std::pair<double, double> bandwidths, Kernel kernel = Kernel::gaussian);
};

// Local-linear fit: at every eval point, the intercept of the kernel-weighted
// least-squares line centered there. Reproduces affine data exactly. Throws
// BandwidthTooSmallError naming the first eval point whose local design is
// degenerate. An empty `weights` span means unit weights.
std::vector<double> smooth_1d(std::span<const double> x, std::span<const double> y,
                              std::span<const double> weights, double bandwidth,
                              std::span<const double> eval_points, Kernel kernel = Kernel::gaussian);

enum class Symmetrize { yes, no };

// Local-plane fit on eval_grid x eval_grid. Entry (a, b) is the fit at
// (s, t) = (grid[a], grid[b]). With Symmetrize::yes the result is replaced
// by (S + S^T) / 2, which is exactly symmetric.
Eigen::MatrixXd smooth_2d(std::span<const double> s, std::span<const double> t, std::span<const double> z,
                          std::span<const double> weights, std::pair<double, double> bandwidths,
                          std::span<const double> eval_grid, Kernel kernel = Kernel::gaussian,
                          Symmetrize symmetrize = Symmetrize::yes);

// Generalized cross-validation score of the 1D smoother for one bandwidth,
// with weights read as replication counts:
//   GCV(h) = ((sum_i w_i r_i^2 + extra_rss) / n) / (1 - tr(L) / n)^2,
// n = sum_i w_i. `extra_rss` carries within-bin scatter when x/y are bin
// means. Returns +inf when the fit is degenerate.
double gcv_score_1d(std::span<const double> x, std::span<const double> y, std::span<const double> weights,
                    double bandwidth, Kernel kernel = Kernel::gaussian, double extra_rss = 0.0);

// Candidate minimizing GCV; near-ties (relative 1e-10 of the weighted
// variance of y) go to the larger bandwidth. Degenerate candidates are
// skipped; throws NoValidBandwidthError when none remain.
double select_bandwidth_gcv(std::span<const double> x, std::span<const double> y,
                            std::span<const double> weights, std::span<const double> candidates,
                            Kernel kernel = Kernel::gaussian, double extra_rss = 0.0);

// All valid candidates ordered by preference: the select_bandwidth_gcv choice
// first, the rest by increasing GCV score.
std::vector<double> rank_bandwidths_gcv(std::span<const double> x, std::span<const double> y,
                                        std::span<const double> weights, std::span<const double> candidates,
                                        Kernel kernel = Kernel::gaussian, double extra_rss = 0.0);

// Same rules for the isotropic 2D smoother.
double gcv_score_2d(std::span<const double> s, std::span<const double> t, std::span<const double> z,
                    std::span<const double> weights, double bandwidth, Kernel kernel = Kernel::gaussian,
                    double extra_rss = 0.0);
double select_bandwidth_gcv_2d(std::span<const double> s, std::span<const double> t, std::span<const double> z,
                               std::span<const double> weights, std::span<const double> candidates,
                               Kernel kernel = Kernel::gaussian, double extra_rss = 0.0);
std::vector<double> rank_bandwidths_gcv_2d(std::span<const double> s, std::span<const double> t,
                                           std::span<const double> z, std::span<const double> weights,
                                           std::span<const double> candidates, Kernel kernel = Kernel::gaussian,
                                           double extra_rss = 0.0);

// `count` bandwidths spaced geometrically over [lower, upper].
std::vector<double> geometric_candidates(double lower, double upper, int count = 10);

// Default candidate set: 10 geometric values over [grid spacing, range / 2].
std::vector<double> default_bandwidth_candidates(double range, int grid_size);

// Binned representation of scattered data: bin positions are the mean
// location of their members, values the member mean, weights the counts.
struct Binned1D {
    std::vector<double> x, y, weight;
    double within_ss = 0.0;  // sum of squared deviations from bin means
};
Binned1D bin_1d(std::span<const double> x, std::span<const double> y, std::span<const double> grid);

struct Binned2D {
    std::vector<double> s, t, z, weight;
    double within_ss = 0.0;
};
Binned2D bin_2d(std::span<const double> s, std::span<const double> t, std::span<const double> z,
                std::span<const double> grid);

}  // namespace longfpca
