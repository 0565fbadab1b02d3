#include "longfpca/kernel_smoothing.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "longfpca/errors.hpp"
#include "longfpca/text_io.hpp"

namespace longfpca {

namespace {

constexpr double kMassTol = 1e-10;
constexpr double kSpreadTol = 1e-12;

void check_lengths(std::size_t n, std::span<const double> y, std::span<const double> w, const char* what) {
    if (y.size() != n || (!w.empty() && w.size() != n)) {
        throw ParameterError(std::string(what) + ": inputs differ in length");
    }
}

double weight_at(std::span<const double> w, std::size_t i) { return w.empty() ? 1.0 : w[i]; }

double mean_weight(std::span<const double> w, std::size_t n) {
    if (w.empty()) return 1.0;
    double total = 0.0;
    for (double v : w) total += v;
    return total / static_cast<double>(n);
}

// Moments of the local-linear fit at one point.
struct LineMoments {
    double s0 = 0, s1 = 0, s2 = 0, t0 = 0, t1 = 0;

    double det() const { return s0 * s2 - s1 * s1; }
    bool degenerate(double mass_tol) const { return s0 < mass_tol || det() <= kSpreadTol * s0 * s0; }
    double intercept() const { return (s2 * t0 - s1 * t1) / det(); }
};

LineMoments line_moments(std::span<const double> x, std::span<const double> y, std::span<const double> w,
                         double bandwidth, double x0, Kernel kernel) {
    LineMoments m;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double z = (x[i] - x0) / bandwidth;
        const double k = weight_at(w, i) * kernel_weight(kernel, z);
        if (k == 0.0) continue;
        m.s0 += k;
        m.s1 += k * z;
        m.s2 += k * z * z;
        m.t0 += k * y[i];
        m.t1 += k * z * y[i];
    }
    return m;
}

struct PlaneSystem {
    Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
    Eigen::Vector3d b = Eigen::Vector3d::Zero();

    void add(double k, double u, double v, double z) {
        a(0, 0) += k;
        a(0, 1) += k * u;
        a(0, 2) += k * v;
        a(1, 1) += k * u * u;
        a(1, 2) += k * u * v;
        a(2, 2) += k * v * v;
        b(0) += k * z;
        b(1) += k * u * z;
        b(2) += k * v * z;
    }

    void complete() {
        a(1, 0) = a(0, 1);
        a(2, 0) = a(0, 2);
        a(2, 1) = a(1, 2);
    }

    bool degenerate(double mass_tol) const {
        const double mass = a(0, 0);
        return mass < mass_tol || a.determinant() <= kSpreadTol * mass * mass * mass;
    }
};

double weighted_variance(std::span<const double> y, std::span<const double> w) {
    double sw = 0, sy = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        sw += weight_at(w, i);
        sy += weight_at(w, i) * y[i];
    }
    const double mean = sy / sw;
    double ss = 0;
    for (std::size_t i = 0; i < y.size(); ++i) ss += weight_at(w, i) * (y[i] - mean) * (y[i] - mean);
    return ss / sw;
}

template <class Score>
std::vector<double> rank_by_gcv(std::span<const double> candidates, std::span<const double> y,
                                std::span<const double> w, double extra_rss, Score score) {
    if (candidates.size() < 2) throw ParameterError("bandwidth selection needs at least 2 candidates");
    for (double h : candidates) {
        if (!(h > 0.0)) throw ParameterError("bandwidth candidates must be positive");
    }
    std::vector<std::pair<double, double>> scored;  // (score, bandwidth)
    double best = std::numeric_limits<double>::infinity();
    for (double h : candidates) {
        const double g = score(h);
        if (!std::isfinite(g)) continue;
        scored.emplace_back(g, h);
        best = std::min(best, g);
    }
    if (scored.empty()) throw NoValidBandwidthError("every bandwidth candidate gives a degenerate fit");
    double n = 0;
    for (std::size_t i = 0; i < y.size(); ++i) n += weight_at(w, i);
    const double tol = 1e-10 * (weighted_variance(y, w) + extra_rss / n) + 1e-300;
    double chosen = -1.0;
    for (const auto& [g, h] : scored) {
        if (g <= best + tol && h > chosen) chosen = h;
    }
    std::stable_sort(scored.begin(), scored.end());
    std::vector<double> ranked{chosen};
    for (const auto& [g, h] : scored) {
        if (h != chosen) ranked.push_back(h);
    }
    return ranked;
}

std::size_t nearest_index(std::span<const double> grid, double x) {
    const auto it = std::lower_bound(grid.begin(), grid.end(), x);
    if (it == grid.begin()) return 0;
    if (it == grid.end()) return grid.size() - 1;
    const auto k = static_cast<std::size_t>(it - grid.begin());
    return (x - grid[k - 1] <= grid[k] - x) ? k - 1 : k;
}

}  // namespace

double kernel_weight(Kernel kernel, double z) {
    switch (kernel) {
        case Kernel::gaussian:
            return std::exp(-0.5 * z * z);
        case Kernel::epanechnikov:
            return std::abs(z) < 1.0 ? 1.0 - z * z : 0.0;
    }
    return 0.0;
}

Smoother1D::Smoother1D(double bw, Kernel k) : bandwidth(bw), kernel(k) {
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw ParameterError("bandwidth must be positive");
}

std::vector<double> Smoother1D::operator()(std::span<const double> x, std::span<const double> y,
                                           std::span<const double> weights,
                                           std::span<const double> eval_points) const {
    return smooth_1d(x, y, weights, bandwidth, eval_points, kernel);
}

Smoother2D::Smoother2D(std::pair<double, double> bws, Kernel k) : bandwidths(bws), kernel(k) {
    if (!(bandwidths.first > 0.0) || !(bandwidths.second > 0.0)) {
        throw ParameterError("bandwidths must be positive");
    }
}

std::vector<double> smooth_1d(std::span<const double> x, std::span<const double> y,
                              std::span<const double> weights, double bandwidth,
                              std::span<const double> eval_points, Kernel kernel) {
    check_lengths(x.size(), y, weights, "smooth_1d");
    if (x.size() < 2) throw SizeError("smooth_1d needs at least 2 observations");
    if (!(bandwidth > 0.0)) throw ParameterError("bandwidth must be positive");
    const double mass_tol = kMassTol * mean_weight(weights, x.size());

    std::vector<double> out;
    out.reserve(eval_points.size());
    for (double x0 : eval_points) {
        const auto m = line_moments(x, y, weights, bandwidth, x0, kernel);
        if (m.degenerate(mass_tol)) {
            throw BandwidthTooSmallError("bandwidth " + text::format_double(bandwidth) +
                                         " leaves a degenerate local fit at " + text::format_double(x0));
        }
        out.push_back(m.intercept());
    }
    return out;
}

Eigen::MatrixXd smooth_2d(std::span<const double> s, std::span<const double> t, std::span<const double> z,
                          std::span<const double> weights, std::pair<double, double> bandwidths,
                          std::span<const double> eval_grid, Kernel kernel, Symmetrize symmetrize) {
    const std::size_t n = s.size();
    check_lengths(n, t, weights, "smooth_2d");
    check_lengths(n, z, weights, "smooth_2d");
    if (n < 3) throw SizeError("smooth_2d needs at least 3 observations");
    const auto [hs, ht] = bandwidths;
    if (!(hs > 0.0) || !(ht > 0.0)) throw ParameterError("bandwidths must be positive");
    const double mass_tol = kMassTol * mean_weight(weights, n);

    const std::size_t m = eval_grid.size();
    // Separable kernel: tabulate each factor once. ks is point-major, kt
    // grid-major so the inner loop runs over contiguous memory.
    std::vector<double> us(n * m), vs(m * n), ks(n * m), kt(m * n);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t a = 0; a < m; ++a) {
            const double u = (s[p] - eval_grid[a]) / hs;
            const double v = (t[p] - eval_grid[a]) / ht;
            us[p * m + a] = u;
            ks[p * m + a] = weight_at(weights, p) * kernel_weight(kernel, u);
            vs[a * n + p] = v;
            kt[a * n + p] = kernel_weight(kernel, v);
        }
    }

    Eigen::MatrixXd surface(m, m);
    std::vector<double> ka(n), ua(n);
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t p = 0; p < n; ++p) {
            ka[p] = ks[p * m + a];
            ua[p] = us[p * m + a];
        }
        for (std::size_t b = 0; b < m; ++b) {
            const double* ktb = &kt[b * n];
            const double* vb = &vs[b * n];
            PlaneSystem sys;
            for (std::size_t p = 0; p < n; ++p) {
                const double k = ka[p] * ktb[p];
                if (k == 0.0) continue;
                sys.add(k, ua[p], vb[p], z[p]);
            }
            sys.complete();
            if (sys.degenerate(mass_tol)) {
                throw BandwidthTooSmallError("bandwidths (" + text::format_double(hs) + ", " + text::format_double(ht) +
                                             ") leave a degenerate local fit at (" + text::format_double(eval_grid[a]) +
                                             ", " + text::format_double(eval_grid[b]) + ")");
            }
            surface(a, b) = sys.a.ldlt().solve(sys.b)(0);
        }
    }
    if (symmetrize == Symmetrize::yes) {
        Eigen::MatrixXd sym(m, m);
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t b = 0; b < m; ++b) sym(a, b) = 0.5 * (surface(a, b) + surface(b, a));
        }
        return sym;
    }
    return surface;
}

double gcv_score_1d(std::span<const double> x, std::span<const double> y, std::span<const double> weights,
                    double bandwidth, Kernel kernel, double extra_rss) {
    check_lengths(x.size(), y, weights, "gcv");
    const double mass_tol = kMassTol * mean_weight(weights, x.size());
    double n = 0, rss = extra_rss, trace = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto m = line_moments(x, y, weights, bandwidth, x[i], kernel);
        if (m.degenerate(mass_tol)) return std::numeric_limits<double>::infinity();
        const double wi = weight_at(weights, i);
        const double r = y[i] - m.intercept();
        n += wi;
        rss += wi * r * r;
        trace += wi * m.s2 / m.det();
    }
    const double denom = 1.0 - trace / n;
    if (!(denom > 0.0)) return std::numeric_limits<double>::infinity();
    return (rss / n) / (denom * denom);
}

double select_bandwidth_gcv(std::span<const double> x, std::span<const double> y,
                            std::span<const double> weights, std::span<const double> candidates, Kernel kernel,
                            double extra_rss) {
    check_lengths(x.size(), y, weights, "gcv");
    return rank_bandwidths_gcv(x, y, weights, candidates, kernel, extra_rss).front();
}

std::vector<double> rank_bandwidths_gcv(std::span<const double> x, std::span<const double> y,
                                        std::span<const double> weights, std::span<const double> candidates,
                                        Kernel kernel, double extra_rss) {
    check_lengths(x.size(), y, weights, "gcv");
    return rank_by_gcv(candidates, y, weights, extra_rss,
                       [&](double h) { return gcv_score_1d(x, y, weights, h, kernel, extra_rss); });
}

double gcv_score_2d(std::span<const double> s, std::span<const double> t, std::span<const double> z,
                    std::span<const double> weights, double bandwidth, Kernel kernel, double extra_rss) {
    const std::size_t n = s.size();
    check_lengths(n, t, weights, "gcv");
    check_lengths(n, z, weights, "gcv");
    const double mass_tol = kMassTol * mean_weight(weights, n);
    double total_w = 0, rss = extra_rss, trace = 0;
    for (std::size_t q = 0; q < n; ++q) {
        PlaneSystem sys;
        for (std::size_t p = 0; p < n; ++p) {
            const double u = (s[p] - s[q]) / bandwidth;
            const double v = (t[p] - t[q]) / bandwidth;
            const double k = weight_at(weights, p) * kernel_weight(kernel, u) * kernel_weight(kernel, v);
            if (k == 0.0) continue;
            sys.add(k, u, v, z[p]);
        }
        sys.complete();
        if (sys.degenerate(mass_tol)) return std::numeric_limits<double>::infinity();
        const auto ldlt = sys.a.ldlt();
        const double fit = ldlt.solve(sys.b)(0);
        const double inv00 = ldlt.solve(Eigen::Vector3d::UnitX())(0);
        const double wq = weight_at(weights, q);
        total_w += wq;
        rss += wq * (z[q] - fit) * (z[q] - fit);
        trace += wq * inv00;
    }
    const double denom = 1.0 - trace / total_w;
    if (!(denom > 0.0)) return std::numeric_limits<double>::infinity();
    return (rss / total_w) / (denom * denom);
}

double select_bandwidth_gcv_2d(std::span<const double> s, std::span<const double> t, std::span<const double> z,
                               std::span<const double> weights, std::span<const double> candidates, Kernel kernel,
                               double extra_rss) {
    return rank_bandwidths_gcv_2d(s, t, z, weights, candidates, kernel, extra_rss).front();
}

std::vector<double> rank_bandwidths_gcv_2d(std::span<const double> s, std::span<const double> t,
                                           std::span<const double> z, std::span<const double> weights,
                                           std::span<const double> candidates, Kernel kernel, double extra_rss) {
    check_lengths(s.size(), t, weights, "gcv");
    check_lengths(s.size(), z, weights, "gcv");
    return rank_by_gcv(candidates, z, weights, extra_rss,
                       [&](double h) { return gcv_score_2d(s, t, z, weights, h, kernel, extra_rss); });
}

std::vector<double> geometric_candidates(double lower, double upper, int count) {
    if (!(lower > 0.0) || !(upper > lower) || count < 2) {
        throw ParameterError("geometric candidates need 0 < lower < upper and count >= 2");
    }
    std::vector<double> out(static_cast<std::size_t>(count));
    const double ratio = std::log(upper / lower) / (count - 1);
    for (int k = 0; k < count; ++k) out[k] = lower * std::exp(ratio * k);
    out.back() = upper;
    return out;
}

std::vector<double> default_bandwidth_candidates(double range, int grid_size) {
    return geometric_candidates(range / (grid_size - 1), range / 2.0, 10);
}

Binned1D bin_1d(std::span<const double> x, std::span<const double> y, std::span<const double> grid) {
    std::map<std::size_t, std::array<double, 3>> acc;  // count, sum x, sum y
    for (std::size_t i = 0; i < x.size(); ++i) {
        auto& a = acc[nearest_index(grid, x[i])];
        a[0] += 1;
        a[1] += x[i];
        a[2] += y[i];
    }
    Binned1D out;
    std::map<std::size_t, std::size_t> slot;
    for (const auto& [key, a] : acc) {
        slot[key] = out.x.size();
        out.weight.push_back(a[0]);
        out.x.push_back(a[1] / a[0]);
        out.y.push_back(a[2] / a[0]);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = y[i] - out.y[slot[nearest_index(grid, x[i])]];
        out.within_ss += d * d;
    }
    return out;
}

Binned2D bin_2d(std::span<const double> s, std::span<const double> t, std::span<const double> z,
                std::span<const double> grid) {
    const std::size_t m = grid.size();
    std::vector<std::size_t> keys(s.size());
    std::map<std::size_t, std::array<double, 4>> acc;  // count, sum s, sum t, sum z
    for (std::size_t i = 0; i < s.size(); ++i) {
        keys[i] = nearest_index(grid, s[i]) * m + nearest_index(grid, t[i]);
        auto& a = acc[keys[i]];
        a[0] += 1;
        a[1] += s[i];
        a[2] += t[i];
        a[3] += z[i];
    }
    Binned2D out;
    std::map<std::size_t, std::size_t> slot;
    for (const auto& [key, a] : acc) {
        slot[key] = out.s.size();
        out.weight.push_back(a[0]);
        out.s.push_back(a[1] / a[0]);
        out.t.push_back(a[2] / a[0]);
        out.z.push_back(a[3] / a[0]);
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double d = z[i] - out.z[slot[keys[i]]];
        out.within_ss += d * d;
    }
    return out;
}

}  // namespace longfpca
