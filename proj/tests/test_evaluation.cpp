#include <cmath>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "longfpca/errors.hpp"
#include "longfpca/evaluation.hpp"
#include "longfpca/grid.hpp"

using namespace longfpca;

namespace {

ScenarioConfig small_study1() {
    ScenarioConfig cfg;
    cfg.study = 1;
    cfg.n_subjects = 60;
    cfg.n_train = 30;
    cfg.n_replicates = 2;
    cfg.calibration_pool = 2000;
    cfg.base_seed = 11;
    cfg.roster = {ModelKind::lmm_quad, ModelKind::fpca_fve90, ModelKind::reference};
    return cfg;
}

std::vector<std::string> lines_of(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

TEST(RmseSplit, PerfectPredictionIsZero) {
    const std::vector<double> y{1.0, 2.0, 3.0, 4.0};
    const auto r = rmse_split(y, y, {false, false, true, true});
    EXPECT_EQ(*r.observed, 0.0);
    EXPECT_EQ(*r.missing, 0.0);
}

TEST(RmseSplit, ConstantErrorGivesItsMagnitude) {
    const std::vector<double> truth{1.0, 2.0, 3.0, 4.0, 5.0};
    std::vector<double> pred(truth);
    for (auto& v : pred) v -= 0.7;
    const auto r = rmse_split(pred, truth, {false, true, false, true, true});
    EXPECT_NEAR(*r.observed, 0.7, 1e-12);
    EXPECT_NEAR(*r.missing, 0.7, 1e-12);
}

TEST(RmseSplit, HandComputedInstance) {
    // Observed errors (1, -1) -> 1; missing errors (3, 4) -> sqrt(12.5).
    const std::vector<double> truth{0.0, 0.0, 0.0, 0.0};
    const std::vector<double> pred{1.0, -1.0, 3.0, 4.0};
    const auto r = rmse_split(pred, truth, {false, false, true, true});
    EXPECT_DOUBLE_EQ(*r.observed, 1.0);
    EXPECT_DOUBLE_EQ(*r.missing, std::sqrt(12.5));
}

TEST(RmseSplit, PooledIdentity) {
    const std::vector<double> truth{0.3, -1.2, 2.2, 0.9, 4.1, -0.4, 1.5};
    const std::vector<double> pred{0.1, -1.0, 2.9, 0.2, 4.6, 0.3, 1.4};
    const std::vector<bool> miss{false, true, false, false, true, true, false};
    const auto r = rmse_split(pred, truth, miss);
    double total = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) total += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    const double n_obs = 4.0, n_miss = 3.0;
    EXPECT_NEAR(n_obs * *r.observed * *r.observed + n_miss * *r.missing * *r.missing, total, 1e-12);
}

TEST(RmseSplit, EmptySplitsAndEmptyInput) {
    const std::vector<double> y{1.0, 2.0};
    const auto r = rmse_split(y, y, {false, false});
    EXPECT_TRUE(r.observed.has_value());
    EXPECT_FALSE(r.missing.has_value());
    EXPECT_THROW(rmse_split(std::vector<double>{}, std::vector<double>{}, {}), NoDataError);
    EXPECT_THROW(rmse_split(y, std::vector<double>{1.0}, {false}), ParameterError);
}

TEST(StandardizedRmse, Examples) {
    EXPECT_DOUBLE_EQ(standardized_rmse(2.0, 2.0), 1.0);
    EXPECT_DOUBLE_EQ(standardized_rmse(4.0, 2.0), 2.0);
    EXPECT_DOUBLE_EQ(standardized_rmse(0.0, 2.0), 0.0);
    EXPECT_THROW(standardized_rmse(1.0, 0.0), DegenerateReferenceError);
    EXPECT_THROW(standardized_rmse(1.0, std::nan("")), DegenerateReferenceError);
}

TEST(AlignSign, FlipsNegatedEstimate) {
    const auto grid = equispaced_grid({0.0, 1.0}, 51);
    std::vector<double> truth(51), neg(51);
    for (std::size_t a = 0; a < 51; ++a) {
        truth[a] = std::numbers::sqrt2 * std::sin(std::numbers::pi * grid[a]);
        neg[a] = -truth[a];
    }
    const auto out = align_sign(grid, neg, truth);
    EXPECT_EQ(out.values, truth);
    EXPECT_FALSE(out.orthogonal);
    EXPECT_EQ(align_sign(grid, truth, truth).values, truth);
}

TEST(AlignSign, IdempotentAndSignInvariant) {
    const auto grid = equispaced_grid({0.0, 1.0}, 41);
    std::vector<double> truth(41), est(41), neg(41);
    for (std::size_t a = 0; a < 41; ++a) {
        truth[a] = std::cos(grid[a]);
        est[a] = -0.8 * std::cos(grid[a]) + 0.1 * grid[a];
        neg[a] = -est[a];
    }
    const auto once = align_sign(grid, est, truth);
    EXPECT_EQ(align_sign(grid, once.values, truth).values, once.values);
    EXPECT_EQ(align_sign(grid, neg, truth).values, once.values);
}

TEST(AlignSign, OrthogonalIsFlagged) {
    const std::vector<double> grid{0.0, 1.0, 2.0};
    const std::vector<double> truth{1.0, 0.0, -1.0};
    const std::vector<double> est{1.0, 1.0, 1.0};
    const auto out = align_sign(grid, est, truth);
    EXPECT_TRUE(out.orthogonal);
    EXPECT_EQ(out.values, est);
}

TEST(RelativeBias, ZeroAndTenPercent) {
    const auto grid = equispaced_grid({0.0, 1.0}, 11);
    std::vector<double> truth(11);
    for (std::size_t a = 0; a < 11; ++a) truth[a] = 1.0 + grid[a];
    const auto zero = relative_bias({truth, truth, truth}, truth, grid);
    for (double b : zero.bias) EXPECT_NEAR(b, 0.0, 1e-15);

    std::vector<double> up(truth);
    for (auto& v : up) v *= 1.1;
    const auto ten = relative_bias({up, up}, truth, grid);
    for (std::size_t a = 0; a < 11; ++a) {
        EXPECT_FALSE(ten.absolute[a]);
        EXPECT_NEAR(ten.bias[a], 0.10, 1e-12);
    }
}

TEST(RelativeBias, SmallTruthReportsAbsoluteBias) {
    const std::vector<double> grid{0.0, 1.0, 2.0};
    const std::vector<double> truth{0.0, 1.0, 2.0};
    const std::vector<double> est{0.5, 1.0, 2.0};
    const auto out = relative_bias({est, est}, truth, grid);
    EXPECT_TRUE(out.absolute[0]);
    EXPECT_DOUBLE_EQ(out.bias[0], 0.5);
    EXPECT_FALSE(out.absolute[1]);
}

TEST(RelativeBias, NeedsTwoReplicates) {
    const std::vector<double> grid{0.0, 1.0};
    const std::vector<double> truth{1.0, 1.0};
    EXPECT_THROW(relative_bias({truth}, truth, grid), SizeError);
}

// ---------------------------------------------------------------------------
// Configuration

TEST(ScenarioConfig, ValidationNamesTheField) {
    ScenarioConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.subjects(), 700u);
    cfg.study = 2;
    EXPECT_EQ(cfg.subjects(), 200u);

    ScenarioConfig bad;
    bad.dropout_rate = 1.0;
    try {
        bad.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("dropout.rate"), std::string::npos);
    }
    bad = ScenarioConfig{};
    bad.n_train = 700;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(ModelKind, NamesRoundTrip) {
    for (auto m : {ModelKind::lmm_quad, ModelKind::lmm_cub, ModelKind::lmm_spl_quant, ModelKind::lmm_spl_equi,
                   ModelKind::fpca_fve90, ModelKind::fpca_fve99, ModelKind::reference}) {
        EXPECT_EQ(model_kind_from_string(to_string(m)), m);
    }
    EXPECT_THROW(model_kind_from_string("GAM"), Error);
}

// ---------------------------------------------------------------------------
// Studies

TEST(Study1, ReferenceAgainstItselfIsOne) {
    const auto report = run_study1(small_study1());
    ASSERT_EQ(report.replicates.size(), 6u);
    for (const auto& r : report.replicates) {
        if (r.model != "reference") continue;
        ASSERT_TRUE(r.std_rmse_obs.has_value());
        EXPECT_EQ(*r.std_rmse_obs, 1.0);
        if (r.std_rmse_miss) {
            EXPECT_EQ(*r.std_rmse_miss, 1.0);
        }
    }
}

TEST(Study1, NoDropoutHasNoMissingRmse) {
    auto cfg = small_study1();
    cfg.dropout_rate = 0.0;
    const auto report = run_study1(cfg);
    EXPECT_FALSE(report.dropout.has_value());
    for (const auto& r : report.replicates) {
        EXPECT_FALSE(r.rmse_miss.has_value()) << r.model;
        EXPECT_FALSE(r.std_rmse_miss.has_value()) << r.model;
        EXPECT_TRUE(r.rmse_obs.has_value()) << r.model;
    }
    for (const auto& s : report.summary) {
        if (s.metric == "rmse_miss" || s.metric == "std_rmse_miss") {
            EXPECT_EQ(s.n, 0u);
            EXPECT_TRUE(std::isnan(s.median));
        }
    }
}

TEST(Study1, CalibratedRateNearTarget) {
    auto cfg = small_study1();
    cfg.mechanism = DropoutMechanism::threshold_mnar;
    cfg.dropout_rate = 0.3;
    const auto prepared = prepare_scenario(cfg);
    ASSERT_TRUE(prepared.calibrated_rate.has_value());
    EXPECT_NEAR(*prepared.calibrated_rate, 0.3, cfg.calibration_tolerance + 1e-12);
}

TEST(Study1, DeterministicAcrossThreadCounts) {
    auto cfg = small_study1();
    const auto a = run_study1(cfg);
    cfg.threads = 3;
    const auto b = run_study1(cfg);
    EXPECT_EQ(replicates_csv(a), replicates_csv(b));
    EXPECT_EQ(summary_csv(a), summary_csv(b));
}

TEST(Study1, CsvLayout) {
    const auto report = run_study1(small_study1());
    const auto rep = lines_of(replicates_csv(report));
    ASSERT_EQ(rep.size(), 1u + 2u * 3u);
    EXPECT_EQ(rep[0], "replicate,model,rmse_obs,rmse_miss,std_rmse_obs,std_rmse_miss,converged");
    const auto sum = lines_of(summary_csv(report));
    EXPECT_EQ(sum[0], "model,metric,n,median,q1,q3");
    EXPECT_EQ(sum.size(), 1u + 3u * 4u);
}

TEST(Study2, SingleReplicateSkipsBias) {
    ScenarioConfig cfg;
    cfg.study = 2;
    cfg.n_replicates = 1;
    cfg.mechanism = DropoutMechanism::increasing_mar;
    cfg.calibration_pool = 2000;
    const auto report = run_study2(cfg);
    EXPECT_EQ(report.replicates.size(), 1u);
    EXPECT_TRUE(report.bias.empty());
    EXPECT_EQ(report.samples.size(), 3u);
    EXPECT_EQ(report.truth.size(), 3u);
}

TEST(Study2, BiasCsvLayout) {
    ScenarioConfig cfg;
    cfg.study = 2;
    cfg.n_replicates = 2;
    cfg.dropout_rate = 0.0;
    const auto report = run_study2(cfg);
    ASSERT_EQ(report.bias.size(), 3u);
    const auto lines = lines_of(bias_csv(report));
    EXPECT_EQ(lines[0], "t,target,rel_bias,abs_bias_flag");
    EXPECT_EQ(lines.size(), 1u + 3u * report.grid.size());
    EXPECT_EQ(estimates_csv(report), estimates_csv(run_study2(cfg)));
}

TEST(Study, ParallelForVisitsEveryIndexOnce) {
    std::vector<int> hits(100, 0);
    parallel_for(100, 4, [&](std::size_t i) { ++hits[i]; });
    for (int h : hits) EXPECT_EQ(h, 1);
    EXPECT_THROW(parallel_for(10, 2, [](std::size_t i) {
                     if (i == 7) throw NoDataError("x");
                 }),
                 NoDataError);
}
