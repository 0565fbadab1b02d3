#include "longfpca/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "longfpca/errors.hpp"
#include "longfpca/grid.hpp"
#include "longfpca/spline_basis.hpp"
#include "longfpca/text_io.hpp"

namespace longfpca {

// ---------------------------------------------------------------------------
// Metrics

RmseSplit rmse_split(std::span<const double> pred, std::span<const double> truth, const std::vector<bool>& missing) {
    if (pred.size() != truth.size() || pred.size() != missing.size()) {
        throw ParameterError("rmse_split inputs have different lengths");
    }
    double ss[2] = {0.0, 0.0};
    std::size_t count[2] = {0, 0};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - truth[i];
        const int s = missing[i] ? 1 : 0;
        ss[s] += e * e;
        ++count[s];
    }
    if (count[0] + count[1] == 0) throw NoDataError("no points to score");
    RmseSplit out;
    if (count[0] > 0) out.observed = std::sqrt(ss[0] / static_cast<double>(count[0]));
    if (count[1] > 0) out.missing = std::sqrt(ss[1] / static_cast<double>(count[1]));
    return out;
}

double standardized_rmse(double model_rmse, double reference_rmse) {
    if (!(reference_rmse > 0.0) || !std::isfinite(reference_rmse)) {
        throw DegenerateReferenceError("reference RMSE must be positive, got " + text::format_double(reference_rmse));
    }
    return model_rmse / reference_rmse;
}

AlignedFunction align_sign(std::span<const double> grid, std::span<const double> estimated,
                           std::span<const double> truth) {
    const double ip = inner_product(grid, estimated, truth);
    AlignedFunction out{{estimated.begin(), estimated.end()}, ip == 0.0};
    if (ip < 0.0) {
        for (auto& v : out.values) v = -v;
    }
    return out;
}

BiasCurve relative_bias(const std::vector<std::vector<double>>& estimates, std::span<const double> truth,
                        std::span<const double> grid) {
    if (estimates.size() < 2) throw SizeError("relative bias needs at least 2 replicates");
    if (truth.size() != grid.size()) throw ParameterError("truth and grid lengths differ");
    double max_abs = 0.0;
    for (double v : truth) max_abs = std::max(max_abs, std::abs(v));
    BiasCurve out;
    out.grid.assign(grid.begin(), grid.end());
    out.bias.resize(grid.size());
    out.absolute.resize(grid.size());
    for (std::size_t a = 0; a < grid.size(); ++a) {
        double sum = 0.0;
        for (const auto& e : estimates) {
            if (e.size() != grid.size()) throw ParameterError("estimate length differs from the grid");
            sum += e[a];
        }
        const double diff = sum / static_cast<double>(estimates.size()) - truth[a];
        const bool absolute = !(std::abs(truth[a]) > 0.05 * max_abs);
        out.absolute[a] = absolute;
        out.bias[a] = absolute ? diff : diff / truth[a];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Configuration

std::string to_string(ModelKind m) {
    switch (m) {
        case ModelKind::lmm_quad: return "LMM_quad";
        case ModelKind::lmm_cub: return "LMM_cub";
        case ModelKind::lmm_spl_quant: return "LMM_spl_quant";
        case ModelKind::lmm_spl_equi: return "LMM_spl_equi";
        case ModelKind::fpca_fve90: return "FPCA_fve90";
        case ModelKind::fpca_fve99: return "FPCA_fve99";
        case ModelKind::reference: return "reference";
    }
    return "unknown";
}

ModelKind model_kind_from_string(std::string_view name) {
    for (auto m : {ModelKind::lmm_quad, ModelKind::lmm_cub, ModelKind::lmm_spl_quant, ModelKind::lmm_spl_equi,
                   ModelKind::fpca_fve90, ModelKind::fpca_fve99, ModelKind::reference}) {
        const auto canonical = to_string(m);
        if (name.size() == canonical.size() &&
            std::equal(name.begin(), name.end(), canonical.begin(),
                       [](char a, char b) { return std::tolower(a) == std::tolower(b); })) {
            return m;
        }
    }
    throw ConfigError("unknown model `" + std::string(name) +
                      "` (expected LMM_quad, LMM_cub, LMM_spl_quant, LMM_spl_equi, FPCA_fve90, FPCA_fve99 or "
                      "reference)");
}

std::size_t ScenarioConfig::subjects() const { return n_subjects.value_or(study == 2 ? 200 : 700); }

void ScenarioConfig::validate() const {
    if (study != 1 && study != 2) throw ConfigError("scenario.study must be 1 or 2");
    if (!(spacing > 0.0)) throw ConfigError("scenario.spacing must be positive");
    if (!(horizon > 0.0)) throw ConfigError("scenario.horizon must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout.rate must lie in [0, 1)");
    if (study == 1 && roster.empty()) throw ConfigError("scenario.roster must name at least one model");
    if (n_replicates < 1) throw ConfigError("scenario.replicates must be at least 1");
    if (subjects() < 2) throw ConfigError("scenario.subjects must be at least 2");
    if (study == 1 && (n_train < 2 || n_train >= subjects())) {
        throw ConfigError("scenario.train must lie in [2, subjects)");
    }
    if (!(discretize_step >= 0.0)) throw ConfigError("scenario.discretize_step must be nonnegative");
    if (calibration_pool < 100) throw ConfigError("dropout.calibration_pool must be at least 100");
    if (!(calibration_tolerance > 0.0)) throw ConfigError("dropout.calibration_tolerance must be positive");
    if (fpca_grid_size < 10) throw ConfigError("fpca.grid_size must be at least 10");
    if (lmm_max_iterations < 1) throw ConfigError("lmm.max_iterations must be at least 1");
    if (threads < 1) throw ConfigError("threads must be at least 1");
}

PreparedScenario prepare_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    PreparedScenario out;
    auto& design = out.design;
    design.n_subjects = cfg.subjects();
    design.visits = VisitGridSpec::for_spacing(cfg.spacing, cfg.horizon);
    if (cfg.study == 2) {
        design.generator = GeneratorKind::kl;
        design.kl = derive_kl_spec(cfg.kl_seed);
    }
    if (cfg.dropout_rate > 0.0) {
        const auto pool = make_calibration_pool(design.subject_generator(), cfg.calibration_pool,
                                                derive_seed(cfg.base_seed, {0xCA11B4A7E}));
        DropoutSpec spec;
        spec.mechanism = cfg.mechanism;
        spec.target_rate = cfg.dropout_rate;
        spec.slope = cfg.dropout_slope.value_or(default_slope(cfg.mechanism));
        spec.threshold = cfg.dropout_threshold.value_or(default_threshold(pool));
        spec = calibrate_dropout(spec, pool, cfg.calibration_tolerance);
        out.calibrated_rate = dropout_fraction(pool, spec);
        design.dropout = spec;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parallel driver

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& task) {
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, count));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    task(i);
                } catch (...) {
                    const std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Study 1

namespace {

// Predictions for every test subject at its complete-data times, from its
// observed data.
using Predictor = std::function<std::vector<double>(const Trajectory& observed, std::span<const double> times)>;

struct TestSet {
    const Dataset* complete;
    const Dataset* observed;
};

RmseSplit score(const Predictor& predict, const TestSet& test) {
    std::vector<double> pred;
    std::vector<double> truth;
    std::vector<bool> missing;
    for (std::size_t i = 0; i < test.complete->size(); ++i) {
        const auto& full = (*test.complete)[i];
        const auto& seen = (*test.observed)[i];
        const auto p = predict(seen, full.times());
        const double last_seen = seen.times().back();
        for (std::size_t j = 0; j < full.size(); ++j) {
            pred.push_back(p[j]);
            truth.push_back(full.values()[j]);
            missing.push_back(full.times()[j] > last_seen);
        }
    }
    return rmse_split(pred, truth, missing);
}

struct FittedModel {
    Predictor predict;
    bool converged = true;
};

FittedModel fit_lmm_model(const Dataset& train, const BasisSpec& basis, const ScenarioConfig& cfg) {
    LmmOptions options;
    options.re_structure = cfg.lmm_re_structure;
    options.max_iterations = cfg.lmm_max_iterations;
    auto model = std::make_shared<LmmModel>(fit_lmm(train, basis, options));
    return {[model](const Trajectory& seen, std::span<const double> times) { return predict_lmm(*model, seen, times); },
            model->converged};
}

FittedModel fit_roster_model(ModelKind kind, const Dataset& train, const ScenarioConfig& cfg) {
    switch (kind) {
        case ModelKind::lmm_quad: return fit_lmm_model(train, BasisSpec::polynomial(2), cfg);
        case ModelKind::lmm_cub: return fit_lmm_model(train, BasisSpec::polynomial(3), cfg);
        case ModelKind::lmm_spl_quant:
        case ModelKind::lmm_spl_equi: {
            const auto times = train.pooled_times();
            const auto [lo, hi] = std::minmax_element(times.begin(), times.end());
            const auto strategy = kind == ModelKind::lmm_spl_quant ? KnotStrategy::quantile : KnotStrategy::equidistant;
            const auto knots = place_knots(times, 2, strategy, {*lo, *hi});
            return fit_lmm_model(train, BasisSpec::natural_cubic(knots, {*lo, *hi}), cfg);
        }
        case ModelKind::fpca_fve90:
        case ModelKind::fpca_fve99: {
            FpcaOptions options;
            options.grid_size = cfg.fpca_grid_size;
            options.target_fve = kind == ModelKind::fpca_fve90 ? 0.90 : 0.99;
            auto model = std::make_shared<FpcaModel>(fit_fpca(train, options));
            return {[model](const Trajectory& seen, std::span<const double> times) {
                        return predict_trajectory(*model, seen, times);
                    },
                    true};
        }
        case ModelKind::reference: break;
    }
    throw ParameterError("reference model is fitted separately");
}

// B-spline mixed model with 3 internal knots at the quartiles of the
// complete training times.
FittedModel fit_reference(const Dataset& complete_train, const ScenarioConfig& cfg) {
    const auto times = complete_train.pooled_times();
    const std::pair<double, double> boundary{0.0, cfg.horizon};
    const auto knots = place_knots(times, 3, KnotStrategy::quantile, boundary);
    return fit_lmm_model(complete_train, BasisSpec::bspline(knots, boundary, 4, true), cfg);
}

}  // namespace

std::vector<ReplicateResult> run_study1_replicate(const ScenarioConfig& cfg, const StudyDesign& design,
                                                  std::size_t replicate) {
    const auto data = gen_study_dataset(design, derive_seed(cfg.base_seed, {1, replicate}));
    const bool discretize = cfg.discretize_step > 0.0;
    const Dataset complete = discretize ? discretize_times(data.complete, cfg.discretize_step) : data.complete;
    const Dataset observed = discretize ? discretize_times(data.observed, cfg.discretize_step) : data.observed;
    const auto split_seed = derive_seed(cfg.base_seed, {2, replicate});
    const auto [train_c, test_c] = split_train_test(complete, cfg.n_train, split_seed);
    const auto [train_o, test_o] = split_train_test(observed, cfg.n_train, split_seed);
    const TestSet test{&test_c, &test_o};

    std::optional<RmseSplit> reference_rmse;
    std::string reference_failure;
    try {
        const auto reference = fit_reference(train_c, cfg);
        reference_rmse = score(reference.predict, test);
        if (!reference.converged) reference_failure = "reference fit did not converge";
    } catch (const Error& e) {
        reference_failure = std::string("reference fit failed: ") + e.what();
    }

    std::vector<ReplicateResult> results;
    for (const auto kind : cfg.roster) {
        ReplicateResult r;
        r.replicate = replicate;
        r.model = to_string(kind);
        try {
            std::optional<RmseSplit> rmse;
            if (kind == ModelKind::reference) {
                rmse = reference_rmse;
                r.converged = reference_failure.empty();
            } else {
                const auto fitted = fit_roster_model(kind, train_o, cfg);
                rmse = score(fitted.predict, test);
                r.converged = fitted.converged;
                if (!fitted.converged) r.failure = "fit did not converge";
            }
            if (rmse) {
                r.rmse_obs = rmse->observed;
                r.rmse_miss = rmse->missing;
            }
            if (reference_rmse) {
                if (r.rmse_obs && reference_rmse->observed) {
                    r.std_rmse_obs = standardized_rmse(*r.rmse_obs, *reference_rmse->observed);
                }
                if (r.rmse_miss && reference_rmse->missing) {
                    r.std_rmse_miss = standardized_rmse(*r.rmse_miss, *reference_rmse->missing);
                }
            }
        } catch (const Error& e) {
            r.converged = false;
            r.failure = e.what();
        }
        if (!reference_failure.empty() && r.failure.empty()) r.failure = reference_failure;
        results.push_back(std::move(r));
    }
    return results;
}

namespace {

void summarize(const std::vector<ReplicateResult>& rows, const std::vector<std::string>& models,
               std::vector<SummaryRow>& out) {
    using Getter = std::optional<double> ReplicateResult::*;
    const std::pair<const char*, Getter> metrics[] = {{"std_rmse_miss", &ReplicateResult::std_rmse_miss},
                                                      {"std_rmse_obs", &ReplicateResult::std_rmse_obs},
                                                      {"rmse_miss", &ReplicateResult::rmse_miss},
                                                      {"rmse_obs", &ReplicateResult::rmse_obs}};
    for (const auto& model : models) {
        for (const auto& [name, member] : metrics) {
            std::vector<double> values;
            for (const auto& r : rows) {
                if (r.model == model && (r.*member)) values.push_back(*(r.*member));
            }
            SummaryRow row{model, name, values.size(), std::nan(""), std::nan(""), std::nan("")};
            if (!values.empty()) {
                std::sort(values.begin(), values.end());
                row.median = quantile_sorted(values, 0.5);
                row.q1 = quantile_sorted(values, 0.25);
                row.q3 = quantile_sorted(values, 0.75);
            }
            out.push_back(row);
        }
    }
}

EvalReport base_report(const ScenarioConfig& cfg, const PreparedScenario& prepared) {
    EvalReport report;
    report.config = cfg;
    report.dropout = prepared.design.dropout;
    report.calibrated_rate = prepared.calibrated_rate;
    return report;
}

}  // namespace

EvalReport run_study1(const ScenarioConfig& cfg) {
    if (cfg.study != 1) throw ConfigError("run_study1 needs scenario.study = 1");
    const auto prepared = prepare_scenario(cfg);
    auto report = base_report(cfg, prepared);

    std::vector<std::vector<ReplicateResult>> per_replicate(cfg.n_replicates);
    parallel_for(cfg.n_replicates, cfg.threads, [&](std::size_t r) {
        per_replicate[r] = run_study1_replicate(cfg, prepared.design, r);
    });
    for (auto& rows : per_replicate) {
        for (auto& row : rows) report.replicates.push_back(std::move(row));
    }
    std::vector<std::string> models;
    for (auto kind : cfg.roster) models.push_back(to_string(kind));
    summarize(report.replicates, models, report.summary);
    return report;
}

// ---------------------------------------------------------------------------
// Study 2

EvalReport run_study2(const ScenarioConfig& cfg) {
    if (cfg.study != 2) throw ConfigError("run_study2 needs scenario.study = 2");
    const auto prepared = prepare_scenario(cfg);
    auto report = base_report(cfg, prepared);
    const auto& kl = prepared.design.kl;
    const auto m = static_cast<std::size_t>(kl.components.rows());
    report.grid = kl.grid;
    const std::vector<std::string> targets{"mean", "phi1", "phi2"};
    report.truth = {{"mean", kl.mean},
                    {"phi1", {kl.components.col(0).data(), kl.components.col(0).data() + m}},
                    {"phi2", {kl.components.col(1).data(), kl.components.col(1).data() + m}}};

    struct Outcome {
        std::vector<std::vector<double>> estimates;  // mean, phi1, phi2 on the grid
        std::string failure;
    };
    std::vector<Outcome> outcomes(cfg.n_replicates);
    parallel_for(cfg.n_replicates, cfg.threads, [&](std::size_t r) {
        auto& out = outcomes[r];
        try {
            const auto data = gen_study_dataset(prepared.design, derive_seed(cfg.base_seed, {1, r}));
            FpcaOptions options;
            options.grid_size = cfg.fpca_grid_size;
            options.fixed_components = 2;
            const auto model = fit_fpca(data.observed, options);
            std::vector<double> mean(m);
            for (std::size_t a = 0; a < m; ++a) mean[a] = model.mean_at(kl.grid[a]);
            out.estimates.push_back(std::move(mean));
            const Eigen::MatrixXd phi = model.eigenfunctions_at(kl.grid);
            for (Eigen::Index k = 0; k < 2; ++k) {
                const std::vector<double> est(phi.col(k).data(), phi.col(k).data() + m);
                auto aligned = align_sign(kl.grid, est, report.truth[static_cast<std::size_t>(k) + 1].second);
                out.estimates.push_back(std::move(aligned.values));
                if (aligned.orthogonal) out.failure = "component " + std::to_string(k + 1) + " orthogonal to truth";
            }
        } catch (const Error& e) {
            out.estimates.clear();
            out.failure = e.what();
        }
    });

    std::vector<std::size_t> succeeded;
    for (std::size_t r = 0; r < cfg.n_replicates; ++r) {
        ReplicateResult row;
        row.replicate = r;
        row.model = "FPCA_k2";
        row.failure = outcomes[r].failure;
        row.converged = outcomes[r].failure.empty();
        report.replicates.push_back(row);
        if (!outcomes[r].estimates.empty()) succeeded.push_back(r);
    }

    for (std::size_t t = 0; t < targets.size(); ++t) {
        std::vector<std::vector<double>> estimates;
        for (auto r : succeeded) estimates.push_back(outcomes[r].estimates[t]);
        if (estimates.size() >= 2) {
            auto curve = relative_bias(estimates, report.truth[t].second, kl.grid);
            std::vector<double> reportable;
            for (std::size_t a = 0; a < m; ++a) {
                if (!curve.absolute[a]) reportable.push_back(std::abs(curve.bias[a]));
            }
            SummaryRow row{targets[t], "abs_rel_bias", reportable.size(), std::nan(""), std::nan(""), std::nan("")};
            if (!reportable.empty()) {
                std::sort(reportable.begin(), reportable.end());
                row.median = quantile_sorted(reportable, 0.5);
                row.q1 = quantile_sorted(reportable, 0.25);
                row.q3 = quantile_sorted(reportable, 0.75);
            }
            report.summary.push_back(row);
            report.bias.emplace_back(targets[t], std::move(curve));
        }
    }

    std::vector<std::size_t> chosen = succeeded;
    Rng rng(derive_seed(cfg.base_seed, {3}));
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(std::min(chosen.size(), cfg.n_saved_estimates));
    std::sort(chosen.begin(), chosen.end());
    for (auto r : chosen) {
        for (std::size_t t = 0; t < targets.size(); ++t) {
            report.samples.push_back({r, targets[t], outcomes[r].estimates[t]});
        }
    }
    return report;
}

EvalReport run_study(const ScenarioConfig& cfg) { return cfg.study == 2 ? run_study2(cfg) : run_study1(cfg); }

std::size_t EvalReport::failure_count() const {
    return static_cast<std::size_t>(
        std::count_if(replicates.begin(), replicates.end(), [](const auto& r) { return !r.failure.empty(); }));
}

// ---------------------------------------------------------------------------
// Output

namespace {

std::string opt(const std::optional<double>& v) { return v ? text::format_double(*v) : "NA"; }

}  // namespace

std::string replicates_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "replicate,model,rmse_obs,rmse_miss,std_rmse_obs,std_rmse_miss,converged\n";
    for (const auto& r : report.replicates) {
        out << r.replicate << ',' << r.model << ',' << opt(r.rmse_obs) << ',' << opt(r.rmse_miss) << ','
            << opt(r.std_rmse_obs) << ',' << opt(r.std_rmse_miss) << ',' << (r.failure.empty() ? 1 : 0) << '\n';
    }
    return out.str();
}

std::string summary_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "model,metric,n,median,q1,q3\n";
    for (const auto& s : report.summary) {
        out << s.model << ',' << s.metric << ',' << s.n << ',' << text::format_double(s.median) << ','
            << text::format_double(s.q1) << ',' << text::format_double(s.q3) << '\n';
    }
    return out.str();
}

std::string bias_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "t,target,rel_bias,abs_bias_flag\n";
    for (const auto& [target, curve] : report.bias) {
        for (std::size_t a = 0; a < curve.grid.size(); ++a) {
            out << text::format_double(curve.grid[a]) << ',' << target << ',' << text::format_double(curve.bias[a])
                << ',' << (curve.absolute[a] ? 1 : 0) << '\n';
        }
    }
    return out.str();
}

std::string estimates_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "replicate,target,t,value\n";
    for (const auto& [target, values] : report.truth) {
        for (std::size_t a = 0; a < report.grid.size(); ++a) {
            out << "truth," << target << ',' << text::format_double(report.grid[a]) << ','
                << text::format_double(values[a]) << '\n';
        }
    }
    for (const auto& s : report.samples) {
        for (std::size_t a = 0; a < report.grid.size(); ++a) {
            out << s.replicate << ',' << s.target << ',' << text::format_double(report.grid[a]) << ','
                << text::format_double(s.values[a]) << '\n';
        }
    }
    return out.str();
}

std::vector<std::filesystem::path> write_report(const EvalReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    std::vector<std::pair<std::string, std::string>> files{{"replicates.csv", replicates_csv(report)},
                                                           {"summary.csv", summary_csv(report)}};
    if (report.config.study == 2) {
        files.emplace_back("bias.csv", bias_csv(report));
        files.emplace_back("estimates.csv", estimates_csv(report));
    }
    std::vector<std::filesystem::path> written;
    for (const auto& [name, content] : files) {
        const auto path = dir / name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open " + path.string() + " for writing");
        out << content;
        if (!out) throw IoError("failed writing " + path.string());
        written.push_back(path);
    }
    return written;
}

}  // namespace longfpca
