#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "longfpca/config.hpp"
#include "longfpca/data_model.hpp"
#include "longfpca/errors.hpp"
#include "longfpca/evaluation.hpp"
#include "longfpca/fpca.hpp"
#include "longfpca/lmm.hpp"
#include "longfpca/simulation.hpp"
#include "longfpca/text_io.hpp"

namespace {

using namespace longfpca;

constexpr int kExitOk = 0;
constexpr int kExitFlagged = 1;
constexpr int kExitError = 2;

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::optional<std::string> out;
    std::vector<std::string> overrides;
};

std::size_t default_threads() {
    if (const char* env = std::getenv("LONGFPCA_THREADS")) {
        const auto parsed = text::parse_int(env);
        if (!parsed || *parsed < 1) throw ConfigError("LONGFPCA_THREADS must be a positive integer");
        return static_cast<std::size_t>(*parsed);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

RunConfig resolve_config(const CommonOptions& opts) {
    auto doc = IniDocument::load(opts.config);
    for (const auto& assignment : opts.overrides) doc.apply_override(assignment);
    if (opts.seed) doc.set("scenario.seed", std::to_string(*opts.seed), "--seed");
    if (opts.out) doc.set("output.dir", *opts.out, "--out");
    auto cfg = build_run_config(doc);
    cfg.scenario.threads = opts.threads ? *opts.threads : default_threads();
    if (cfg.scenario.threads < 1) throw ConfigError("--threads must be at least 1");
    return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << content;
    if (!out) throw IoError("failed writing " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

int cmd_simulate(const CommonOptions& opts) {
    const auto cfg = resolve_config(opts);
    const auto prepared = prepare_scenario(cfg.scenario);
    const auto data = gen_study_dataset(prepared.design, derive_seed(cfg.scenario.base_seed, {1, 0}));
    ensure_dir(cfg.out_dir);
    write_long_csv(data.complete, cfg.out_dir / "complete.csv");
    write_long_csv(data.observed, cfg.out_dir / "observed.csv");
    write_mask_csv(data.complete, ObservationMask::from_dropout(data.complete, data.observed), cfg.out_dir / "mask.csv");

    std::cout << "subjects: " << data.complete.size() << "\n";
    if (const auto& d = prepared.design.dropout) {
        std::cout << "mechanism: " << to_string(d->mechanism) << "\n"
                  << "target rate: " << text::format_double(d->target_rate) << "\n"
                  << "intercept: " << text::format_double(d->intercept) << "\n"
                  << "slope: " << text::format_double(d->slope) << "\n"
                  << "threshold: " << text::format_double(d->threshold) << "\n"
                  << "calibrated rate (pool of " << cfg.scenario.calibration_pool
                  << "): " << text::format_double(*prepared.calibrated_rate) << "\n";
    } else {
        std::cout << "mechanism: none\n";
    }
    std::cout << "achieved dropout rate: " << text::format_double(dropped_fraction(data)) << "\n"
              << "wrote " << (cfg.out_dir / "complete.csv").string() << ", " << (cfg.out_dir / "observed.csv").string()
              << ", " << (cfg.out_dir / "mask.csv").string() << "\n";
    return kExitOk;
}

BasisSpec lmm_basis(const FitConfig& fit, const Dataset& ds) {
    if (fit.basis == BasisKind::polynomial) return BasisSpec::polynomial(fit.degree, fit.intercept);
    const auto times = ds.pooled_times();
    std::pair<double, double> boundary;
    if (fit.boundary) {
        boundary = *fit.boundary;
    } else {
        const auto [lo, hi] = std::minmax_element(times.begin(), times.end());
        boundary = {*lo, *hi};
    }
    const auto knots = place_knots(times, fit.knots, fit.knot_strategy, boundary);
    if (fit.basis == BasisKind::natural_cubic) return BasisSpec::natural_cubic(knots, boundary, fit.intercept);
    return BasisSpec::bspline(knots, boundary, fit.order, fit.intercept);
}

int cmd_fit(const CommonOptions& opts, const std::optional<std::string>& method, const std::string& data_path) {
    auto cfg = resolve_config(opts);
    if (method) cfg.fit.method = fit_method_from_string(*method);
    const auto ds = load_long_csv(data_path);
    ensure_dir(cfg.out_dir);

    std::ostringstream fitted;
    fitted << "subject_id,time,value,fitted\n";
    const auto write_fitted = [&](const Trajectory& traj, const std::vector<double>& values) {
        for (std::size_t j = 0; j < traj.size(); ++j) {
            fitted << traj.subject_id() << ',' << text::format_double(traj.times()[j]) << ','
                   << text::format_double(traj.values()[j]) << ',' << text::format_double(values[j]) << '\n';
        }
    };

    bool converged = true;
    std::string model_text;
    if (cfg.fit.method == FitMethod::fpca) {
        FpcaOptions options;
        options.grid_size = cfg.scenario.fpca_grid_size;
        options.target_fve = cfg.fit.fve;
        options.fixed_components = cfg.fit.components;
        const auto model = fit_fpca(ds, options);
        for (const auto& traj : ds.trajectories()) write_fitted(traj, predict_trajectory(model, traj, traj.times()));
        model_text = serialize(model);
        std::cout << "fpca: K = " << model.score_dim() << ", fve = " << text::format_double(model.fve())
                  << ", sigma2 = " << text::format_double(model.sigma2()) << "\n";
    } else {
        LmmOptions options;
        options.re_structure = cfg.scenario.lmm_re_structure;
        options.max_iterations = cfg.scenario.lmm_max_iterations;
        const auto model = fit_lmm(ds, lmm_basis(cfg.fit, ds), options);
        for (const auto& traj : ds.trajectories()) write_fitted(traj, predict_lmm(model, traj, traj.times()));
        model_text = serialize(model);
        converged = model.converged;
        std::cout << "lmm: basis = " << to_string(model.basis.kind) << ", p = " << model.basis.dimension()
                  << ", loglik = " << text::format_double(model.loglik)
                  << ", sigma2 = " << text::format_double(model.sigma2) << ", iterations = " << model.iterations
                  << ", converged = " << (model.converged ? "yes" : "no") << "\n";
    }
    write_text(cfg.out_dir / "model.txt", model_text);
    write_text(cfg.out_dir / "fitted.csv", fitted.str());
    std::cout << "wrote " << (cfg.out_dir / "model.txt").string() << ", " << (cfg.out_dir / "fitted.csv").string()
              << "\n";
    if (!converged) {
        std::cerr << "FLAG: optimizer did not converge\n";
        return kExitFlagged;
    }
    return kExitOk;
}

std::string cell(double v) {
    if (std::isnan(v)) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

int cmd_study(const CommonOptions& opts, const std::optional<int>& study) {
    auto cfg = resolve_config(opts);
    if (study) {
        cfg.scenario.study = *study;
        cfg.scenario.validate();
    }
    const auto report = run_study(cfg.scenario);
    const auto written = write_report(report, cfg.out_dir);

    const auto& s = cfg.scenario;
    std::cout << "study " << s.study << ": spacing " << text::format_double(s.spacing) << ", "
              << (s.dropout_rate > 0.0 ? to_string(s.mechanism) : std::string("no dropout")) << " "
              << text::format_double(s.dropout_rate) << ", " << s.n_replicates << " replicates, seed " << s.base_seed
              << "\n";
    if (report.calibrated_rate) {
        std::cout << "calibrated dropout rate: " << text::format_double(*report.calibrated_rate) << "\n";
    }
    std::printf("%-16s %-14s %5s %10s %10s %10s\n", "model", "metric", "n", "median", "q1", "q3");
    for (const auto& row : report.summary) {
        std::printf("%-16s %-14s %5zu %10s %10s %10s\n", row.model.c_str(), row.metric.c_str(), row.n,
                    cell(row.median).c_str(), cell(row.q1).c_str(), cell(row.q3).c_str());
    }
    for (const auto& path : written) std::cout << "wrote " << path.string() << "\n";

    const auto failures = report.failure_count();
    if (failures > 0) {
        std::cerr << "FLAG: " << failures << " flagged failure(s)\n";
        for (const auto& r : report.replicates) {
            if (!r.failure.empty()) std::cerr << "  replicate " << r.replicate << " " << r.model << ": " << r.failure << "\n";
        }
        return kExitFlagged;
    }
    return kExitOk;
}

void add_common(CLI::App* sub, CommonOptions& opts) {
    sub->add_option("--config", opts.config, "Configuration file")->required();
    sub->add_option("--seed", opts.seed, "Override scenario.seed");
    sub->add_option("--threads", opts.threads, "Worker threads (default: LONGFPCA_THREADS or hardware)");
    sub->add_option("--out", opts.out, "Override output.dir");
    sub->add_option("--set", opts.overrides, "Override a config value, section.key=value (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse functional PCA and linear mixed models for longitudinal data with dropout"};
    app.require_subcommand(1);

    CommonOptions sim_opts, fit_opts, study_opts;
    auto* simulate = app.add_subcommand("simulate", "Generate complete and observed datasets with a mask");
    add_common(simulate, sim_opts);

    auto* fit = app.add_subcommand("fit", "Fit FPCA or a mixed model to a long-format CSV");
    add_common(fit, fit_opts);
    std::optional<std::string> method;
    std::string data_path;
    fit->add_option("--method", method, "fpca or lmm (overrides fit.method)");
    fit->add_option("--data", data_path, "Long-format CSV with subject_id,time,value")->required();

    auto* study = app.add_subcommand("study", "Run a simulation study cell and write evaluation CSVs");
    add_common(study, study_opts);
    std::optional<int> study_number;
    study->add_option("--study", study_number, "1 or 2 (overrides scenario.study)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) return cmd_simulate(sim_opts);
        if (fit->parsed()) return cmd_fit(fit_opts, method, data_path);
        if (study->parsed()) return cmd_study(study_opts, study_number);
    } catch (const longfpca::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}
