#include "longfpca/lmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "longfpca/errors.hpp"
#include "longfpca/text_io.hpp"

namespace longfpca {

std::string to_string(ReStructure re) { return re == ReStructure::full ? "full" : "diagonal"; }

ReStructure re_structure_from_string(std::string_view name) {
    if (name == "full") return ReStructure::full;
    if (name == "diagonal") return ReStructure::diagonal;
    throw SpecError("unknown random-effect structure `" + std::string(name) + "`");
}

void LmmModel::validate() const {
    const auto p = static_cast<Eigen::Index>(basis.dimension());
    if (beta.size() != p || !beta.allFinite()) throw InvariantError("beta must be finite with one entry per basis column");
    if (re_cov.rows() != p || re_cov.cols() != p || !re_cov.allFinite()) {
        throw InvariantError("random-effect covariance must be p x p and finite");
    }
    const double scale = std::max(1.0, re_cov.cwiseAbs().maxCoeff());
    if ((re_cov - re_cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
        throw InvariantError("random-effect covariance is not symmetric");
    }
    Eigen::MatrixXd jittered = re_cov;
    jittered.diagonal().array() += 1e-10 * scale;
    if (Eigen::LLT<Eigen::MatrixXd>(jittered).info() != Eigen::Success) {
        throw InvariantError("random-effect covariance is not positive semidefinite");
    }
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw InvariantError("residual variance must be positive");
}

std::vector<SubjectDesign> build_designs(const Dataset& ds, const BasisSpec& basis) {
    std::vector<SubjectDesign> out;
    out.reserve(ds.size());
    for (const auto& tr : ds.trajectories()) {
        if (tr.empty()) continue;
        SubjectDesign d;
        d.z = evaluate_basis(basis, tr.times());
        d.y = Eigen::Map<const Eigen::VectorXd>(tr.values().data(), static_cast<Eigen::Index>(tr.size()));
        out.push_back(std::move(d));
    }
    return out;
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Eigen::MatrixXd marginal_cov(const SubjectDesign& d, const Eigen::MatrixXd& re_cov, double sigma2) {
    Eigen::MatrixXd v = d.z * re_cov * d.z.transpose();
    v.diagonal().array() += sigma2;
    return v;
}

double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

double marginal_loglik(const Eigen::VectorXd& beta, const Eigen::MatrixXd& re_cov, double sigma2,
                       std::span<const SubjectDesign> designs) {
    double total = 0.0;
    for (const auto& d : designs) {
        const Eigen::LLT<Eigen::MatrixXd> llt(marginal_cov(d, re_cov, sigma2));
        if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
        const Eigen::VectorXd r = d.y - d.z * beta;
        const Eigen::VectorXd w = llt.matrixL().solve(r);
        total -= 0.5 * (static_cast<double>(d.y.size()) * kLog2Pi + log_det(llt) + w.squaredNorm());
    }
    return total;
}

double marginal_loglik(const LmmModel& model, const Dataset& ds) {
    const auto designs = build_designs(ds, model.basis);
    return marginal_loglik(model.beta, model.re_cov, model.sigma2, designs);
}

Eigen::VectorXd encode_variance(const Eigen::MatrixXd& re_cov, double sigma2, ReStructure re) {
    const Eigen::Index p = re_cov.rows();
    Eigen::VectorXd theta;
    if (re == ReStructure::diagonal) {
        theta.resize(p + 1);
        for (Eigen::Index k = 0; k < p; ++k) theta(k) = 0.5 * std::log(re_cov(k, k));
    } else {
        const Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(re_cov).matrixL();
        theta.resize(p * (p + 1) / 2 + 1);
        Eigen::Index c = 0;
        for (Eigen::Index i = 0; i < p; ++i) {
            for (Eigen::Index j = 0; j <= i; ++j) theta(c++) = (i == j) ? std::log(l(i, j)) : l(i, j);
        }
    }
    theta(theta.size() - 1) = 0.5 * std::log(sigma2);
    return theta;
}

void decode_variance(const Eigen::VectorXd& theta, std::size_t p_, ReStructure re, Eigen::MatrixXd& re_cov,
                     double& sigma2) {
    const auto p = static_cast<Eigen::Index>(p_);
    if (re == ReStructure::diagonal) {
        re_cov = Eigen::MatrixXd::Zero(p, p);
        for (Eigen::Index k = 0; k < p; ++k) re_cov(k, k) = std::exp(2.0 * theta(k));
    } else {
        Eigen::MatrixXd l = Eigen::MatrixXd::Zero(p, p);
        Eigen::Index c = 0;
        for (Eigen::Index i = 0; i < p; ++i) {
            for (Eigen::Index j = 0; j <= i; ++j) l(i, j) = (i == j) ? std::exp(theta(c++)) : theta(c++);
        }
        re_cov = l * l.transpose();
    }
    sigma2 = std::exp(2.0 * theta(theta.size() - 1));
}

double profiled_loglik(const Eigen::VectorXd& theta, std::size_t p_, ReStructure re,
                       std::span<const SubjectDesign> designs, Eigen::VectorXd* beta_out) {
    const auto p = static_cast<Eigen::Index>(p_);
    Eigen::MatrixXd re_cov;
    double sigma2 = 0.0;
    decode_variance(theta, p_, re, re_cov, sigma2);
    if (!re_cov.allFinite() || !std::isfinite(sigma2) || !(sigma2 > 0.0)) {
        return -std::numeric_limits<double>::infinity();
    }

    std::vector<Eigen::LLT<Eigen::MatrixXd>> factors;
    factors.reserve(designs.size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    double log_dets = 0.0;
    double n_obs = 0.0;
    for (const auto& d : designs) {
        factors.emplace_back(marginal_cov(d, re_cov, sigma2));
        const auto& llt = factors.back();
        if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
        const Eigen::MatrixXd wz = llt.matrixL().solve(d.z);
        const Eigen::VectorXd wy = llt.matrixL().solve(d.y);
        a.noalias() += wz.transpose() * wz;
        b.noalias() += wz.transpose() * wy;
        log_dets += log_det(llt);
        n_obs += static_cast<double>(d.y.size());
    }
    const Eigen::LDLT<Eigen::MatrixXd> gls(a);
    if (gls.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const Eigen::VectorXd beta = gls.solve(b);
    double quad = 0.0;
    for (std::size_t i = 0; i < designs.size(); ++i) {
        const Eigen::VectorXd r = designs[i].y - designs[i].z * beta;
        quad += factors[i].matrixL().solve(r).squaredNorm();
    }
    if (beta_out) *beta_out = beta;
    const double value = -0.5 * (n_obs * kLog2Pi + log_dets + quad);
    return std::isfinite(value) ? value : -std::numeric_limits<double>::infinity();
}

Eigen::VectorXd central_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                 double h) {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd probe = x;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double step = h * std::max(1.0, std::abs(x(k)));
        probe(k) = x(k) + step;
        const double up = f(probe);
        probe(k) = x(k) - step;
        const double down = f(probe);
        probe(k) = x(k);
        g(k) = (up - down) / (2.0 * step);
    }
    return g;
}

namespace {

struct BfgsResult {
    Eigen::VectorXd x;
    double value = 0.0;  // minimized objective
    bool converged = false;
    int iterations = 0;
    std::vector<double> trace;
};

// Minimizes f with BFGS and an Armijo backtracking line search. Steps are
// capped at `max_step` in the infinity norm. The gradient test divides by
// `gradient_scale`.
BfgsResult minimize_bfgs(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                         const LmmOptions& options, double gradient_scale = 1.0, double max_step = 3.0) {
    const Eigen::Index q = x.size();
    BfgsResult out;
    double fx = f(x);
    if (!std::isfinite(fx)) {
        out.x = x;
        out.value = fx;
        return out;
    }
    Eigen::VectorXd g = central_gradient(f, x);
    Eigen::MatrixXd h = Eigen::MatrixXd::Identity(q, q);
    out.trace.push_back(-fx);

    for (int iter = 1; iter <= options.max_iterations; ++iter) {
        Eigen::VectorXd d = -h * g;
        if (g.dot(d) >= 0.0 || !d.allFinite()) {
            h.setIdentity();
            d = -g;
        }
        const double norm = d.cwiseAbs().maxCoeff();
        if (norm > max_step) d *= max_step / norm;
        const double slope = g.dot(d);

        double alpha = 1.0;
        Eigen::VectorXd x_new;
        double f_new = std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int ls = 0; ls < 50; ++ls) {
            x_new = x + alpha * d;
            f_new = f(x_new);
            if (std::isfinite(f_new) && f_new <= fx + 1e-4 * alpha * slope) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        out.iterations = iter;
        if (!accepted) {
            // No decrease along the search direction: stationary to working
            // precision if the gradient is small, otherwise stuck.
            out.converged = g.cwiseAbs().maxCoeff() / gradient_scale < options.gradient_tolerance;
            break;
        }
        const Eigen::VectorXd g_new = central_gradient(f, x_new);
        const Eigen::VectorXd s = x_new - x;
        const Eigen::VectorXd y = g_new - g;
        const double rel_change = std::abs(fx - f_new) / std::max(1.0, std::abs(fx));
        x = x_new;
        fx = f_new;
        g = g_new;
        out.trace.push_back(-fx);

        if (rel_change < options.relative_tolerance &&
            g.cwiseAbs().maxCoeff() / gradient_scale < options.gradient_tolerance) {
            out.converged = true;
            break;
        }
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            if (iter == 1) h *= sy / y.squaredNorm();
            const double rho = 1.0 / sy;
            const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(q, q);
            h = (eye - rho * s * y.transpose()) * h * (eye - rho * y * s.transpose()) + rho * s * s.transpose();
        }
    }
    out.x = x;
    out.value = fx;
    return out;
}

}  // namespace

LmmModel fit_lmm(const Dataset& ds, const BasisSpec& basis, const LmmOptions& options) {
    basis.validate();
    const std::size_t p = basis.dimension();
    if (ds.size() < 2) throw SizeError("mixed model needs at least 2 subjects");
    const auto designs = build_designs(ds, basis);
    std::size_t n_obs = 0;
    for (const auto& d : designs) n_obs += static_cast<std::size_t>(d.y.size());
    if (n_obs <= p) throw SizeError("mixed model needs more pooled observations than basis functions");

    Eigen::MatrixXd z(static_cast<Eigen::Index>(n_obs), static_cast<Eigen::Index>(p));
    Eigen::VectorXd y(static_cast<Eigen::Index>(n_obs));
    Eigen::Index row = 0;
    for (const auto& d : designs) {
        z.middleRows(row, d.z.rows()) = d.z;
        y.segment(row, d.y.size()) = d.y;
        row += d.z.rows();
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
    if (qr.rank() < static_cast<Eigen::Index>(p)) {
        throw IdentifiabilityError("pooled design has rank " + std::to_string(qr.rank()) + " < " + std::to_string(p));
    }
    const Eigen::VectorXd beta_ols = qr.solve(y);
    const double rss = (y - z * beta_ols).squaredNorm();
    const double s2 = std::max(rss / static_cast<double>(n_obs - p), 1e-8);

    // Start 1 splits the OLS residual variance evenly between random effects
    // and noise; start 2 inflates the random-effect share tenfold.
    Eigen::MatrixXd b0 = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(p); ++k) {
        const double ms = std::max(z.col(k).squaredNorm() / static_cast<double>(n_obs), 1e-12);
        b0(k, k) = 0.5 * s2 / (static_cast<double>(p) * ms);
    }
    const std::vector<Eigen::VectorXd> starts{encode_variance(b0, 0.5 * s2, options.re_structure),
                                              encode_variance(10.0 * b0, s2, options.re_structure)};

    const auto objective = [&](const Eigen::VectorXd& theta) {
        return -profiled_loglik(theta, p, options.re_structure, designs);
    };

    BfgsResult best;
    best.value = std::numeric_limits<double>::infinity();
    for (const auto& start : starts) {
        auto result = minimize_bfgs(objective, start, options, static_cast<double>(n_obs));
        if (result.value < best.value) best = std::move(result);
    }
    if (!std::isfinite(best.value)) throw IdentifiabilityError("mixed model likelihood is not finite at any start");

    LmmModel model;
    model.basis = basis;
    model.re_structure = options.re_structure;
    decode_variance(best.x, p, options.re_structure, model.re_cov, model.sigma2);
    model.loglik = profiled_loglik(best.x, p, options.re_structure, designs, &model.beta);
    model.converged = best.converged;
    model.iterations = best.iterations;
    model.loglik_trace = std::move(best.trace);
    return model;
}

Eigen::VectorXd blup(const Eigen::MatrixXd& z, const Eigen::MatrixXd& re_cov, double sigma2,
                     const Eigen::VectorXd& residual) {
    Eigen::MatrixXd v = z * re_cov * z.transpose();
    v.diagonal().array() += sigma2;
    const Eigen::LLT<Eigen::MatrixXd> llt(v);
    if (llt.info() != Eigen::Success) throw ContractViolation("marginal covariance is not positive definite");
    return re_cov * (z.transpose() * llt.solve(residual));
}

Eigen::VectorXd predict_re(const LmmModel& model, const Trajectory& traj) {
    if (traj.empty()) throw SizeError("random-effect prediction needs at least one observation");
    const Eigen::MatrixXd z = evaluate_basis(model.basis, traj.times());
    const Eigen::Map<const Eigen::VectorXd> y(traj.values().data(), static_cast<Eigen::Index>(traj.size()));
    return blup(z, model.re_cov, model.sigma2, y - z * model.beta);
}

std::vector<double> predict_lmm(const LmmModel& model, const Trajectory& traj, std::span<const double> eval_times) {
    const Eigen::MatrixXd z_eval = evaluate_basis(model.basis, eval_times);
    if (eval_times.empty()) return {};
    const Eigen::VectorXd coef = model.beta + predict_re(model, traj);
    const Eigen::VectorXd fitted = z_eval * coef;
    return {fitted.data(), fitted.data() + fitted.size()};
}

// ---------------------------------------------------------------------------

std::string serialize(const LmmModel& model) {
    text::KeyValueDocument doc("longfpca-lmm", 1);
    const auto& b = model.basis;
    doc.add("basis", to_string(b.kind));
    doc.add("degree", std::to_string(b.degree));
    doc.add("intercept", std::string(b.intercept ? "1" : "0"));
    doc.add("internal_knots", b.internal_knots);
    doc.add("boundary_knots", std::vector<double>{b.boundary_knots.first, b.boundary_knots.second});
    if (b.kind == BasisKind::tabulated) {
        doc.add("table_grid", b.table_grid);
        doc.add("table_columns", std::to_string(b.table_columns.size()));
        for (std::size_t c = 0; c < b.table_columns.size(); ++c) {
            doc.add("table_column." + std::to_string(c + 1), b.table_columns[c]);
        }
    }
    doc.add("re_structure", to_string(model.re_structure));
    doc.add("beta", std::span<const double>(model.beta.data(), static_cast<std::size_t>(model.beta.size())));
    std::vector<double> cov;
    for (Eigen::Index i = 0; i < model.re_cov.rows(); ++i) {
        for (Eigen::Index j = 0; j < model.re_cov.cols(); ++j) cov.push_back(model.re_cov(i, j));
    }
    doc.add("re_cov", cov);
    doc.add("sigma2", model.sigma2);
    doc.add("loglik", model.loglik);
    doc.add("converged", std::string(model.converged ? "1" : "0"));
    doc.add("iterations", std::to_string(model.iterations));
    return doc.str();
}

LmmModel deserialize_lmm(std::string_view content) {
    const auto doc = text::KeyValueDocument::parse(content, "longfpca-lmm", 1);
    LmmModel model;
    auto& b = model.basis;
    b.kind = basis_kind_from_string(doc.get("basis"));
    b.degree = static_cast<int>(doc.get_int("degree"));
    b.intercept = doc.get_int("intercept") != 0;
    b.internal_knots = doc.get_list("internal_knots");
    const auto boundary = doc.get_list("boundary_knots");
    if (boundary.size() != 2) throw FormatError("boundary_knots needs two values");
    b.boundary_knots = {boundary[0], boundary[1]};
    if (b.kind == BasisKind::tabulated) {
        b.table_grid = doc.get_list("table_grid");
        const auto n_cols = doc.get_int("table_columns");
        for (long long c = 0; c < n_cols; ++c) b.table_columns.push_back(doc.get_list("table_column." + std::to_string(c + 1)));
    }
    b.validate();
    model.re_structure = re_structure_from_string(doc.get("re_structure"));
    const auto beta = doc.get_list("beta");
    const auto p = static_cast<Eigen::Index>(b.dimension());
    if (static_cast<Eigen::Index>(beta.size()) != p) throw FormatError("beta length differs from the basis dimension");
    model.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), p);
    const auto cov = doc.get_list("re_cov");
    if (static_cast<Eigen::Index>(cov.size()) != p * p) throw FormatError("re_cov must hold p*p values");
    model.re_cov.resize(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) model.re_cov(i, j) = cov[static_cast<std::size_t>(i * p + j)];
    }
    model.sigma2 = doc.get_double("sigma2");
    model.loglik = doc.get_double("loglik");
    model.converged = doc.get_int("converged") != 0;
    model.iterations = static_cast<int>(doc.get_int("iterations"));
    model.validate();
    return model;
}

}  // namespace longfpca
