#include "panelglmm/ridge_em.hpp"

#include "panelglmm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace panelglmm {

namespace {

Eigen::MatrixXd symmetrised(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

Eigen::VectorXd inverse_weights(const LinearisedModel& lin) {
    return lin.gamma_diag.cwiseInverse();
}

// Cholesky of G = U^T W U + D^{-1}, the posterior precision of xi.
Eigen::LLT<Eigen::MatrixXd> posterior_precision_factor(const LinearisedModel& lin,
                                                       const Eigen::VectorXd& w,
                                                       const ModelState& theta) {
    Eigen::MatrixXd g = incidence_gram(lin.layout, w) + random_effect_precision(theta, lin.layout);
    Eigen::LLT<Eigen::MatrixXd> llt(g);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("posterior precision of the random effects is not positive definite");
    }
    return llt;
}

}  // namespace

void LinearisedModel::validate() const {
    const Eigen::Index n = layout.n_obs();
    if (z.size() != n || gamma_diag.size() != n || X.rows() != n) {
        throw ShapeError("linearised model: z, gamma and X must have N*T rows");
    }
    if (!z.allFinite()) {
        throw NumericalError("working response is not finite");
    }
    if (!(gamma_diag.array() > 0.0).all() || !gamma_diag.allFinite()) {
        throw NumericalError("working variances must be positive and finite");
    }
}

Eigen::MatrixXd random_effect_covariance(const ModelState& theta, const PanelLayout& layout) {
    const Eigen::Index N = layout.n_individuals();
    const Eigen::Index T = layout.n_times();
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(N + T, N + T);
    d.topLeftCorner(N, N).diagonal().setConstant(theta.sigma1_sq);
    d.bottomRightCorner(T, T) = ar1_covariance({theta.rho, theta.sigma2_sq}, T);
    return d;
}

Eigen::MatrixXd random_effect_precision(const ModelState& theta, const PanelLayout& layout) {
    if (!(theta.sigma1_sq > 0.0)) {
        throw ValidationError("sigma1^2 must be positive");
    }
    const Eigen::Index N = layout.n_individuals();
    const Eigen::Index T = layout.n_times();
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(N + T, N + T);
    d.topLeftCorner(N, N).diagonal().setConstant(1.0 / theta.sigma1_sq);
    d.bottomRightCorner(T, T) = ar1_precision({theta.rho, theta.sigma2_sq}, T);
    return d;
}

XiPosterior posterior_random_effects(const LinearisedModel& lin, const Eigen::VectorXd& offset,
                                     const ModelState& theta) {
    lin.validate();
    if (offset.size() != lin.layout.n_obs()) {
        throw ShapeError("posterior_random_effects: offset has wrong length");
    }
    const Eigen::VectorXd w = inverse_weights(lin);
    const auto llt = posterior_precision_factor(lin, w, theta);
    const Eigen::Index q = lin.layout.n_random();

    XiPosterior post;
    const Eigen::VectorXd weighted_resid = w.cwiseProduct(lin.z - offset);
    post.mean = llt.solve(incidence_apply_transpose(lin.layout, weighted_resid));
    post.cov = symmetrised(llt.solve(Eigen::MatrixXd::Identity(q, q)));
    if (!post.mean.allFinite() || !post.cov.allFinite()) {
        throw NumericalError("posterior moments of the random effects are not finite");
    }
    return post;
}

XiPosterior e_step(const LinearisedModel& lin, const ModelState& theta) {
    if (theta.beta.size() != lin.X.cols()) {
        throw ShapeError("e_step: beta does not match X");
    }
    return posterior_random_effects(lin, lin.X * theta.beta, theta);
}

Eigen::VectorXd m_step_beta(const LinearisedModel& lin, const Eigen::VectorXd& xi_mean,
                            double lambda) {
    lin.validate();
    if (lambda < 0.0) throw ValidationError("lambda must be non-negative");
    const Eigen::VectorXd w = inverse_weights(lin);
    const Eigen::Index p = lin.X.cols();
    Eigen::MatrixXd lhs = lin.X.transpose() * w.asDiagonal() * lin.X;
    lhs.diagonal().array() += lambda;
    const Eigen::VectorXd rhs =
        lin.X.transpose() * w.cwiseProduct(lin.z - incidence_apply(lin.layout, xi_mean));

    Eigen::LLT<Eigen::MatrixXd> llt(lhs);
    // LLT accepts some numerically singular matrices; check the pivots too.
    const double max_diag = lhs.diagonal().cwiseAbs().maxCoeff();
    bool singular = llt.info() != Eigen::Success;
    if (!singular) {
        const Eigen::VectorXd pivots = Eigen::MatrixXd(llt.matrixL()).diagonal();
        singular = (pivots.array().square() <= 1e-13 * std::max(max_diag, 1e-300)).any();
    }
    if (singular || p == 0) {
        throw SingularSystemError("ridge normal equations are singular (lambda=" +
                                  std::to_string(lambda) + "); use lambda > 0");
    }
    return llt.solve(rhs);
}

double m_step_sigma1(const Eigen::VectorXd& xi_mean, const Eigen::MatrixXd& xi_cov,
                     Eigen::Index n_individuals, bool* floored) {
    const Eigen::Index N = n_individuals;
    const double value =
        (xi_mean.head(N).squaredNorm() + xi_cov.topLeftCorner(N, N).trace()) /
        static_cast<double>(N);
    if (floored) *floored = value < kVarianceFloor;
    return std::max(value, kVarianceFloor);
}

Ar1Params m_step_ar1(const Eigen::VectorXd& xi_mean, const Eigen::MatrixXd& xi_cov,
                     Eigen::Index n_times, bool* floored) {
    const Eigen::Index T = n_times;
    const Eigen::Index q = xi_mean.size();
    const Eigen::VectorXd m2 = xi_mean.tail(T);
    const Eigen::MatrixXd s2 = m2 * m2.transpose() + xi_cov.block(q - T, q - T, T, T);
    Ar1Params params = profile_ml_update(s2);
    if (floored) *floored = params.sigma2_sq < kVarianceFloor;
    params.sigma2_sq = std::max(params.sigma2_sq, kVarianceFloor);
    return params;
}

double q_pen(const LinearisedModel& lin, const ModelState& candidate,
             const XiPosterior& posterior, double lambda) {
    const Eigen::Index n = lin.layout.n_obs();
    const Eigen::Index N = lin.layout.n_individuals();
    const Eigen::Index T = lin.layout.n_times();
    const Eigen::VectorXd w = inverse_weights(lin);
    const double log2pi = std::log(2.0 * std::numbers::pi);

    const Eigen::VectorXd resid =
        lin.z - lin.X * candidate.beta - incidence_apply(lin.layout, posterior.mean);
    const double data_quad =
        resid.dot(w.cwiseProduct(resid)) +
        (incidence_gram(lin.layout, w).cwiseProduct(posterior.cov)).sum();
    const double data_term =
        -0.5 * (static_cast<double>(n) * log2pi + lin.gamma_diag.array().log().sum() + data_quad);

    const double s1 = posterior.mean.head(N).squaredNorm() +
                      posterior.cov.topLeftCorner(N, N).trace();
    const double xi1_term = -0.5 * static_cast<double>(N) * (log2pi + std::log(candidate.sigma1_sq)) -
                            0.5 * s1 / candidate.sigma1_sq;

    const Eigen::VectorXd m2 = posterior.mean.tail(T);
    const Eigen::MatrixXd s2 = m2 * m2.transpose() + posterior.cov.bottomRightCorner(T, T);
    const double xi2_term = -0.5 * static_cast<double>(T) * log2pi +
                            ar1_expected_loglik({candidate.rho, candidate.sigma2_sq}, s2);

    return data_term + xi1_term + xi2_term - 0.5 * lambda * candidate.beta.squaredNorm();
}

PenalisedSolution penalised_mixed_solve(const LinearisedModel& lin, const ModelState& theta,
                                        double lambda) {
    lin.validate();
    const Eigen::Index p = lin.X.cols();
    const Eigen::Index q = lin.layout.n_random();
    const Eigen::VectorXd w = inverse_weights(lin);
    Eigen::MatrixXd m(lin.layout.n_obs(), p + q);
    m << lin.X, lin.dense_U();

    Eigen::MatrixXd lhs = m.transpose() * w.asDiagonal() * m;
    lhs.topLeftCorner(p, p).diagonal().array() += lambda;
    lhs.bottomRightCorner(q, q) += random_effect_precision(theta, lin.layout);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(lhs);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        throw NumericalError("augmented mixed-model system is singular");
    }
    const Eigen::VectorXd sol = ldlt.solve(m.transpose() * w.cwiseProduct(lin.z));
    return {sol.head(p), sol.tail(q)};
}

Eigen::MatrixXd hat_matrix(const LinearisedModel& lin, const ModelState& theta, double lambda,
                           HatKind kind) {
    lin.validate();
    const Eigen::Index p = lin.X.cols();
    const Eigen::Index q = lin.layout.n_random();
    const Eigen::VectorXd w = inverse_weights(lin);
    Eigen::MatrixXd m(lin.layout.n_obs(), p + q);
    m << lin.X, lin.dense_U();

    Eigen::MatrixXd lhs = m.transpose() * w.asDiagonal() * m;
    lhs.topLeftCorner(p, p).diagonal().array() += lambda;
    lhs.bottomRightCorner(q, q) += random_effect_precision(theta, lin.layout);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(lhs);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        throw NumericalError("augmented mixed-model system is singular");
    }
    const Eigen::MatrixXd coef = ldlt.solve(m.transpose() * w.asDiagonal());
    if (kind == HatKind::FixedOnly) {
        return lin.X * coef.topRows(p);
    }
    return m * coef;
}

GcvEvaluator::GcvEvaluator(const LinearisedModel& lin, const ModelState& theta, HatKind kind)
    : kind_(kind), n_(lin.layout.n_obs()), gamma_(lin.gamma_diag) {
    lin.validate();
    const Eigen::VectorXd w = inverse_weights(lin);
    const auto llt = posterior_precision_factor(lin, w, theta);

    // V^{-1} M = W M - W U G^{-1} U^T W M (Woodbury).
    auto apply_vinv = [&](const Eigen::MatrixXd& mat) -> Eigen::MatrixXd {
        const Eigen::MatrixXd wm = w.asDiagonal() * mat;
        const Eigen::MatrixXd inner = llt.solve(incidence_apply_transpose(lin.layout, wm));
        Eigen::MatrixXd u_inner(n_, mat.cols());
        for (Eigen::Index c = 0; c < mat.cols(); ++c) {
            u_inner.col(c) = incidence_apply(lin.layout, inner.col(c));
        }
        return wm - w.asDiagonal() * u_inner;
    };

    const Eigen::MatrixXd b = apply_vinv(lin.X);
    const Eigen::VectorXd a = apply_vinv(lin.z);
    const Eigen::MatrixXd k = symmetrised(lin.X.transpose() * b);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k);
    if (eig.info() != Eigen::Success) {
        throw NumericalError("eigendecomposition of X^T V^{-1} X failed");
    }
    const Eigen::MatrixXd& rot = eig.eigenvectors();
    eig_values_ = eig.eigenvalues().cwiseMax(0.0);
    proj_rhs_ = rot.transpose() * (lin.X.transpose() * a);

    if (kind_ == HatKind::FullSmoother) {
        b_rot_ = b * rot;
        a_ = a;
        // diag(Q^T H Q), H = B^T Gamma B.
        h_diag_ = (b_rot_.array().square().colwise() * gamma_.array()).colwise().sum().transpose();
        // tr(U D U^T V^{-1}) = sum_i w_i u_i^T G^{-1} u_i.
        const Eigen::Index q = lin.layout.n_random();
        const Eigen::MatrixXd g_inv = llt.solve(Eigen::MatrixXd::Identity(q, q));
        const Eigen::Index N = lin.layout.n_individuals();
        random_trace_ = 0.0;
        for (Eigen::Index i = 0; i < n_; ++i) {
            const Eigen::Index ia = lin.layout.individual_of(i);
            const Eigen::Index tb = N + lin.layout.time_of(i);
            random_trace_ += w(i) * (g_inv(ia, ia) + g_inv(tb, tb) + 2.0 * g_inv(ia, tb));
        }
    } else {
        b_rot_ = lin.X * rot;
        a_ = lin.z;
        h_diag_ = eig_values_;
        random_trace_ = 0.0;
    }
}

GcvPoint GcvEvaluator::evaluate(double lambda) const {
    GcvPoint point;
    point.lambda = lambda;
    const Eigen::ArrayXd denom = eig_values_.array() + lambda;
    if ((denom <= 0.0).any()) {
        point.gcv = std::numeric_limits<double>::infinity();
        point.trace = static_cast<double>(n_);
        return point;
    }
    const Eigen::VectorXd coef = (proj_rhs_.array() / denom).matrix();
    const Eigen::VectorXd r = a_ - b_rot_ * coef;
    const double rss = kind_ == HatKind::FullSmoother
                           ? (r.array().square() * gamma_.array()).sum()
                           : (r.array().square() / gamma_.array()).sum();
    point.trace = random_trace_ + (h_diag_.array() / denom).sum();
    const double n = static_cast<double>(n_);
    const double slack = 1.0 - point.trace / n;
    if (!(slack > 0.0)) {
        point.gcv = std::numeric_limits<double>::infinity();
        return point;
    }
    point.gcv = (rss / n) / (slack * slack);
    return point;
}

GcvSelection gcv_select_lambda(const LinearisedModel& lin, const ModelState& theta,
                               const std::vector<double>& grid, HatKind kind) {
    if (grid.empty()) throw ValidationError("lambda grid is empty");
    return gcv_select_lambda(GcvEvaluator(lin, theta, kind), grid);
}

GcvSelection gcv_select_lambda(const GcvEvaluator& evaluator, const std::vector<double>& grid) {
    if (grid.empty()) throw ValidationError("lambda grid is empty");
    GcvSelection sel;
    sel.path.reserve(grid.size());
    double best = std::numeric_limits<double>::infinity();
    bool found = false;
    for (double lambda : grid) {
        const GcvPoint point = evaluator.evaluate(lambda);
        sel.path.push_back(point);
        if (!std::isfinite(point.gcv)) continue;
        // Ties go to the larger lambda.
        if (!found || point.gcv < best || (point.gcv == best && lambda >= sel.lambda)) {
            best = point.gcv;
            sel.lambda = lambda;
            sel.grid_index = sel.path.size() - 1;
            found = true;
        }
    }
    if (!found) {
        throw DegenerateGcvError("every lambda on the grid has tr(S) >= n");
    }
    return sel;
}

double refine_gcv_lambda(const GcvEvaluator& evaluator, const std::vector<double>& grid,
                         const GcvSelection& selection) {
    const std::size_t k = selection.grid_index;
    double lo = std::log(grid[k > 0 ? k - 1 : k]);
    double hi = std::log(grid[k + 1 < grid.size() ? k + 1 : k]);
    if (!(hi > lo)) return selection.lambda;
    auto gcv = [&](double log_lambda) { return evaluator.evaluate(std::exp(log_lambda)).gcv; };

    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = hi - inv_phi * (hi - lo);
    double d = lo + inv_phi * (hi - lo);
    double fc = gcv(c);
    double fd = gcv(d);
    while (hi - lo > 1e-10) {
        if (fc <= fd) {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = gcv(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = gcv(d);
        }
    }
    const double refined = std::exp(0.5 * (lo + hi));
    const double refined_gcv = evaluator.evaluate(refined).gcv;
    const double grid_gcv = selection.path[k].gcv;
    return refined_gcv < grid_gcv ? refined : selection.lambda;
}

std::vector<double> log_spaced_grid(double lo, double hi, int count) {
    if (!(lo > 0.0) || !(hi >= lo) || count < 1) {
        throw ValidationError("log-spaced grid needs 0 < min <= max and count >= 1");
    }
    std::vector<double> grid(static_cast<std::size_t>(count));
    if (count == 1) {
        grid[0] = lo;
        return grid;
    }
    const double llo = std::log10(lo);
    const double step = (std::log10(hi) - llo) / (count - 1);
    for (int i = 0; i < count; ++i) grid[static_cast<std::size_t>(i)] = std::pow(10.0, llo + step * i);
    grid.back() = hi;
    return grid;
}

void RidgeConfig::validate() const {
    if (!fixed_lambda) {
        if (lambda_grid.empty()) throw ConfigError("lambda grid must not be empty");
        if (!std::is_sorted(lambda_grid.begin(), lambda_grid.end())) {
            throw ConfigError("lambda grid must be sorted ascending");
        }
        if (lambda_grid.front() <= 0.0) throw ConfigError("lambda grid must be positive");
    } else if (*fixed_lambda < 0.0) {
        throw ConfigError("fixed lambda must be non-negative");
    }
    if (max_outer_iters < 1) throw ConfigError("max-iters must be at least 1");
    if (!(tol > 0.0)) throw ConfigError("tol must be positive");
    if (em_inner_iters < 1) throw ConfigError("em-inner-iters must be at least 1");
}

std::string to_string(Termination t) {
    switch (t) {
        case Termination::Converged: return "converged";
        case Termination::MaxIters: return "max-iters";
        case Termination::NumericalFailure: return "numerical-failure";
    }
    return "unknown";
}

double relative_change(const Eigen::VectorXd& next, const Eigen::VectorXd& current) {
    return (next - current).norm() / (current.norm() + 1e-12);
}

FitReport fit(const PanelDataset& data, const RidgeConfig& config) {
    data.validate();
    config.validate();
    if (data.layout.n_times() < 2) {
        throw InvalidLayoutError("AR(1) time effect needs T >= 2");
    }

    FitReport report;
    LinearisedModel lin;
    lin.X = data.X;
    lin.layout = data.layout;
    const Eigen::Index N = data.layout.n_individuals();
    const Eigen::Index T = data.layout.n_times();
    const Eigen::Index q = data.layout.n_random();

    {
        const WorkingResponse wr = working_response(data.y, initial_mean(data.y, data.family),
                                                    data.family);
        lin.z = wr.z;
        lin.gamma_diag = wr.gamma_diag;
    }

    ModelState theta;
    theta.sigma1_sq = 0.5;
    theta.sigma2_sq = 0.5;
    theta.rho = 0.0;
    theta.xi_mean = Eigen::VectorXd::Zero(q);
    theta.xi_cov = Eigen::MatrixXd::Zero(q, q);

    int iteration = 0;
    try {
        theta.beta = m_step_beta(lin, theta.xi_mean, 1.0);

        bool warned_sigma1 = false;
        bool warned_sigma2 = false;
        for (iteration = 1; iteration <= config.max_outer_iters; ++iteration) {
            // (2.b) lambda at the pre-update theta.
            double lambda = 0.0;
            if (config.fixed_lambda) {
                lambda = *config.fixed_lambda;
                report.gcv_paths.emplace_back();
            } else {
                const GcvEvaluator evaluator(lin, theta, config.hat_kind);
                GcvSelection sel = gcv_select_lambda(evaluator, config.lambda_grid);
                lambda = config.refine_lambda
                             ? refine_gcv_lambda(evaluator, config.lambda_grid, sel)
                             : sel.lambda;
                report.gcv_paths.push_back(std::move(sel.path));
            }
            report.lambda_path.push_back(lambda);

            // (2.c) E and M steps.
            ModelState next = theta;
            for (int sweep = 0; sweep < config.em_inner_iters; ++sweep) {
                const XiPosterior post = e_step(lin, next);
                next.beta = m_step_beta(lin, post.mean, lambda);
                bool floored1 = false;
                bool floored2 = false;
                next.sigma1_sq = m_step_sigma1(post.mean, post.cov, N, &floored1);
                const Ar1Params ar = m_step_ar1(post.mean, post.cov, T, &floored2);
                next.sigma2_sq = ar.sigma2_sq;
                next.rho = ar.rho;
                if (floored1 && !warned_sigma1) {
                    report.warnings.push_back("iteration " + std::to_string(iteration) +
                                              ": sigma1^2 collapsed to the variance floor");
                    warned_sigma1 = true;
                }
                if (floored2 && !warned_sigma2) {
                    report.warnings.push_back("iteration " + std::to_string(iteration) +
                                              ": sigma2^2 collapsed to the variance floor");
                    warned_sigma2 = true;
                }
            }

            // (3) Updating step.
            const XiPosterior post = e_step(lin, next);
            next.xi_mean = post.mean;
            next.xi_cov = post.cov;
            const Eigen::VectorXd eta = lin.X * next.beta + incidence_apply(lin.layout, next.xi_mean);
            const Eigen::VectorXd mu = inverse_link(eta, data.family, &report.n_eta_clamped);
            report.fitted_mean = mu;
            report.last_linearisation = lin;
            const WorkingResponse wr = working_response(data.y, mu, data.family);
            if (!wr.z.allFinite()) {
                throw NumericalError("working response became non-finite");
            }
            lin.z = wr.z;
            lin.gamma_diag = wr.gamma_diag;

            const double criterion = relative_change(next.stacked(), theta.stacked());
            report.trajectory.push_back(IterationRecord{iteration, criterion, next.beta,
                                                        next.sigma1_sq, next.sigma2_sq, next.rho,
                                                        lambda});
            theta = std::move(next);
            report.n_iters = iteration;
            if (criterion < config.tol) {
                report.termination = Termination::Converged;
                break;
            }
        }
        if (report.termination != Termination::Converged) {
            report.termination = Termination::MaxIters;
        }
    } catch (const NumericalError& e) {
        report.termination = Termination::NumericalFailure;
        report.message = "iteration " + std::to_string(iteration) + ": " + e.what();
        // Keep the trajectory aligned with the completed iterations.
        report.lambda_path.resize(report.trajectory.size());
        report.gcv_paths.resize(report.trajectory.size());
    }
    report.theta_hat = theta;
    return report;
}

}  // namespace panelglmm
