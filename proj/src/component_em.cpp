#include "panelglmm/component_em.hpp"

#include "panelglmm/errors.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

namespace panelglmm {

namespace {

// Q_reg restricted to one linearisation, evaluated in principal coordinates.
class ComponentObjective {
public:
    ComponentObjective(const LinearisedModel& lin, const PrincipalBasis& basis,
                       const ModelState& theta, double s, double l,
                       const Eigen::MatrixXd& prior_loadings)
        : s_(s), l_(l), prior_(prior_loadings) {
        const Eigen::VectorXd w = lin.gamma_diag.cwiseInverse();
        const Eigen::VectorXd r = lin.z - incidence_apply(lin.layout, theta.xi_mean);
        const Eigen::MatrixXd wc = w.asDiagonal() * basis.C;
        ctwc_ = basis.C.transpose() * wc;
        ctwr_ = wc.transpose() * r;
        rwr_ = r.dot(w.cwiseProduct(r));
        ctx_ = basis.C.transpose() * basis.X_std;
        ctc_ = basis.C.transpose() * basis.C;
        x_norm2_ = basis.X_std.colwise().squaredNorm().transpose();
    }

    struct Eval {
        double value = 0.0;
        Eigen::VectorXd gradient;
        Eigen::VectorXd gammas;
    };

    Eval evaluate(const Eigen::VectorXd& w, bool with_gradient) const {
        Eval out;
        const Eigen::Index k = prior_.cols() + 1;
        Eigen::MatrixXd loads(w.size(), k);
        loads << prior_, w;

        // Likelihood part: profiled weighted least squares of r on F_all.
        const Eigen::MatrixXd gram = loads.transpose() * ctwc_ * loads;
        const Eigen::VectorXd rhs = loads.transpose() * ctwr_;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
        out.gammas = ldlt.solve(rhs);
        const double rss = rwr_ - rhs.dot(out.gammas);
        const double lik = -0.5 * rss;

        // Structural relevance.
        const Eigen::VectorXd a = ctx_.transpose() * w;
        const double d = w.dot(ctc_ * w);
        if (!(d > 0.0)) {
            throw DegenerateComponentError("component scores vanish (C w = 0)");
        }
        const Eigen::ArrayXd c = a.array().square() / (x_norm2_.array() * d);
        const double sum_pow = c.pow(l_).sum();
        const double phi = std::pow(sum_pow, 1.0 / l_);

        out.value = (1.0 - s_) * lik + s_ * phi;
        if (!with_gradient) return out;

        const double g_last = out.gammas(k - 1);
        const Eigen::VectorXd lik_grad = g_last * (ctwr_ - ctwc_ * (loads * out.gammas));

        Eigen::ArrayXd dphi_dc = Eigen::ArrayXd::Zero(c.size());
        if (sum_pow > 0.0) {
            dphi_dc = std::pow(sum_pow, 1.0 / l_ - 1.0) * c.pow(l_ - 1.0);
        }
        const Eigen::VectorXd coef = (2.0 * a.array() * dphi_dc / (x_norm2_.array() * d)).matrix();
        const double shrink = 2.0 * (dphi_dc * c).sum() / d;
        const Eigen::VectorXd phi_grad = ctx_ * coef - shrink * (ctc_ * w);

        out.gradient = (1.0 - s_) * lik_grad + s_ * phi_grad;
        return out;
    }

    const Eigen::MatrixXd& ctwc() const { return ctwc_; }
    const Eigen::VectorXd& ctwr() const { return ctwr_; }
    const Eigen::MatrixXd& ctc() const { return ctc_; }

private:
    double s_;
    double l_;
    Eigen::MatrixXd prior_;
    Eigen::MatrixXd ctwc_;
    Eigen::VectorXd ctwr_;
    double rwr_ = 0.0;
    Eigen::MatrixXd ctx_;
    Eigen::MatrixXd ctc_;
    Eigen::VectorXd x_norm2_;
};

// Orthonormal basis of span(C^T C W_prev); feasible w are orthogonal to it.
Eigen::MatrixXd constraint_basis(const Eigen::MatrixXd& ctc, const Eigen::MatrixXd& prior) {
    if (prior.cols() == 0) return Eigen::MatrixXd(ctc.rows(), 0);
    const Eigen::MatrixXd a = ctc * prior;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    return qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
}

Eigen::VectorXd project_out(const Eigen::MatrixXd& q, const Eigen::VectorXd& v) {
    if (q.cols() == 0) return v;
    return v - q * (q.transpose() * v);
}

// Orthonormal basis of the feasible tangent space at w: orthogonal to w and
// to the constraint directions.
Eigen::MatrixXd tangent_basis(const Eigen::MatrixXd& cons, const Eigen::VectorXd& w) {
    const Eigen::Index r = w.size();
    Eigen::MatrixXd a(r, cons.cols() + 1);
    a << cons, w;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    const Eigen::MatrixXd q = qr.householderQ();
    return q.rightCols(r - a.cols());
}

constexpr Eigen::Index kNewtonMaxDim = 200;

// Second-order ascent direction in the tangent space. The Hessian comes from
// central differences of the analytic gradient; its eigenvalues are replaced
// by their magnitudes so the direction ascends even away from a maximum.
Eigen::VectorXd newton_direction(const ComponentObjective& objective, const Eigen::VectorXd& w,
                                 const Eigen::VectorXd& gradient, const Eigen::MatrixXd& Z) {
    const Eigen::Index m = Z.cols();
    constexpr double h = 1e-5;
    Eigen::MatrixXd hz(m, m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const Eigen::VectorXd gp = objective.evaluate(w + h * Z.col(j), true).gradient;
        const Eigen::VectorXd gm = objective.evaluate(w - h * Z.col(j), true).gradient;
        hz.col(j) = Z.transpose() * (gp - gm) / (2.0 * h);
    }
    hz = 0.5 * (hz + hz.transpose());
    hz.diagonal().array() -= w.dot(gradient);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hz);
    const Eigen::VectorXd lam = es.eigenvalues().cwiseAbs();
    const double floor = std::max(1e-12, 1e-8 * lam.maxCoeff());
    const Eigen::VectorXd gz = Z.transpose() * gradient;
    const Eigen::VectorXd coef =
        (es.eigenvectors().transpose() * gz).array() / lam.array().max(floor);
    return Z * (es.eigenvectors() * coef);
}

}  // namespace

Eigen::MatrixXd PrincipalBasis::standardise(const Eigen::MatrixXd& X) const {
    if (X.cols() != center.size()) throw ShapeError("standardise: column count mismatch");
    return ((X.rowwise() - center.transpose()).array().rowwise() / scale.transpose().array())
        .matrix();
}

PrincipalBasis principal_basis(const Eigen::MatrixXd& X) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    if (n < 2 || p < 1) throw ShapeError("principal_basis needs at least 2 rows and 1 column");
    PrincipalBasis pb;
    pb.center = X.colwise().mean().transpose();
    const Eigen::MatrixXd centred = X.rowwise() - pb.center.transpose();
    pb.scale = (centred.colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt().transpose();
    for (Eigen::Index j = 0; j < p; ++j) {
        if (!(pb.scale(j) > 1e-12 * std::max(1.0, std::abs(pb.center(j))))) {
            throw StandardisationError("covariate column x" + std::to_string(j + 1) +
                                       " has zero variance");
        }
    }
    pb.X_std = (centred.array().rowwise() / pb.scale.transpose().array()).matrix();

    Eigen::BDCSVD<Eigen::MatrixXd> svd(pb.X_std, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd sv = svd.singularValues();
    const double top = sv.size() > 0 ? sv(0) * sv(0) : 0.0;
    Eigen::Index r = 0;
    while (r < sv.size() && sv(r) * sv(r) > 1e-10 * top) ++r;
    pb.basis = svd.matrixV().leftCols(r);
    pb.C = svd.matrixU().leftCols(r) * sv.head(r).asDiagonal();
    pb.eigenvalues = sv.head(r).array().square().matrix();
    return pb;
}

double structural_relevance(const Eigen::VectorXd& w, const PrincipalBasis& basis, double l) {
    if (w.size() != basis.rank()) throw ShapeError("structural_relevance: w has wrong length");
    if (l < 1.0) throw ValidationError("structural relevance needs l >= 1");
    const Eigen::VectorXd f = basis.C * w;
    const double ff = f.squaredNorm();
    if (!(ff > 0.0)) throw DegenerateComponentError("component scores vanish (C w = 0)");
    double sum_pow = 0.0;
    for (Eigen::Index j = 0; j < basis.X_std.cols(); ++j) {
        const auto x = basis.X_std.col(j);
        const double xf = x.dot(f);
        const double cor2 = xf * xf / (x.squaredNorm() * ff);
        sum_pow += std::pow(cor2, l);
    }
    return std::pow(sum_pow, 1.0 / l);
}

ComponentSolution optimize_component(const LinearisedModel& lin, const PrincipalBasis& basis,
                                     const ModelState& theta, double s, double l,
                                     const Eigen::MatrixXd& prior_loadings,
                                     const Eigen::VectorXd* warm_start) {
    lin.validate();
    if (!(s >= 0.0 && s <= 1.0)) throw ValidationError("s must lie in [0, 1]");
    if (!(l >= 1.0)) throw ValidationError("l must be at least 1");
    const Eigen::Index r = basis.rank();
    if (prior_loadings.rows() != r && prior_loadings.cols() > 0) {
        throw ShapeError("prior loadings must have one row per principal component");
    }
    if (prior_loadings.cols() >= r) {
        throw ValidationError("no feasible direction left for another component");
    }
    if (theta.xi_mean.size() != lin.layout.n_random()) {
        throw ShapeError("optimize_component: theta.xi_mean has wrong length");
    }

    const Eigen::MatrixXd prior = prior_loadings.cols() > 0 ? prior_loadings : Eigen::MatrixXd(r, 0);
    const ComponentObjective objective(lin, basis, theta, s, l, prior);
    const Eigen::MatrixXd cons = constraint_basis(objective.ctc(), prior);

    // Starting points.
    std::vector<Eigen::VectorXd> starts;
    if (warm_start && warm_start->size() == r) starts.push_back(*warm_start);
    {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(objective.ctwc());
        starts.push_back(ldlt.solve(objective.ctwr()));
    }
    for (Eigen::Index i = 0; i < std::min<Eigen::Index>(r, 50); ++i) {
        starts.push_back(Eigen::VectorXd::Unit(r, i));
    }

    Eigen::VectorXd w;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& start : starts) {
        Eigen::VectorXd candidate = project_out(cons, start);
        const double norm = candidate.norm();
        if (!(norm > 1e-10) || !candidate.allFinite()) continue;
        candidate /= norm;
        const double value = objective.evaluate(candidate, false).value;
        if (value > best) {
            best = value;
            w = candidate;
        }
    }
    if (w.size() == 0) throw ComponentFailureError("no feasible starting direction");

    ComponentSolution sol;
    auto eval = objective.evaluate(w, true);
    double step = -1.0;
    constexpr int kMaxSteps = 1000;
    bool converged = false;
    Eigen::VectorXd w_prev;
    Eigen::VectorXd g_prev;
    const bool use_newton = r - prior.cols() - 1 >= 1 && r <= kNewtonMaxDim;

    auto try_step = [&](const Eigen::VectorXd& direction, double length, int max_halvings) {
        for (int halving = 0; halving < max_halvings; ++halving) {
            Eigen::VectorXd trial = project_out(cons, w + length * direction);
            trial.normalize();
            auto trial_eval = objective.evaluate(trial, true);
            if (trial_eval.value > eval.value) {
                const double gain = trial_eval.value - eval.value;
                w_prev = w;
                g_prev = project_out(cons, eval.gradient);
                g_prev -= w.dot(g_prev) * w;
                w = trial;
                eval = std::move(trial_eval);
                sol.objective_path.push_back(eval.value);
                ++sol.n_steps;
                if (gain <= 1e-15 * std::max(1.0, std::abs(eval.value))) converged = true;
                return true;
            }
            length *= 0.5;
        }
        return false;
    };

    for (int it = 0; it < kMaxSteps; ++it) {
        Eigen::VectorXd g = project_out(cons, eval.gradient);
        g -= w.dot(g) * w;
        const double gnorm = g.norm();
        if (gnorm <= 1e-9 * std::max(1.0, std::abs(eval.value))) {
            converged = true;
            break;
        }

        bool accepted = false;
        if (use_newton) {
            const Eigen::MatrixXd Z = tangent_basis(cons, w);
            const Eigen::VectorXd d = newton_direction(objective, w, eval.gradient, Z);
            if (d.allFinite() && d.norm() > 0.0) accepted = try_step(d, 1.0, 40);
        }
        if (!accepted) {
            if (step <= 0.0 || w_prev.size() == 0) {
                step = 1.0 / gnorm;
            } else {
                // Barzilai-Borwein proposal; backtracking keeps ascent monotone.
                const Eigen::VectorXd sw = w - w_prev;
                const double sy = sw.dot(g_prev - g);
                step = sy > 0.0 ? sw.squaredNorm() / sy : 2.0 * step;
            }
            accepted = try_step(g, step, 80);
        }
        if (!accepted || converged) {
            // no ascent left at machine precision
            converged = true;
            break;
        }
    }
    if (!converged) {
        throw ComponentFailureError("component ascent did not converge in 1000 steps");
    }

    // Sign convention: the largest loading on the covariates is positive.
    const Eigen::VectorXd loads = basis.basis * w;
    Eigen::Index arg = 0;
    loads.cwiseAbs().maxCoeff(&arg);
    if (loads(arg) < 0.0) {
        w = -w;
        eval = objective.evaluate(w, false);
    }
    sol.w = w;
    sol.objective = eval.value;
    sol.all_gammas = eval.gammas;
    sol.gamma = eval.gammas(eval.gammas.size() - 1);
    return sol;
}

Eigen::VectorXd ComponentSet::predict_fixed(const Eigen::MatrixXd& X) const {
    if (X.cols() != center.size()) throw ShapeError("predict_fixed: column count mismatch");
    const Eigen::MatrixXd xs =
        ((X.rowwise() - center.transpose()).array().rowwise() / scale.transpose().array()).matrix();
    return xs * beta_std;
}

void ComponentConfig::validate() const {
    if (n_components < 1) throw ConfigError("K must be at least 1");
    if (s_grid.empty() || l_grid.empty()) throw ConfigError("s-grid and l-grid must not be empty");
    for (double s : s_grid) {
        if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("s-grid values must lie in [0, 1]");
    }
    for (double l : l_grid) {
        if (!(l >= 1.0)) throw ConfigError("l-grid values must be at least 1");
    }
    if (cv_folds < 2) throw ConfigError("cv-folds must be at least 2");
    if (max_outer_iters < 1) throw ConfigError("max-iters must be at least 1");
    if (!(tol > 0.0)) throw ConfigError("tol must be positive");
}

ComponentFit fit_component_em(const PanelDataset& data, double s, double l,
                              const ComponentConfig& config) {
    data.validate();
    config.validate();
    if (data.layout.n_times() < 2) throw InvalidLayoutError("AR(1) time effect needs T >= 2");
    const PrincipalBasis basis = principal_basis(data.X);
    const Eigen::Index K = config.n_components;
    if (K > basis.rank()) {
        throw ValidationError("K=" + std::to_string(K) + " exceeds the rank of X (" +
                              std::to_string(basis.rank()) + ")");
    }
    const Eigen::Index N = data.layout.n_individuals();
    const Eigen::Index T = data.layout.n_times();
    const Eigen::Index q = data.layout.n_random();
    const Eigen::Index r = basis.rank();

    ComponentFit out;
    FitReport& report = out.report;
    ComponentSet& comps = out.components;
    comps.s = s;
    comps.l = l;
    comps.center = basis.center;
    comps.scale = basis.scale;

    LinearisedModel lin;
    lin.X = data.X;
    lin.layout = data.layout;
    {
        const WorkingResponse wr =
            working_response(data.y, initial_mean(data.y, data.family), data.family);
        lin.z = wr.z;
        lin.gamma_diag = wr.gamma_diag;
    }

    ModelState theta;
    theta.beta = Eigen::VectorXd::Zero(data.X.cols());
    theta.sigma1_sq = 0.5;
    theta.sigma2_sq = 0.5;
    theta.rho = 0.0;
    theta.xi_mean = Eigen::VectorXd::Zero(q);
    theta.xi_cov = Eigen::MatrixXd::Zero(q, q);
    Eigen::VectorXd offset = Eigen::VectorXd::Zero(data.layout.n_obs());
    Eigen::MatrixXd loadings_prev;

    int iteration = 0;
    try {
        for (iteration = 1; iteration <= config.max_outer_iters; ++iteration) {
            const XiPosterior post = posterior_random_effects(lin, offset, theta);
            ModelState at_t = theta;
            at_t.xi_mean = post.mean;

            Eigen::MatrixXd W(r, K);
            Eigen::VectorXd gammas;
            for (Eigen::Index k = 0; k < K; ++k) {
                Eigen::VectorXd warm;
                const Eigen::VectorXd* warm_ptr = nullptr;
                if (loadings_prev.cols() == K) {
                    warm = loadings_prev.col(k);
                    warm_ptr = &warm;
                }
                const ComponentSolution sol =
                    optimize_component(lin, basis, at_t, s, l, W.leftCols(k), warm_ptr);
                W.col(k) = sol.w;
                gammas = sol.all_gammas;
            }
            loadings_prev = W;

            ModelState next = theta;
            next.beta = basis.basis * (W * gammas);
            bool floored = false;
            next.sigma1_sq = m_step_sigma1(post.mean, post.cov, N, &floored);
            const Ar1Params ar = m_step_ar1(post.mean, post.cov, T, &floored);
            next.sigma2_sq = ar.sigma2_sq;
            next.rho = ar.rho;

            offset = basis.C * (W * gammas);
            const XiPosterior updated = posterior_random_effects(lin, offset, next);
            next.xi_mean = updated.mean;
            next.xi_cov = updated.cov;
            const Eigen::VectorXd eta = offset + incidence_apply(lin.layout, next.xi_mean);
            const Eigen::VectorXd mu = inverse_link(eta, data.family, &report.n_eta_clamped);
            report.fitted_mean = mu;
            report.last_linearisation = lin;
            const WorkingResponse wr = working_response(data.y, mu, data.family);
            lin.z = wr.z;
            lin.gamma_diag = wr.gamma_diag;

            comps.W = W;
            comps.gamma_coefs = gammas;

            const double criterion = relative_change(next.stacked(), theta.stacked());
            report.trajectory.push_back(IterationRecord{
                iteration, criterion, next.beta, next.sigma1_sq, next.sigma2_sq, next.rho,
                std::numeric_limits<double>::quiet_NaN()});
            theta = std::move(next);
            report.n_iters = iteration;
            if (criterion < config.tol) {
                report.termination = Termination::Converged;
                break;
            }
        }
        if (report.termination != Termination::Converged) report.termination = Termination::MaxIters;
    } catch (const NumericalError& e) {
        report.termination = Termination::NumericalFailure;
        report.message = "iteration " + std::to_string(iteration) + ": " + e.what();
    }
    report.theta_hat = theta;
    if (comps.W.size() > 0) {
        comps.F = basis.C * comps.W;
        comps.loadings = basis.basis * comps.W;
        comps.beta_std = theta.beta;
    }
    return out;
}

std::vector<int> assign_folds(Eigen::Index n_individuals, int n_folds, std::uint64_t seed) {
    if (n_folds < 2 || n_individuals < n_folds) {
        throw ValidationError("cross-validation needs 2 <= folds <= N");
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_individuals));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> fold(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        fold[static_cast<std::size_t>(order[k])] = static_cast<int>(k % static_cast<std::size_t>(n_folds));
    }
    return fold;
}

ComponentFit fit_components(const PanelDataset& data, const ComponentConfig& config) {
    data.validate();
    config.validate();
    const Eigen::Index N = data.layout.n_individuals();
    const std::vector<int> fold = assign_folds(N, config.cv_folds, config.seed);

    std::vector<CvCell> cells;
    for (double s : config.s_grid) {
        for (double l : config.l_grid) cells.push_back({s, l, 0.0});
    }

    // Each (cell, fold) pair is independent.
    const std::size_t n_folds = static_cast<std::size_t>(config.cv_folds);
    std::vector<double> fold_deviance(cells.size() * n_folds, 0.0);
    detail::parallel_for(fold_deviance.size(), config.n_threads, [&](std::size_t job) {
        const CvCell& cell = cells[job / n_folds];
        const int f = static_cast<int>(job % n_folds);
        std::vector<Eigen::Index> train;
        std::vector<Eigen::Index> test;
        for (Eigen::Index i = 0; i < N; ++i) {
            (fold[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
        }
        const PanelDataset train_data = subset_individuals(data, train);
        const PanelDataset test_data = subset_individuals(data, test);
        double dev = std::numeric_limits<double>::infinity();
        try {
            const ComponentFit inner = fit_component_em(train_data, cell.s, cell.l, config);
            if (inner.report.termination != Termination::NumericalFailure) {
                const Eigen::VectorXd eta = inner.components.predict_fixed(test_data.X);
                dev = deviance(test_data.y, inverse_link(eta, data.family), data.family);
            }
        } catch (const NumericalError&) {
        } catch (const ValidationError&) {
            // e.g. a training fold whose X lost rank below K
        }
        fold_deviance[job] = dev;
    });

    std::size_t best = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        double total = 0.0;
        for (std::size_t f = 0; f < n_folds; ++f) total += fold_deviance[c * n_folds + f];
        cells[c].deviance = total;
        if (total < cells[best].deviance) best = c;
    }
    if (!std::isfinite(cells[best].deviance)) {
        throw NumericalError("every cross-validation cell failed");
    }

    ComponentFit result = fit_component_em(data, cells[best].s, cells[best].l, config);
    result.cv_path = std::move(cells);
    return result;
}

}  // namespace panelglmm
