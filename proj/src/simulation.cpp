#include "panelglmm/simulation.hpp"

#include "panelglmm/errors.hpp"
#include "panelglmm/io.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <random>

namespace panelglmm {

Eigen::VectorXd SimScenario::default_beta() {
    Eigen::VectorXd b(4);
    b << 0.4, -0.3, 0.2, 0.1;
    return b;
}

void SimScenario::validate() const {
    if (layout.n_times() < 2) throw InvalidLayoutError("scenario needs T >= 2");
    if (beta_true.size() < 1) throw ValidationError("scenario needs at least one covariate");
    if (sigma1_sq_true < 0.0 || !(sigma2_sq_true > 0.0)) {
        throw ValidationError("scenario variances must be positive");
    }
    if (!(std::abs(rho_true) < 1.0)) throw ValidationError("scenario rho must lie in (-1, 1)");
    if (!(x_correlation >= 0.0 && x_correlation < 1.0)) {
        throw ValidationError("x-correlation must lie in [0, 1)");
    }
    if (!(x_individual_share >= 0.0 && x_individual_share <= 1.0)) {
        throw ValidationError("x-individual-share must lie in [0, 1]");
    }
    if (n_replicates < 1) throw ValidationError("replicates must be at least 1");
}

SimScenario SimScenario::replicate(int r) const {
    SimScenario s = *this;
    s.seed = seed + static_cast<std::uint64_t>(r);
    return s;
}

SimulatedPanel generate_panel(const SimScenario& scenario) {
    scenario.validate();
    const Eigen::Index N = scenario.layout.n_individuals();
    const Eigen::Index T = scenario.layout.n_times();
    const Eigen::Index n = scenario.layout.n_obs();
    const Eigen::Index p = scenario.beta_true.size();

    std::mt19937_64 rng(scenario.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    SimulatedPanel sim;
    sim.data.layout = scenario.layout;
    sim.data.family = scenario.family;
    sim.data.X.resize(n, p);
    const double shared = std::sqrt(scenario.x_correlation);
    const double own = std::sqrt(1.0 - scenario.x_correlation);
    // Each column's idiosyncratic part mixes an individual-level draw (share
    // x_individual_share of its variance) with fresh noise, so columns stay
    // standard normal with pairwise correlation x_correlation.
    const double persistent = std::sqrt(scenario.x_individual_share);
    const double fresh = std::sqrt(1.0 - scenario.x_individual_share);
    Eigen::MatrixXd individual_part(N, p);
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) individual_part(i, j) = normal(rng);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        const double common = normal(rng);
        const Eigen::Index who = scenario.layout.individual_of(i);
        for (Eigen::Index j = 0; j < p; ++j) {
            const double idio = persistent * individual_part(who, j) + fresh * normal(rng);
            sim.data.X(i, j) = shared * common + own * idio;
        }
    }

    const double sd1 = std::sqrt(std::max(scenario.sigma1_sq_true, kSimVarianceFloor));
    sim.xi1.resize(N);
    for (Eigen::Index i = 0; i < N; ++i) sim.xi1(i) = sd1 * normal(rng);

    const double rho = scenario.rho_true;
    const double innov_sd = std::sqrt(scenario.sigma2_sq_true);
    sim.xi2.resize(T);
    sim.xi2(0) = innov_sd / std::sqrt(1.0 - rho * rho) * normal(rng);
    for (Eigen::Index t = 1; t < T; ++t) sim.xi2(t) = rho * sim.xi2(t - 1) + innov_sd * normal(rng);

    sim.eta = sim.data.X * scenario.beta_true;
    for (Eigen::Index i = 0; i < n; ++i) {
        sim.eta(i) += sim.xi1(scenario.layout.individual_of(i)) +
                      sim.xi2(scenario.layout.time_of(i));
    }
    if (scenario.family.tag == FamilyTag::PoissonLog && sim.eta.maxCoeff() > 30.0) {
        throw ScenarioRejectedError("Poisson linear predictor exceeds 30; use a smaller beta");
    }

    sim.data.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double eta = sim.eta(i);
        switch (scenario.family.tag) {
            case FamilyTag::PoissonLog: {
                std::poisson_distribution<long long> pois(std::exp(eta));
                sim.data.y(i) = static_cast<double>(pois(rng));
                break;
            }
            case FamilyTag::BernoulliLogit: {
                std::bernoulli_distribution bern(1.0 / (1.0 + std::exp(-eta)));
                sim.data.y(i) = bern(rng) ? 1.0 : 0.0;
                break;
            }
            case FamilyTag::GaussianIdentity:
                sim.data.y(i) = eta + std::sqrt(scenario.family.dispersion) * normal(rng);
                break;
        }
    }
    return sim;
}

Estimator ridge_estimator(RidgeConfig config) {
    return [config = std::move(config)](const SimulatedPanel& sim, const SimScenario&) {
        const auto start = std::chrono::steady_clock::now();
        const FitReport report = fit(sim.data, config);
        ParameterEstimate est;
        est.beta = report.theta_hat.beta;
        est.sigma1_sq = report.theta_hat.sigma1_sq;
        est.sigma2_sq = report.theta_hat.sigma2_sq;
        est.rho = report.theta_hat.rho;
        est.n_iters = report.n_iters;
        est.termination = report.termination;
        est.trajectory = report.trajectory;
        est.runtime_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return est;
    };
}

Estimator truth_estimator() {
    return [](const SimulatedPanel&, const SimScenario& scenario) {
        ParameterEstimate est;
        est.beta = scenario.beta_true;
        est.sigma1_sq = scenario.sigma1_sq_true;
        est.sigma2_sq = scenario.sigma2_sq_true;
        est.rho = scenario.rho_true;
        return est;
    };
}

std::vector<ReplicateResult> run_replicates(const SimScenario& scenario, const Estimator& estimator,
                                            unsigned n_threads) {
    scenario.validate();
    const auto count = static_cast<std::size_t>(scenario.n_replicates);
    std::vector<ReplicateResult> results(count);
    detail::parallel_for(count, n_threads, [&](std::size_t r) {
        const SimScenario rep = scenario.replicate(static_cast<int>(r));
        results[r].replicate = static_cast<int>(r);
        results[r].estimate = estimator(generate_panel(rep), rep);
    });
    return results;
}

void ConvergenceStudy::write_csv(std::ostream& out) const {
    out << "replicate,iteration,criterion";
    for (Eigen::Index j = 0; j < scenario.beta_true.size(); ++j) out << ",beta_" << (j + 1);
    out << ",sigma1_sq,sigma2_sq,rho,lambda\n";
    for (const auto& rep : replicates) {
        for (const auto& rec : rep.estimate.trajectory) {
            out << rep.replicate << ',' << rec.iteration << ',' << format_double(rec.criterion);
            for (Eigen::Index j = 0; j < rec.beta.size(); ++j) out << ',' << format_double(rec.beta(j));
            out << ',' << format_double(rec.sigma1_sq) << ',' << format_double(rec.sigma2_sq) << ','
                << format_double(rec.rho) << ',' << format_double(rec.lambda) << '\n';
        }
    }
}

double ConvergenceStudy::median_iterations() const {
    std::vector<double> iters;
    for (const auto& rep : replicates) iters.push_back(rep.estimate.n_iters);
    return quantile(std::move(iters), 0.5);
}

int ConvergenceStudy::n_converged() const {
    return static_cast<int>(std::count_if(replicates.begin(), replicates.end(), [](const auto& rep) {
        return rep.estimate.termination == Termination::Converged;
    }));
}

ConvergenceStudy convergence_study(const SimScenario& scenario, const RidgeConfig& config,
                                   unsigned n_threads) {
    ConvergenceStudy study;
    study.scenario = scenario;
    study.replicates = run_replicates(scenario, ridge_estimator(config), n_threads);
    return study;
}

void MseStudy::write_csv(std::ostream& out) const {
    out << "T,parameter,mse,n_used\n";
    for (const auto& row : rows) {
        out << row.n_times << ',' << row.parameter << ',' << format_double(row.mse) << ','
            << row.n_used << '\n';
    }
}

double MseStudy::mse(Eigen::Index n_times, const std::string& parameter) const {
    for (const auto& row : rows) {
        if (row.n_times == n_times && row.parameter == parameter) return row.mse;
    }
    throw ValidationError("no MSE row for T=" + std::to_string(n_times) + ", " + parameter);
}

MseStudy mse_study(const SimScenario& base, const std::vector<Eigen::Index>& t_list,
                   const Estimator& estimator, unsigned n_threads) {
    MseStudy study;
    for (const Eigen::Index T : t_list) {
        SimScenario scenario = base;
        scenario.layout = PanelLayout(base.layout.n_individuals(), T);
        const auto reps = run_replicates(scenario, estimator, n_threads);
        double sum_beta = 0.0;
        double sum_s1 = 0.0;
        double sum_s2 = 0.0;
        double sum_rho = 0.0;
        int used = 0;
        for (const auto& rep : reps) {
            const ParameterEstimate& est = rep.estimate;
            study.runtimes.push_back(est.runtime_seconds);
            if (est.termination == Termination::NumericalFailure) continue;
            ++used;
            sum_beta += (est.beta - scenario.beta_true).squaredNorm() /
                        static_cast<double>(scenario.beta_true.size());
            sum_s1 += std::pow(est.sigma1_sq - scenario.sigma1_sq_true, 2);
            sum_s2 += std::pow(est.sigma2_sq - scenario.sigma2_sq_true, 2);
            sum_rho += std::pow(est.rho - scenario.rho_true, 2);
        }
        const double denom = used > 0 ? static_cast<double>(used) : std::nan("");
        study.rows.push_back({T, "beta", sum_beta / denom, used});
        study.rows.push_back({T, "sigma1_sq", sum_s1 / denom, used});
        study.rows.push_back({T, "sigma2_sq", sum_s2 / denom, used});
        study.rows.push_back({T, "rho", sum_rho / denom, used});
    }
    return study;
}

void RhoStudy::write_estimates_csv(std::ostream& out) const {
    out << "rho_true,replicate,rho_hat\n";
    for (std::size_t k = 0; k < rho_list.size(); ++k) {
        for (std::size_t r = 0; r < estimates[k].size(); ++r) {
            out << format_double(rho_list[k]) << ',' << r << ',' << format_double(estimates[k][r])
                << '\n';
        }
    }
}

void RhoStudy::write_summary_csv(std::ostream& out) const {
    out << "rho_true,median,q1,q3,n_used\n";
    for (const auto& s : summary) {
        out << format_double(s.rho_true) << ',' << format_double(s.median) << ','
            << format_double(s.q1) << ',' << format_double(s.q3) << ',' << s.n_used << '\n';
    }
}

RhoStudy rho_recovery_study(const std::vector<double>& rho_list, const SimScenario& scenario,
                            const Estimator& estimator, unsigned n_threads) {
    RhoStudy study;
    study.rho_list = rho_list;
    for (const double rho : rho_list) {
        SimScenario s = scenario;
        s.rho_true = rho;
        const auto reps = run_replicates(s, estimator, n_threads);
        std::vector<double> values;
        for (const auto& rep : reps) {
            if (rep.estimate.termination == Termination::NumericalFailure) continue;
            values.push_back(rep.estimate.rho);
        }
        RhoSummary summary;
        summary.rho_true = rho;
        summary.n_used = static_cast<int>(values.size());
        if (!values.empty()) {
            summary.median = quantile(values, 0.5);
            summary.q1 = quantile(values, 0.25);
            summary.q3 = quantile(values, 0.75);
        } else {
            summary.median = summary.q1 = summary.q3 = std::nan("");
        }
        study.estimates.push_back(std::move(values));
        study.summary.push_back(summary);
    }
    return study;
}

double quantile(std::vector<double> values, double prob) {
    if (values.empty()) throw ValidationError("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double h = prob * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace panelglmm
