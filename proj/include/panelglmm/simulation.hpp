#pragma once

#include "panelglmm/panel.hpp"
#include "panelglmm/ridge_em.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

namespace panelglmm {

/// Data-generating setup for synthetic panels. X has equicorrelated
/// standard-normal columns (pairwise correlation x_correlation); a share
/// x_individual_share of each column's own variance is constant within an
/// individual, as for slowly moving panel covariates.
struct SimScenario {
    PanelLayout layout{10, 20};
    Eigen::VectorXd beta_true = default_beta();
    double sigma1_sq_true = 1.0;
    double sigma2_sq_true = 0.5;
    double rho_true = 0.5;
    double x_correlation = 0.5;
    double x_individual_share = 0.6;
    Family family{};
    std::uint64_t seed = 1;
    int n_replicates = 1;

    static Eigen::VectorXd default_beta();
    void validate() const;
    /// Scenario for replicate r: identical except seed + r.
    SimScenario replicate(int r) const;
};

struct SimulatedPanel {
    PanelDataset data;
    Eigen::VectorXd xi1;  // N individual effects
    Eigen::VectorXd xi2;  // T time effects
    Eigen::VectorXd eta;
};

/// Variance floor applied to sigma1^2 when drawing individual effects.
inline constexpr double kSimVarianceFloor = 1e-10;

/// Deterministic in scenario.seed. Throws ScenarioRejectedError when a
/// Poisson linear predictor exceeds 30 (counts would overflow).
SimulatedPanel generate_panel(const SimScenario& scenario);

/// Point estimates of one fit plus its trajectory.
struct ParameterEstimate {
    Eigen::VectorXd beta;
    double sigma1_sq = 0.0;
    double sigma2_sq = 0.0;
    double rho = 0.0;
    int n_iters = 0;
    Termination termination = Termination::Converged;
    std::vector<IterationRecord> trajectory;
    double runtime_seconds = 0.0;
};

using Estimator = std::function<ParameterEstimate(const SimulatedPanel&, const SimScenario&)>;

/// Fits the ridge EM with `config`.
Estimator ridge_estimator(RidgeConfig config);
/// Returns the true parameters (for checking study plumbing).
Estimator truth_estimator();

struct ReplicateResult {
    int replicate = 0;
    ParameterEstimate estimate;
};

/// Runs `scenario.n_replicates` fits, replicate r seeded with seed + r. Runs
/// replicates on up to `n_threads` threads (0 = hardware concurrency); the
/// result order is by replicate regardless of scheduling.
std::vector<ReplicateResult> run_replicates(const SimScenario& scenario, const Estimator& estimator,
                                            unsigned n_threads = 0);

struct ConvergenceStudy {
    SimScenario scenario;
    std::vector<ReplicateResult> replicates;

    /// Columns: replicate,iteration,criterion,beta_1..beta_p,sigma1_sq,sigma2_sq,rho,lambda
    void write_csv(std::ostream& out) const;
    double median_iterations() const;
    int n_converged() const;
};

ConvergenceStudy convergence_study(const SimScenario& scenario, const RidgeConfig& config,
                                   unsigned n_threads = 0);

struct MseRow {
    Eigen::Index n_times = 0;
    std::string parameter;  // beta, sigma1_sq, sigma2_sq, rho
    double mse = 0.0;
    int n_used = 0;
};

struct MseStudy {
    std::vector<MseRow> rows;
    std::vector<double> runtimes;

    /// Columns: T,parameter,mse,n_used
    void write_csv(std::ostream& out) const;
    double mse(Eigen::Index n_times, const std::string& parameter) const;
};

/// For each T, n_replicates fits of `base` with n_times = T. MSE of beta is
/// averaged over coordinates. Replicates ending in a numerical failure are
/// left out (n_used counts the rest).
MseStudy mse_study(const SimScenario& base, const std::vector<Eigen::Index>& t_list,
                   const Estimator& estimator, unsigned n_threads = 0);

struct RhoSummary {
    double rho_true = 0.0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    int n_used = 0;
};

struct RhoStudy {
    std::vector<double> rho_list;
    std::vector<std::vector<double>> estimates;  // per rho_true, per replicate
    std::vector<RhoSummary> summary;

    /// Columns: rho_true,replicate,rho_hat
    void write_estimates_csv(std::ostream& out) const;
    /// Columns: rho_true,median,q1,q3,n_used
    void write_summary_csv(std::ostream& out) const;
};

RhoStudy rho_recovery_study(const std::vector<double>& rho_list, const SimScenario& scenario,
                            const Estimator& estimator, unsigned n_threads = 0);

/// Linear-interpolation quantile (R type 7) of `values`, 0 <= prob <= 1.
double quantile(std::vector<double> values, double prob);

}  // namespace panelglmm
