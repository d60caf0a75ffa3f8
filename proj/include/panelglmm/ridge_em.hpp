#pragma once

#include "panelglmm/ar1.hpp"
#include "panelglmm/panel.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace panelglmm {

/// Floor applied to sigma1^2 and sigma2^2 after every M-step.
inline constexpr double kVarianceFloor = 1e-10;

/// One Schall linearisation: z = X beta + U xi + e with Var(e | xi) = diag(gamma).
/// U is implied by `layout`; `dense_U()` materialises it when needed.
struct LinearisedModel {
    Eigen::VectorXd z;
    Eigen::VectorXd gamma_diag;
    Eigen::MatrixXd X;
    PanelLayout layout;

    Eigen::MatrixXd dense_U() const { return build_designs(layout).U; }
    /// Throws ShapeError / ValidationError when sizes disagree or some
    /// gamma_i <= 0.
    void validate() const;
};

struct XiPosterior {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// D = blockdiag(sigma1^2 I_N, Sigma2(sigma2^2, rho)).
Eigen::MatrixXd random_effect_covariance(const ModelState& theta, const PanelLayout& layout);
/// D^{-1}, built from the closed-form AR(1) precision.
Eigen::MatrixXd random_effect_precision(const ModelState& theta, const PanelLayout& layout);

/// Moments of xi | z for z = offset + U xi + e. Solved in precision form,
/// cov = (U^T Gamma^{-1} U + D^{-1})^{-1}, which equals D - D U^T V^{-1} U D.
XiPosterior posterior_random_effects(const LinearisedModel& lin, const Eigen::VectorXd& offset,
                                     const ModelState& theta);

/// E-step with offset X beta.
XiPosterior e_step(const LinearisedModel& lin, const ModelState& theta);

/// beta = (X^T Gamma^{-1} X + lambda I)^{-1} X^T Gamma^{-1} (z - U xi_mean).
Eigen::VectorXd m_step_beta(const LinearisedModel& lin, const Eigen::VectorXd& xi_mean,
                            double lambda);

/// (|m1|^2 + tr C11) / N, floored at kVarianceFloor. Sets *floored when the
/// floor was hit.
double m_step_sigma1(const Eigen::VectorXd& xi_mean, const Eigen::MatrixXd& xi_cov,
                     Eigen::Index n_individuals, bool* floored = nullptr);

/// AR(1) profile ML update from S2 = m2 m2^T + C22 (the trailing T block).
Ar1Params m_step_ar1(const Eigen::VectorXd& xi_mean, const Eigen::MatrixXd& xi_cov,
                     Eigen::Index n_times, bool* floored = nullptr);

/// Expected complete penalised log-likelihood Q_pen(candidate, theta_t), with
/// the expectation taken under `posterior` (computed at theta_t).
double q_pen(const LinearisedModel& lin, const ModelState& candidate,
             const XiPosterior& posterior, double lambda);

/// Which fitted values the smoother reproduces: X beta + U xi (the full
/// linear smoother of the linearised model) or X beta alone.
enum class HatKind { FullSmoother, FixedOnly };

struct PenalisedSolution {
    Eigen::VectorXd beta;
    Eigen::VectorXd xi;
};

/// Solves the ridge-augmented mixed-model equations
///   (M^T Gamma^{-1} M + blockdiag(lambda I, D^{-1})) [beta; xi] = M^T Gamma^{-1} z,
/// M = [X | U].
PenalisedSolution penalised_mixed_solve(const LinearisedModel& lin, const ModelState& theta,
                                        double lambda);

/// Dense n x n smoother S_lambda with zhat = S_lambda z.
Eigen::MatrixXd hat_matrix(const LinearisedModel& lin, const ModelState& theta, double lambda,
                           HatKind kind = HatKind::FullSmoother);

struct GcvPoint {
    double lambda = 0.0;
    double gcv = 0.0;    // +inf for rejected points (tr S >= n)
    double trace = 0.0;  // tr S_lambda
};

struct GcvSelection {
    double lambda = 0.0;
    std::size_t grid_index = 0;  // position of the grid argmin
    std::vector<GcvPoint> path;
};

/// Evaluates GCV(lambda) = n^{-1} |z - S z|^2_{Gamma^{-1}} / (1 - tr S / n)^2
/// for many lambda at fixed (Gamma, D) without forming S. Setup costs one
/// q x q factorisation and one p x p eigendecomposition; each lambda is O(n p).
class GcvEvaluator {
public:
    GcvEvaluator(const LinearisedModel& lin, const ModelState& theta,
                 HatKind kind = HatKind::FullSmoother);

    GcvPoint evaluate(double lambda) const;

private:
    HatKind kind_;
    Eigen::Index n_ = 0;
    Eigen::VectorXd gamma_;
    Eigen::VectorXd eig_values_;   // of K = X^T V^{-1} X (or X^T Gamma^{-1} X)
    Eigen::VectorXd proj_rhs_;     // Q^T X^T V^{-1} z
    Eigen::VectorXd h_diag_;       // diag(Q^T H Q)
    Eigen::MatrixXd b_rot_;        // V^{-1} X Q (or X Q)
    Eigen::VectorXd a_;            // V^{-1} z (or z)
    double random_trace_ = 0.0;    // tr(U D U^T V^{-1})
};

/// Grid argmin of GCV; ties go to the larger lambda. Throws DegenerateGcvError
/// if every grid point has tr S >= n.
GcvSelection gcv_select_lambda(const LinearisedModel& lin, const ModelState& theta,
                               const std::vector<double>& grid,
                               HatKind kind = HatKind::FullSmoother);
GcvSelection gcv_select_lambda(const GcvEvaluator& evaluator, const std::vector<double>& grid);

/// Golden-section minimisation of GCV over log(lambda) between the grid
/// neighbours of `selection`'s argmin. Returns the refined lambda, or the grid
/// argmin if no interior point does better.
double refine_gcv_lambda(const GcvEvaluator& evaluator, const std::vector<double>& grid,
                         const GcvSelection& selection);

/// `count` log-spaced points from lo to hi inclusive.
std::vector<double> log_spaced_grid(double lo, double hi, int count);

struct RidgeConfig {
    std::vector<double> lambda_grid = log_spaced_grid(1e-4, 1e4, 50);
    int max_outer_iters = 500;
    double tol = 1e-6;
    int em_inner_iters = 1;
    /// Bypasses GCV; may be 0 (unpenalised fit).
    std::optional<double> fixed_lambda;
    HatKind hat_kind = HatKind::FullSmoother;
    /// Refine the grid argmin continuously in log(lambda). A pure grid choice
    /// can alternate between two neighbouring grid values from one iteration
    /// to the next and never settle.
    bool refine_lambda = true;

    void validate() const;
};

enum class Termination { Converged, MaxIters, NumericalFailure };
std::string to_string(Termination t);

struct IterationRecord {
    int iteration = 0;
    double criterion = 0.0;
    Eigen::VectorXd beta;
    double sigma1_sq = 0.0;
    double sigma2_sq = 0.0;
    double rho = 0.0;
    double lambda = 0.0;
};

struct FitReport {
    ModelState theta_hat;
    std::vector<double> lambda_path;
    std::vector<std::vector<GcvPoint>> gcv_paths;
    std::vector<IterationRecord> trajectory;
    int n_iters = 0;
    Termination termination = Termination::MaxIters;
    std::string message;
    std::size_t n_eta_clamped = 0;
    std::vector<std::string> warnings;
    Eigen::VectorXd fitted_mean;
    /// Last linearisation (working response and weights at theta_hat's
    /// predecessor), kept for diagnostics.
    LinearisedModel last_linearisation;
};

/// L2-penalised EM inside a Schall linearisation loop. Each outer iteration:
/// linearise, pick lambda by GCV at the current theta, run the E/M sweep(s),
/// recompute the posterior mean of xi at the new theta and re-linearise.
/// Stops when |theta_new - theta| / (|theta| + 1e-12) < tol. Numerical
/// failures end the fit with Termination::NumericalFailure and a message
/// naming the iteration.
FitReport fit(const PanelDataset& data, const RidgeConfig& config);

/// Relative L2 change used as the convergence criterion.
double relative_change(const Eigen::VectorXd& next, const Eigen::VectorXd& current);

}  // namespace panelglmm
