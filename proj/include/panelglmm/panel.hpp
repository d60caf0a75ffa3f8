#pragma once

#include "panelglmm/family.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace panelglmm {

/// Balanced panel: N individuals each observed at the same T time points.
///
/// Observations are stored individual-major: row i = individual * T + time
/// (both zero-based). Every length-n vector in the library follows this order.
class PanelLayout {
public:
    PanelLayout() = default;
    /// Throws InvalidLayoutError unless N >= 1 and T >= 1.
    PanelLayout(Eigen::Index n_individuals, Eigen::Index n_times);

    Eigen::Index n_individuals() const { return n_individuals_; }
    Eigen::Index n_times() const { return n_times_; }
    Eigen::Index n_obs() const { return n_individuals_ * n_times_; }
    /// Number of random effects, N + T.
    Eigen::Index n_random() const { return n_individuals_ + n_times_; }

    Eigen::Index row(Eigen::Index individual, Eigen::Index time) const {
        return individual * n_times_ + time;
    }
    Eigen::Index individual_of(Eigen::Index row) const { return row / n_times_; }
    Eigen::Index time_of(Eigen::Index row) const { return row % n_times_; }

    friend bool operator==(const PanelLayout&, const PanelLayout&) = default;

private:
    Eigen::Index n_individuals_ = 0;
    Eigen::Index n_times_ = 0;
};

/// Random-effect incidence matrices. U is 2-sparse per row (one individual
/// column, one time column) but is kept dense; the estimation code goes
/// through the incidence helpers below for products.
struct DesignMatrices {
    Eigen::MatrixXd X;   // n x p, supplied by the caller
    Eigen::MatrixXd U1;  // n x N, I_N (x) 1_T
    Eigen::MatrixXd U2;  // n x T, 1_N (x) I_T
    Eigen::MatrixXd U;   // n x (N+T), [U1 | U2]
};

/// Builds U1, U2 and U for `layout`. X is left empty. Throws
/// InvalidLayoutError when T < 2 (the AR(1) effect needs two time points).
DesignMatrices build_designs(const PanelLayout& layout);

/// eta = X beta + U xi. Throws ShapeError on dimension mismatch.
Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& X, const Eigen::MatrixXd& U,
                                 const Eigen::VectorXd& beta, const Eigen::VectorXd& xi);

// Incidence products that never materialise U.

/// U xi: row i gets xi1[individual(i)] + xi2[time(i)].
Eigen::VectorXd incidence_apply(const PanelLayout& layout, const Eigen::VectorXd& xi);
/// U^T v: per-individual sums followed by per-time sums.
Eigen::VectorXd incidence_apply_transpose(const PanelLayout& layout, const Eigen::VectorXd& v);
/// U^T M for an n x k matrix M.
Eigen::MatrixXd incidence_apply_transpose(const PanelLayout& layout, const Eigen::MatrixXd& m);
/// U^T diag(w) U.
Eigen::MatrixXd incidence_gram(const PanelLayout& layout, const Eigen::VectorXd& w);

/// theta = (beta, sigma1^2, sigma2^2, rho) plus the current posterior moments
/// of xi = (xi1, xi2).
struct ModelState {
    Eigen::VectorXd beta;
    double sigma1_sq = 0.5;
    double sigma2_sq = 0.5;
    double rho = 0.0;
    Eigen::VectorXd xi_mean;
    Eigen::MatrixXd xi_cov;

    /// Stacked (beta, sigma1^2, sigma2^2, rho), the vector convergence is
    /// measured on.
    Eigen::VectorXd stacked() const;

    /// Checks variance positivity, |rho| < 1 and, when present, symmetry and
    /// PSD-ness of xi_cov (tolerance 1e-10). Throws ValidationError.
    void validate() const;
};

struct PanelDataset {
    PanelLayout layout;
    Eigen::VectorXd y;
    Eigen::MatrixXd X;
    Family family;

    Eigen::Index n_covariates() const { return X.cols(); }

    /// Shape and response-support checks (Poisson: non-negative integers,
    /// Bernoulli: {0,1}). Throws ValidationError.
    void validate() const;
};

/// Dataset restricted to the given individuals (in the order given), with
/// rows re-laid out for the smaller panel.
PanelDataset subset_individuals(const PanelDataset& data,
                                const std::vector<Eigen::Index>& individuals);

}  // namespace panelglmm
