#pragma once

#include "panelglmm/panel.hpp"
#include "panelglmm/ridge_em.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace panelglmm {

/// Principal components of the column-standardised X with non-zero
/// eigenvalues. Xs = C * basis^T exactly (up to rounding), C^T C is diagonal.
struct PrincipalBasis {
    Eigen::MatrixXd C;              // n x r component scores
    Eigen::MatrixXd basis;          // p x r orthonormal loadings
    Eigen::VectorXd eigenvalues;    // r, diag(C^T C), descending
    Eigen::VectorXd center;         // p column means of X
    Eigen::VectorXd scale;          // p column standard deviations (1/n)
    Eigen::MatrixXd X_std;          // n x p standardised X

    Eigen::Index rank() const { return C.cols(); }
    /// Applies the stored centring and scaling to new rows.
    Eigen::MatrixXd standardise(const Eigen::MatrixXd& X) const;
};

/// Throws StandardisationError naming the first zero-variance column.
PrincipalBasis principal_basis(const Eigen::MatrixXd& X);

/// phi(w) = (sum_j cor^2(x^j, C w)^l)^{1/l}. Throws DegenerateComponentError
/// when C w vanishes.
double structural_relevance(const Eigen::VectorXd& w, const PrincipalBasis& basis, double l);

struct ComponentSolution {
    Eigen::VectorXd w;              // unit loading in principal coordinates (r)
    double gamma = 0.0;             // coefficient of f = C w in the joint fit
    Eigen::VectorXd all_gammas;     // coefficients of [prior components, f]
    double objective = 0.0;         // Q_reg at w (up to w-free constants)
    int n_steps = 0;
    std::vector<double> objective_path;  // Q_reg after every accepted step
};

/// Maximises Q_reg(w) = (1 - s) * (-1/2 |r - F_all g|^2_{Gamma^{-1}}) + s * phi(w)
/// over unit w with (C w)^T f_j = 0 for every prior component, where
/// r = z - U theta.xi_mean, F_all = [prior scores, C w] and g is profiled by
/// weighted least squares. Projected gradient ascent on the sphere with
/// backtracking; multi-start over the warm start, the WLS direction and the
/// leading principal axes. `prior_loadings` is r x (k-1).
/// Throws ComponentFailureError if 1000 steps do not reach stationarity.
ComponentSolution optimize_component(const LinearisedModel& lin, const PrincipalBasis& basis,
                                     const ModelState& theta, double s, double l,
                                     const Eigen::MatrixXd& prior_loadings,
                                     const Eigen::VectorXd* warm_start = nullptr);

struct ComponentSet {
    Eigen::MatrixXd W;           // r x K loadings in principal coordinates
    Eigen::MatrixXd F;           // n x K scores, F = C W
    Eigen::MatrixXd loadings;    // p x K loadings on the standardised covariates
    Eigen::VectorXd gamma_coefs; // K
    Eigen::VectorXd beta_std;    // p, coefficients on standardised covariates
    Eigen::VectorXd center;
    Eigen::VectorXd scale;
    double s = 0.0;
    double l = 1.0;

    /// Fixed part of the linear predictor for new covariate rows.
    Eigen::VectorXd predict_fixed(const Eigen::MatrixXd& X) const;
};

struct ComponentConfig {
    int n_components = 1;
    std::vector<double> s_grid{0.5};
    std::vector<double> l_grid{1.0};
    int cv_folds = 2;
    std::uint64_t seed = 1;
    int max_outer_iters = 500;
    double tol = 1e-6;
    unsigned n_threads = 1;

    void validate() const;
};

struct CvCell {
    double s = 0.0;
    double l = 1.0;
    double deviance = 0.0;  // summed held-out deviance, +inf if a fold failed
};

struct ComponentFit {
    ComponentSet components;
    FitReport report;
    std::vector<CvCell> cv_path;
};

/// EM loop of the ridge fit with the beta step replaced by extraction of K
/// supervised components at fixed (s, l).
ComponentFit fit_component_em(const PanelDataset& data, double s, double l,
                              const ComponentConfig& config);

/// Individuals shuffled with `seed`, then dealt round-robin into folds.
std::vector<int> assign_folds(Eigen::Index n_individuals, int n_folds, std::uint64_t seed);

/// Picks (s, l) by cross-validated held-out deviance (folds partition
/// individuals; held-out random effects set to zero; ties go to the earlier
/// grid cell), then refits on all data.
ComponentFit fit_components(const PanelDataset& data, const ComponentConfig& config);

}  // namespace panelglmm
