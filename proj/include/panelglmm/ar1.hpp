#pragma once

#include <Eigen/Dense>

namespace panelglmm {

/// Stationary AR(1): xi_{t+1} = rho xi_t + nu_t, nu_t ~ N(0, sigma2_sq).
/// sigma2_sq is the innovation variance; the marginal variance is
/// sigma2_sq / (1 - rho^2).
struct Ar1Params {
    double rho = 0.0;
    double sigma2_sq = 1.0;
};

/// Largest |rho| returned by any update.
inline constexpr double kStationarityMargin = 1e-6;

/// Entry (s,t) = sigma2_sq / (1 - rho^2) * rho^|s-t|.
Eigen::MatrixXd ar1_covariance(const Ar1Params& params, Eigen::Index n_times);

/// Closed-form tridiagonal inverse of ar1_covariance: (1/sigma2_sq) B(rho) with
/// diagonal (1, 1+rho^2, ..., 1+rho^2, 1) and off-diagonal -rho. Needs T >= 2.
Eigen::MatrixXd ar1_precision(const Ar1Params& params, Eigen::Index n_times);

/// log det ar1_covariance = T log(sigma2_sq) - log(1 - rho^2).
double ar1_logdet(const Ar1Params& params, Eigen::Index n_times);

/// -1/2 log det Sigma - 1/2 tr(Sigma^{-1} S2): the expected Gaussian
/// log-density of xi2 up to the 2*pi constant, given its second moment S2.
double ar1_expected_loglik(const Ar1Params& params, const Eigen::MatrixXd& second_moment);

/// Maximises ar1_expected_loglik over (rho, sigma2_sq). sigma2_sq is profiled
/// in closed form, tr(B(rho) S2) / T; rho is found by golden-section search
/// checked against a dense grid. Throws DegenerateMomentError if tr(S2) <= 0.
Ar1Params profile_ml_update(const Eigen::MatrixXd& second_moment);

}  // namespace panelglmm
