#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <string_view>

namespace panelglmm {

enum class FamilyTag { PoissonLog, BernoulliLogit, GaussianIdentity };

/// Exponential family with its canonical link. `dispersion` is the known
/// residual variance and is only read for the Gaussian family.
struct Family {
    FamilyTag tag = FamilyTag::PoissonLog;
    double dispersion = 1.0;

    friend bool operator==(const Family&, const Family&) = default;
};

std::string to_string(FamilyTag tag);
/// Parses "poisson-log", "bernoulli-logit" or "gaussian-identity".
FamilyTag parse_family_tag(std::string_view name);

/// Linear predictor values beyond this magnitude are clamped before the
/// inverse link is applied (log and logit links only).
inline constexpr double kEtaClamp = 30.0;

double link(double mu, const Family& family);
double link_derivative(double mu, const Family& family);
double variance_function(double mu, const Family& family);

/// mu = g^{-1}(eta). `n_clamped` (if given) is incremented once per entry
/// whose eta was clamped to +/-kEtaClamp.
Eigen::VectorXd inverse_link(const Eigen::VectorXd& eta, const Family& family,
                             std::size_t* n_clamped = nullptr);

struct WorkingResponse {
    Eigen::VectorXd z;
    Eigen::VectorXd gamma_diag;
};

/// First-order linearisation of y around mu:
///   z_i = g(mu_i) + (y_i - mu_i) g'(mu_i),
///   gamma_i = g'(mu_i)^2 Var(Y_i | xi).
/// Throws DegenerateMeanError if some mu_i sits on the boundary of the mean
/// space (where g' is infinite).
WorkingResponse working_response(const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                                 const Family& family);

/// Starting mean for the first linearisation, kept off the boundary.
Eigen::VectorXd initial_mean(const Eigen::VectorXd& y, const Family& family);

/// Unit deviance summed over observations (Gaussian: scaled by dispersion).
double deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, const Family& family);

}  // namespace panelglmm
