#include "panelglmm/family.hpp"

#include "panelglmm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace panelglmm {

std::string to_string(FamilyTag tag) {
    switch (tag) {
        case FamilyTag::PoissonLog: return "poisson-log";
        case FamilyTag::BernoulliLogit: return "bernoulli-logit";
        case FamilyTag::GaussianIdentity: return "gaussian-identity";
    }
    return "unknown";
}

FamilyTag parse_family_tag(std::string_view name) {
    if (name == "poisson-log") return FamilyTag::PoissonLog;
    if (name == "bernoulli-logit") return FamilyTag::BernoulliLogit;
    if (name == "gaussian-identity") return FamilyTag::GaussianIdentity;
    throw ValidationError("unknown family '" + std::string(name) +
                          "' (expected poisson-log, bernoulli-logit or gaussian-identity)");
}

double link(double mu, const Family& family) {
    switch (family.tag) {
        case FamilyTag::PoissonLog: return std::log(mu);
        case FamilyTag::BernoulliLogit: return std::log(mu / (1.0 - mu));
        case FamilyTag::GaussianIdentity: return mu;
    }
    return mu;
}

double link_derivative(double mu, const Family& family) {
    switch (family.tag) {
        case FamilyTag::PoissonLog: return 1.0 / mu;
        case FamilyTag::BernoulliLogit: return 1.0 / (mu * (1.0 - mu));
        case FamilyTag::GaussianIdentity: return 1.0;
    }
    return 1.0;
}

double variance_function(double mu, const Family& family) {
    switch (family.tag) {
        case FamilyTag::PoissonLog: return mu;
        case FamilyTag::BernoulliLogit: return mu * (1.0 - mu);
        case FamilyTag::GaussianIdentity: return family.dispersion;
    }
    return 1.0;
}

Eigen::VectorXd inverse_link(const Eigen::VectorXd& eta, const Family& family,
                             std::size_t* n_clamped) {
    Eigen::VectorXd mu(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        double e = eta(i);
        if (family.tag != FamilyTag::GaussianIdentity && std::abs(e) > kEtaClamp) {
            e = std::clamp(e, -kEtaClamp, kEtaClamp);
            if (n_clamped) ++*n_clamped;
        }
        switch (family.tag) {
            case FamilyTag::PoissonLog: mu(i) = std::exp(e); break;
            case FamilyTag::BernoulliLogit: mu(i) = 1.0 / (1.0 + std::exp(-e)); break;
            case FamilyTag::GaussianIdentity: mu(i) = e; break;
        }
    }
    return mu;
}

WorkingResponse working_response(const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                                 const Family& family) {
    if (y.size() != mu.size()) {
        throw ShapeError("working_response: y and mu differ in length");
    }
    WorkingResponse out{Eigen::VectorXd(y.size()), Eigen::VectorXd(y.size())};
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double m = mu(i);
        const bool inside = [&] {
            switch (family.tag) {
                case FamilyTag::PoissonLog: return m > 0.0 && std::isfinite(m);
                case FamilyTag::BernoulliLogit: return m > 0.0 && m < 1.0;
                case FamilyTag::GaussianIdentity: return std::isfinite(m);
            }
            return false;
        }();
        if (!inside) {
            throw DegenerateMeanError("mean " + std::to_string(m) + " at row " + std::to_string(i) +
                                      " is outside the valid range for " + to_string(family.tag));
        }
        const double deriv = link_derivative(m, family);
        out.z(i) = family.tag == FamilyTag::GaussianIdentity ? y(i) : link(m, family) + (y(i) - m) * deriv;
        out.gamma_diag(i) = deriv * deriv * variance_function(m, family);
    }
    return out;
}

Eigen::VectorXd initial_mean(const Eigen::VectorXd& y, const Family& family) {
    switch (family.tag) {
        case FamilyTag::PoissonLog: return (y.array() + 0.5).matrix();
        case FamilyTag::BernoulliLogit: return ((y.array() + 0.5) / 2.0).matrix();
        case FamilyTag::GaussianIdentity: return y;
    }
    return y;
}

double deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, const Family& family) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double yi = y(i);
        const double mi = mu(i);
        switch (family.tag) {
            case FamilyTag::PoissonLog:
                total += 2.0 * ((yi > 0.0 ? yi * std::log(yi / mi) : 0.0) - (yi - mi));
                break;
            case FamilyTag::BernoulliLogit:
                total += -2.0 * (yi > 0.5 ? std::log(mi) : std::log1p(-mi));
                break;
            case FamilyTag::GaussianIdentity:
                total += (yi - mi) * (yi - mi) / family.dispersion;
                break;
        }
    }
    return total;
}

}  // namespace panelglmm
