#include "panelglmm/panel.hpp"

#include "panelglmm/errors.hpp"

#include <cmath>
#include <string>

namespace panelglmm {

PanelLayout::PanelLayout(Eigen::Index n_individuals, Eigen::Index n_times)
    : n_individuals_(n_individuals), n_times_(n_times) {
    if (n_individuals < 1 || n_times < 1) {
        throw InvalidLayoutError("panel layout needs N >= 1 and T >= 1, got N=" +
                                 std::to_string(n_individuals) + ", T=" + std::to_string(n_times));
    }
}

DesignMatrices build_designs(const PanelLayout& layout) {
    if (layout.n_times() < 2) {
        throw InvalidLayoutError("AR(1) time effect needs T >= 2, got T=" +
                                 std::to_string(layout.n_times()));
    }
    const Eigen::Index n = layout.n_obs();
    const Eigen::Index N = layout.n_individuals();
    const Eigen::Index T = layout.n_times();

    DesignMatrices d;
    d.U1 = Eigen::MatrixXd::Zero(n, N);
    d.U2 = Eigen::MatrixXd::Zero(n, T);
    for (Eigen::Index i = 0; i < n; ++i) {
        d.U1(i, layout.individual_of(i)) = 1.0;
        d.U2(i, layout.time_of(i)) = 1.0;
    }
    d.U.resize(n, N + T);
    d.U << d.U1, d.U2;
    return d;
}

Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& X, const Eigen::MatrixXd& U,
                                 const Eigen::VectorXd& beta, const Eigen::VectorXd& xi) {
    if (X.cols() != beta.size() || U.cols() != xi.size() || X.rows() != U.rows()) {
        throw ShapeError("linear_predictor: X is " + std::to_string(X.rows()) + "x" +
                         std::to_string(X.cols()) + ", U is " + std::to_string(U.rows()) + "x" +
                         std::to_string(U.cols()) + ", beta has " + std::to_string(beta.size()) +
                         ", xi has " + std::to_string(xi.size()));
    }
    return X * beta + U * xi;
}

Eigen::VectorXd incidence_apply(const PanelLayout& layout, const Eigen::VectorXd& xi) {
    if (xi.size() != layout.n_random()) {
        throw ShapeError("incidence_apply: xi has wrong length");
    }
    const Eigen::Index N = layout.n_individuals();
    const Eigen::Index T = layout.n_times();
    Eigen::VectorXd out(layout.n_obs());
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index t = 0; t < T; ++t) {
            out(i * T + t) = xi(i) + xi(N + t);
        }
    }
    return out;
}

Eigen::VectorXd incidence_apply_transpose(const PanelLayout& layout, const Eigen::VectorXd& v) {
    if (v.size() != layout.n_obs()) {
        throw ShapeError("incidence_apply_transpose: vector has wrong length");
    }
    const Eigen::Index N = layout.n_individuals();
    const Eigen::Index T = layout.n_times();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(N + T);
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index t = 0; t < T; ++t) {
            const double value = v(i * T + t);
            out(i) += value;
            out(N + t) += value;
        }
    }
    return out;
}

Eigen::MatrixXd incidence_apply_transpose(const PanelLayout& layout, const Eigen::MatrixXd& m) {
    if (m.rows() != layout.n_obs()) {
        throw ShapeError("incidence_apply_transpose: matrix has wrong row count");
    }
    const Eigen::Index N = layout.n_individuals();
    const Eigen::Index T = layout.n_times();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(N + T, m.cols());
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index t = 0; t < T; ++t) {
            const auto row = m.row(i * T + t);
            out.row(i) += row;
            out.row(N + t) += row;
        }
    }
    return out;
}

Eigen::MatrixXd incidence_gram(const PanelLayout& layout, const Eigen::VectorXd& w) {
    if (w.size() != layout.n_obs()) {
        throw ShapeError("incidence_gram: weight vector has wrong length");
    }
    const Eigen::Index N = layout.n_individuals();
    const Eigen::Index T = layout.n_times();
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(N + T, N + T);
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index t = 0; t < T; ++t) {
            const double wi = w(i * T + t);
            g(i, i) += wi;
            g(N + t, N + t) += wi;
            g(i, N + t) = wi;
            g(N + t, i) = wi;
        }
    }
    return g;
}

Eigen::VectorXd ModelState::stacked() const {
    Eigen::VectorXd v(beta.size() + 3);
    v << beta, sigma1_sq, sigma2_sq, rho;
    return v;
}

void ModelState::validate() const {
    if (!(sigma1_sq > 0.0) || !(sigma2_sq > 0.0)) {
        throw ValidationError("variance components must be positive");
    }
    if (!(std::abs(rho) < 1.0)) {
        throw ValidationError("rho must lie in (-1, 1)");
    }
    if (xi_cov.size() == 0) return;
    if (xi_cov.rows() != xi_cov.cols() || xi_cov.rows() != xi_mean.size()) {
        throw ShapeError("xi_cov must be square and match xi_mean");
    }
    if ((xi_cov - xi_cov.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
        throw ValidationError("xi_cov is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(xi_cov, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10) {
        throw ValidationError("xi_cov is not positive semidefinite");
    }
}

void PanelDataset::validate() const {
    const Eigen::Index n = layout.n_obs();
    if (y.size() != n || X.rows() != n) {
        throw ShapeError("dataset: y and X must have N*T rows");
    }
    if (X.cols() < 1) {
        throw ValidationError("at least one covariate required");
    }
    if (!X.allFinite() || !y.allFinite()) {
        throw ValidationError("dataset contains non-finite values");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        const double v = y(i);
        switch (family.tag) {
            case FamilyTag::PoissonLog:
                if (v < 0.0 || v != std::floor(v)) {
                    throw ValidationError("poisson response must be a non-negative integer (row " +
                                          std::to_string(i) + ")");
                }
                break;
            case FamilyTag::BernoulliLogit:
                if (v != 0.0 && v != 1.0) {
                    throw ValidationError("bernoulli response must be 0 or 1 (row " +
                                          std::to_string(i) + ")");
                }
                break;
            case FamilyTag::GaussianIdentity:
                break;
        }
    }
}

PanelDataset subset_individuals(const PanelDataset& data,
                                const std::vector<Eigen::Index>& individuals) {
    const Eigen::Index T = data.layout.n_times();
    PanelDataset out;
    out.layout = PanelLayout(static_cast<Eigen::Index>(individuals.size()), T);
    out.family = data.family;
    out.y.resize(out.layout.n_obs());
    out.X.resize(out.layout.n_obs(), data.X.cols());
    for (std::size_t k = 0; k < individuals.size(); ++k) {
        const Eigen::Index src = individuals[k];
        if (src < 0 || src >= data.layout.n_individuals()) {
            throw ValidationError("subset_individuals: individual index out of range");
        }
        for (Eigen::Index t = 0; t < T; ++t) {
            const Eigen::Index to = static_cast<Eigen::Index>(k) * T + t;
            out.y(to) = data.y(data.layout.row(src, t));
            out.X.row(to) = data.X.row(data.layout.row(src, t));
        }
    }
    return out;
}

}  // namespace panelglmm
