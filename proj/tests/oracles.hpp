#pragma once

// Independent dense reference computations for tests. Nothing here calls the
// library's numerical code; only plain loops and generic Eigen decompositions.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd incidence(Index N, Index T) {
    MatrixXd U = MatrixXd::Zero(N * T, N + T);
    for (Index i = 0; i < N; ++i) {
        for (Index t = 0; t < T; ++t) {
            U(i * T + t, i) = 1.0;
            U(i * T + t, N + t) = 1.0;
        }
    }
    return U;
}

inline MatrixXd ar1_cov(double rho, double sigma2_sq, Index T) {
    MatrixXd S(T, T);
    for (Index s = 0; s < T; ++s) {
        for (Index t = 0; t < T; ++t) {
            S(s, t) = sigma2_sq / (1.0 - rho * rho) * std::pow(rho, static_cast<double>(std::abs(s - t)));
        }
    }
    return S;
}

inline MatrixXd random_cov(double sigma1_sq, double sigma2_sq, double rho, Index N, Index T) {
    MatrixXd D = MatrixXd::Zero(N + T, N + T);
    D.topLeftCorner(N, N) = sigma1_sq * MatrixXd::Identity(N, N);
    D.bottomRightCorner(T, T) = ar1_cov(rho, sigma2_sq, T);
    return D;
}

inline double logdet(const MatrixXd& A) {
    Eigen::LLT<MatrixXd> llt(A);
    double s = 0.0;
    for (Index i = 0; i < A.rows(); ++i) s += 2.0 * std::log(llt.matrixL()(i, i));
    return s;
}

inline MatrixXd inverse(const MatrixXd& A) { return A.fullPivLu().inverse(); }

struct Moments {
    VectorXd mean;
    MatrixXd cov;
};

// Conditions the joint Gaussian of (xi, z), z = offset + U xi + e, on z.
inline Moments condition(const VectorXd& z, const VectorXd& offset, const MatrixXd& U,
                         const MatrixXd& D, const VectorXd& gamma) {
    const Index n = z.size();
    const Index q = D.rows();
    MatrixXd joint(q + n, q + n);
    joint.topLeftCorner(q, q) = D;
    joint.topRightCorner(q, n) = D * U.transpose();
    joint.bottomLeftCorner(n, q) = U * D;
    joint.bottomRightCorner(n, n) = U * D * U.transpose();
    joint.bottomRightCorner(n, n).diagonal() += gamma;
    const MatrixXd Vinv = inverse(joint.bottomRightCorner(n, n));
    Moments m;
    m.mean = joint.topRightCorner(q, n) * Vinv * (z - offset);
    m.cov = D - joint.topRightCorner(q, n) * Vinv * joint.bottomLeftCorner(n, q);
    return m;
}

struct MonteCarloMoments {
    Moments estimate;
    VectorXd mean_se;  // per coordinate
    MatrixXd cov_se;   // per entry
};

// Draws (xi, z) jointly, estimates the joint covariance from the draws and
// conditions on z with it. Standard errors come from batch means.
inline MonteCarloMoments monte_carlo_condition(const VectorXd& z, const VectorXd& offset,
                                               const MatrixXd& U, const MatrixXd& D,
                                               const VectorXd& gamma, int n_draws,
                                               std::uint64_t seed, int n_batches = 50) {
    const Index n = z.size();
    const Index q = D.rows();
    const Index d = q + n;
    const MatrixXd Ld = Eigen::LLT<MatrixXd>(D).matrixL();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;

    const int per_batch = n_draws / n_batches;
    auto estimate = [&](const MatrixXd& second) {
        const MatrixXd szz = second.bottomRightCorner(n, n);
        const MatrixXd sxz = second.topRightCorner(q, n);
        const MatrixXd gain = sxz * inverse(szz);
        Moments m;
        m.mean = gain * (z - offset);
        m.cov = second.topLeftCorner(q, q) - gain * sxz.transpose();
        return m;
    };

    MatrixXd total = MatrixXd::Zero(d, d);
    std::vector<Moments> batches;
    MatrixXd draws(d, per_batch);
    for (int b = 0; b < n_batches; ++b) {
        for (int k = 0; k < per_batch; ++k) {
            VectorXd u(q);
            for (Index j = 0; j < q; ++j) u(j) = normal(rng);
            const VectorXd xi = Ld * u;
            VectorXd e(n);
            for (Index i = 0; i < n; ++i) e(i) = std::sqrt(gamma(i)) * normal(rng);
            draws.col(k).head(q) = xi;
            draws.col(k).tail(n) = U * xi + e;
        }
        const MatrixXd second = draws * draws.transpose() / per_batch;
        total += second;
        batches.push_back(estimate(second));
    }
    MonteCarloMoments out;
    out.estimate = estimate(total / n_batches);
    VectorXd mean_var = VectorXd::Zero(q);
    MatrixXd cov_var = MatrixXd::Zero(q, q);
    for (const auto& bm : batches) {
        mean_var += (bm.mean - out.estimate.mean).array().square().matrix();
        cov_var += (bm.cov - out.estimate.cov).array().square().matrix();
    }
    const double scale = 1.0 / (static_cast<double>(n_batches) * (n_batches - 1));
    out.mean_se = (mean_var * scale).cwiseSqrt();
    out.cov_se = (cov_var * scale).cwiseSqrt();
    return out;
}

struct HendersonSolution {
    VectorXd beta;
    VectorXd xi;
};

// Ridge-augmented Henderson equations solved with a full-pivot LU.
inline HendersonSolution henderson(const MatrixXd& X, const MatrixXd& U, const VectorXd& gamma,
                                   const MatrixXd& D, double lambda, const VectorXd& z) {
    const Index p = X.cols();
    const Index q = U.cols();
    MatrixXd M(X.rows(), p + q);
    M << X, U;
    const MatrixXd Winv = gamma.cwiseInverse().asDiagonal();
    MatrixXd A = M.transpose() * Winv * M;
    A.topLeftCorner(p, p).diagonal().array() += lambda;
    A.bottomRightCorner(q, q) += inverse(D);
    const VectorXd sol = A.fullPivLu().solve(M.transpose() * Winv * z);
    return {sol.head(p), sol.tail(q)};
}

inline MatrixXd hat_matrix(const MatrixXd& X, const MatrixXd& U, const VectorXd& gamma,
                           const MatrixXd& D, double lambda) {
    const Index p = X.cols();
    const Index q = U.cols();
    MatrixXd M(X.rows(), p + q);
    M << X, U;
    const MatrixXd Winv = gamma.cwiseInverse().asDiagonal();
    MatrixXd A = M.transpose() * Winv * M;
    A.topLeftCorner(p, p).diagonal().array() += lambda;
    A.bottomRightCorner(q, q) += inverse(D);
    return M * inverse(A) * M.transpose() * Winv;
}

inline double gcv(const MatrixXd& S, const VectorXd& z, const VectorXd& gamma) {
    const double n = static_cast<double>(z.size());
    const double tr = S.trace();
    if (tr >= n) return std::numeric_limits<double>::infinity();
    const VectorXd r = z - S * z;
    double rss = 0.0;
    for (Index i = 0; i < r.size(); ++i) rss += r(i) * r(i) / gamma(i);
    const double denom = 1.0 - tr / n;
    return rss / n / (denom * denom);
}

// Index of the smallest value; ties go to the later (larger lambda) entry.
inline std::size_t argmin_prefer_last(const std::vector<double>& values) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < values.size(); ++k) {
        if (values[k] <= values[best]) best = k;
    }
    return best;
}

inline VectorXd numerical_gradient(const std::function<double(const VectorXd&)>& f,
                                   const VectorXd& x, double h = 1e-6) {
    VectorXd g(x.size());
    for (Index j = 0; j < x.size(); ++j) {
        VectorXd xp = x;
        VectorXd xm = x;
        xp(j) += h;
        xm(j) -= h;
        g(j) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return g;
}

// Plain gradient descent with Armijo backtracking.
inline VectorXd gradient_descent(const std::function<double(const VectorXd&)>& f,
                                 const std::function<VectorXd(const VectorXd&)>& grad,
                                 VectorXd x, double grad_tol = 1e-10, int max_iters = 200000) {
    double step = 1.0;
    for (int it = 0; it < max_iters; ++it) {
        const VectorXd g = grad(x);
        if (g.norm() < grad_tol) break;
        const double fx = f(x);
        while (true) {
            const VectorXd trial = x - step * g;
            if (f(trial) <= fx - 0.5 * step * g.squaredNorm() || step < 1e-300) {
                x = trial;
                break;
            }
            step *= 0.5;
        }
        step *= 2.0;
    }
    return x;
}

// Exhaustive 1-D search on [lo, hi] with `count` points.
inline double grid_argmax(const std::function<double(double)>& f, double lo, double hi,
                          int count) {
    double best_x = lo;
    double best = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < count; ++k) {
        const double x = lo + (hi - lo) * k / (count - 1);
        const double v = f(x);
        if (v > best) {
            best = v;
            best_x = x;
        }
    }
    return best_x;
}

// Expected AR(1) log-density from dense inverse and log-det.
inline double ar1_objective(double rho, double sigma2_sq, const MatrixXd& S2) {
    const MatrixXd Sigma = ar1_cov(rho, sigma2_sq, S2.rows());
    return -0.5 * logdet(Sigma) - 0.5 * (inverse(Sigma) * S2).trace();
}

inline double pearson_sq(const VectorXd& a, const VectorXd& b) {
    const VectorXd ac = a.array() - a.mean();
    const VectorXd bc = b.array() - b.mean();
    const double c = ac.dot(bc);
    return c * c / (ac.squaredNorm() * bc.squaredNorm());
}

// phi(f) = (sum_j cor^2(x_j, f)^l)^(1/l) by direct correlation summation.
inline double structural_relevance(const MatrixXd& X, const VectorXd& f, double l) {
    double s = 0.0;
    for (Index j = 0; j < X.cols(); ++j) s += std::pow(pearson_sq(X.col(j), f), l);
    return std::pow(s, 1.0 / l);
}

// Maximiser of sum_j cor^2(x_j, C w) over w (l = 1): the dominant generalised
// eigenvector of (sum_j C^T x_j x_j^T C / |x_j|^2, C^T C). Xs must be centred.
inline VectorXd dominant_relevance_direction(const MatrixXd& Xs, const MatrixXd& C) {
    MatrixXd A = MatrixXd::Zero(C.cols(), C.cols());
    for (Index j = 0; j < Xs.cols(); ++j) {
        const VectorXd v = C.transpose() * Xs.col(j);
        A += v * v.transpose() / Xs.col(j).squaredNorm();
    }
    Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> es(A, C.transpose() * C);
    VectorXd w = es.eigenvectors().col(C.cols() - 1);
    return w.normalized();
}

}  // namespace oracle
