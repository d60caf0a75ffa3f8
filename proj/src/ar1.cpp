#include "panelglmm/ar1.hpp"

#include "panelglmm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace panelglmm {

namespace {

void check_params(const Ar1Params& params) {
    if (!(std::abs(params.rho) < 1.0)) {
        throw StationarityError("AR(1) needs |rho| < 1, got rho=" + std::to_string(params.rho));
    }
    if (!(params.sigma2_sq > 0.0)) {
        throw ValidationError("AR(1) innovation variance must be positive");
    }
}

// Sufficient statistics of S2 for tr(B(rho) S2).
struct BandSums {
    double ends = 0.0;      // S(0,0) + S(T-1,T-1)
    double interior = 0.0;  // sum of the remaining diagonal entries
    double lag1 = 0.0;      // sum of S(t,t+1)
    Eigen::Index n_times = 0;

    explicit BandSums(const Eigen::MatrixXd& s) : n_times(s.rows()) {
        const Eigen::Index T = s.rows();
        ends = s(0, 0) + s(T - 1, T - 1);
        for (Eigen::Index t = 1; t + 1 < T; ++t) interior += s(t, t);
        for (Eigen::Index t = 0; t + 1 < T; ++t) lag1 += 0.5 * (s(t, t + 1) + s(t + 1, t));
    }

    double trace_b(double rho) const { return ends + (1.0 + rho * rho) * interior - 2.0 * rho * lag1; }

    // Objective with sigma2_sq profiled out (constant -T/2 dropped).
    double profiled(double rho) const {
        const double tb = trace_b(rho);
        if (!(tb > 0.0)) return -std::numeric_limits<double>::infinity();
        const double T = static_cast<double>(n_times);
        return -0.5 * (T * std::log(tb / T) - std::log1p(-rho * rho));
    }

    // Stationarity condition of `profiled`, cleared of denominators (a cubic).
    double stationarity(double rho) const {
        const double T = static_cast<double>(n_times);
        const double dtb = 2.0 * rho * interior - 2.0 * lag1;
        return T * dtb * (1.0 - rho * rho) + 2.0 * rho * trace_b(rho);
    }

    double stationarity_slope(double rho) const {
        const double T = static_cast<double>(n_times);
        const double dtb = 2.0 * rho * interior - 2.0 * lag1;
        return T * (2.0 * interior * (1.0 - rho * rho) - 2.0 * rho * dtb) + 2.0 * trace_b(rho) + 2.0 * rho * dtb;
    }
};

// Newton on the stationarity cubic, kept within `window` of the start.
double polish(const BandSums& f, double rho, double window, double bound) {
    double x = rho;
    for (int it = 0; it < 8; ++it) {
        const double slope = f.stationarity_slope(x);
        if (!(std::abs(slope) > 0.0)) break;
        const double next = x - f.stationarity(x) / slope;
        if (!std::isfinite(next) || std::abs(next - rho) > window || std::abs(next) > bound) return rho;
        if (next == x) break;
        x = next;
    }
    return std::abs(f.stationarity(x)) <= std::abs(f.stationarity(rho)) ? x : rho;
}

double golden_section_max(const BandSums& f, double lo, double hi, double tol) {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo;
    double b = hi;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = f.profiled(c);
    double fd = f.profiled(d);
    while (b - a > tol) {
        if (fc >= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f.profiled(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f.profiled(d);
        }
    }
    return 0.5 * (a + b);
}

}  // namespace

Eigen::MatrixXd ar1_covariance(const Ar1Params& params, Eigen::Index n_times) {
    check_params(params);
    if (n_times < 1) throw InvalidLayoutError("AR(1) covariance needs T >= 1");
    const double marginal = params.sigma2_sq / (1.0 - params.rho * params.rho);
    Eigen::MatrixXd cov(n_times, n_times);
    for (Eigen::Index s = 0; s < n_times; ++s) {
        cov(s, s) = marginal;
        double value = marginal;
        for (Eigen::Index t = s + 1; t < n_times; ++t) {
            value *= params.rho;
            cov(s, t) = value;
            cov(t, s) = value;
        }
    }
    return cov;
}

Eigen::MatrixXd ar1_precision(const Ar1Params& params, Eigen::Index n_times) {
    check_params(params);
    if (n_times < 2) throw InvalidLayoutError("AR(1) precision needs T >= 2");
    const double scale = 1.0 / params.sigma2_sq;
    const double rho = params.rho;
    Eigen::MatrixXd prec = Eigen::MatrixXd::Zero(n_times, n_times);
    for (Eigen::Index t = 0; t < n_times; ++t) {
        const bool end = (t == 0 || t == n_times - 1);
        prec(t, t) = scale * (end ? 1.0 : 1.0 + rho * rho);
        if (t + 1 < n_times) {
            prec(t, t + 1) = -scale * rho;
            prec(t + 1, t) = -scale * rho;
        }
    }
    return prec;
}

double ar1_logdet(const Ar1Params& params, Eigen::Index n_times) {
    check_params(params);
    return static_cast<double>(n_times) * std::log(params.sigma2_sq) -
           std::log1p(-params.rho * params.rho);
}

double ar1_expected_loglik(const Ar1Params& params, const Eigen::MatrixXd& second_moment) {
    const Eigen::Index T = second_moment.rows();
    const BandSums sums(second_moment);
    return -0.5 * ar1_logdet(params, T) - 0.5 * sums.trace_b(params.rho) / params.sigma2_sq;
}

Ar1Params profile_ml_update(const Eigen::MatrixXd& second_moment) {
    const Eigen::Index T = second_moment.rows();
    if (T < 2 || second_moment.cols() != T) {
        throw ShapeError("profile_ml_update needs a square second moment with T >= 2");
    }
    if (!(second_moment.trace() > 0.0)) {
        throw DegenerateMomentError("AR(1) second moment has non-positive trace");
    }
    const BandSums sums(second_moment);
    const double bound = 1.0 - kStationarityMargin;

    double rho = golden_section_max(sums, -bound, bound, 1e-8);

    // Unimodality sanity check: if a grid point beats the golden-section
    // answer, refine around the best grid point instead.
    constexpr double kGridStep = 0.002;
    double best_grid = 0.0;
    double best_value = -std::numeric_limits<double>::infinity();
    for (double r = -bound; r <= bound; r += kGridStep) {
        const double v = sums.profiled(r);
        if (v > best_value) {
            best_value = v;
            best_grid = r;
        }
    }
    if (best_value > sums.profiled(rho) + 1e-12 * std::abs(best_value)) {
        rho = golden_section_max(sums, std::max(-bound, best_grid - kGridStep),
                                 std::min(bound, best_grid + kGridStep), 1e-8);
    }

    rho = polish(sums, rho, 1e-6, bound);

    const double tb = sums.trace_b(rho);
    if (!(tb > 0.0)) {
        throw DegenerateMomentError("AR(1) profile variance is not positive");
    }
    return Ar1Params{rho, tb / static_cast<double>(T)};
}

}  // namespace panelglmm
