#include "oracles.hpp"
#include "test_util.hpp"

#include "panelglmm/ar1.hpp"
#include "panelglmm/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace panelglmm;

TEST(Ar1Covariance, Examples) {
    EXPECT_TRUE(ar1_covariance({0.0, 2.0}, 3).isApprox(2.0 * Eigen::MatrixXd::Identity(3, 3)));
    Eigen::Matrix2d expected;
    expected << 1.0, 0.5, 0.5, 1.0;
    EXPECT_TRUE(ar1_covariance({0.5, 0.75}, 2).isApprox(expected, 1e-15));
    EXPECT_THROW(ar1_covariance({1.0, 1.0}, 3), StationarityError);
    EXPECT_THROW(ar1_covariance({-1.2, 1.0}, 3), StationarityError);
}

TEST(Ar1Covariance, MatchesDirectFormula) {
    EXPECT_TRUE(ar1_covariance({0.7, 1.3}, 12).isApprox(oracle::ar1_cov(0.7, 1.3, 12), 1e-14));
}

TEST(Ar1Precision, Examples) {
    EXPECT_TRUE(ar1_precision({0.0, 4.0}, 5).isApprox(0.25 * Eigen::MatrixXd::Identity(5, 5)));
    Eigen::Matrix3d expected;
    expected << 1, -0.5, 0, -0.5, 1.25, -0.5, 0, -0.5, 1;
    EXPECT_TRUE(ar1_precision({0.5, 1.0}, 3).isApprox(expected, 1e-15));
    EXPECT_THROW(ar1_precision({0.5, 1.0}, 1), InvalidLayoutError);
}

TEST(Ar1Precision, InvertsCovariance) {
    const Ar1Params p{0.9, 1.0};
    const Eigen::MatrixXd prod = ar1_covariance(p, 20) * ar1_precision(p, 20);
    EXPECT_LT((prod - Eigen::MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff(), 1e-10);
    std::mt19937_64 rng(11);
    for (int k = 0; k < 30; ++k) {
        const Ar1Params q{testutil::uniform(rng, -0.95, 0.95), testutil::uniform(rng, 0.1, 3.0)};
        const Eigen::Index T = 2 + k % 7;
        const Eigen::MatrixXd dense_inv = oracle::inverse(oracle::ar1_cov(q.rho, q.sigma2_sq, T));
        EXPECT_TRUE(ar1_precision(q, T).isApprox(dense_inv, 1e-10));
    }
}

TEST(Ar1Logdet, Examples) {
    EXPECT_DOUBLE_EQ(ar1_logdet({0.0, 1.0}, 7), 0.0);
    EXPECT_NEAR(ar1_logdet({0.5, 1.0}, 1), -std::log(0.75), 1e-15);
    EXPECT_NEAR(ar1_logdet({0.8, 1.7}, 10), oracle::logdet(oracle::ar1_cov(0.8, 1.7, 10)), 1e-9);
}

TEST(ProfileMl, RecoversTruthFromModelCovariance) {
    const Eigen::MatrixXd S2 = ar1_covariance({0.6, 0.8}, 50);
    const Ar1Params est = profile_ml_update(S2);
    EXPECT_NEAR(est.rho, 0.6, 1e-3);
    EXPECT_NEAR(est.sigma2_sq, 0.8, 1e-3);
}

TEST(ProfileMl, IdentityMoment) {
    const Ar1Params est = profile_ml_update(Eigen::MatrixXd::Identity(200, 200));
    const double rho_grid = oracle::grid_argmax(
        [](double r) {
            const double s = (200.0 + 198.0 * r * r) / 200.0;  // tr(B(r) I) / T
            return oracle::ar1_objective(r, s, Eigen::MatrixXd::Identity(200, 200));
        },
        -0.2, 0.2, 401);
    EXPECT_NEAR(est.rho, 0.0, 1e-3);
    EXPECT_NEAR(est.rho, rho_grid, 1e-3);
    EXPECT_NEAR(est.sigma2_sq, 1.0, 1e-3);
}

TEST(ProfileMl, MatchesExhaustiveGridT3) {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 5; ++rep) {
        const Eigen::MatrixXd A = testutil::random_matrix(3, 5, rng);
        const Eigen::MatrixXd S2 = A * A.transpose() / 5.0;
        const Ar1Params est = profile_ml_update(S2);
        const double at_est = oracle::ar1_objective(est.rho, est.sigma2_sq, S2);
        double best = -1e300;
        for (int i = -999; i <= 999; ++i) {
            const double r = i * 1e-3;
            for (int k = 0; k <= 400; ++k) {
                const double s = std::exp(std::log(1e-2) + k * (std::log(1e2) - std::log(1e-2)) / 400);
                best = std::max(best, oracle::ar1_objective(r, s, S2));
            }
        }
        EXPECT_GE(at_est, best - 1e-9);
    }
}

TEST(ProfileMl, ClosedFormSigmaZeroesDerivative) {
    std::mt19937_64 rng(8);
    const Eigen::MatrixXd A = testutil::random_matrix(6, 9, rng);
    const Eigen::MatrixXd S2 = A * A.transpose() / 9.0;
    const Ar1Params est = profile_ml_update(S2);
    const double h = 1e-6;
    const double d = (oracle::ar1_objective(est.rho, est.sigma2_sq + h, S2) -
                      oracle::ar1_objective(est.rho, est.sigma2_sq - h, S2)) /
                     (2 * h);
    EXPECT_NEAR(d, 0.0, 1e-4);
}

TEST(ProfileMl, StationarityMarginAndDegenerate) {
    // Perfectly persistent moment pushes rho to the margin.
    const Eigen::MatrixXd S2 = Eigen::MatrixXd::Ones(10, 10);
    const Ar1Params est = profile_ml_update(S2 + 1e-14 * Eigen::MatrixXd::Identity(10, 10));
    EXPECT_LE(std::abs(est.rho), 1.0 - kStationarityMargin);
    EXPECT_THROW(profile_ml_update(Eigen::MatrixXd::Zero(4, 4)), DegenerateMomentError);
}

TEST(Ar1ExpectedLoglik, MatchesDense) {
    std::mt19937_64 rng(2);
    const Eigen::MatrixXd A = testutil::random_matrix(5, 8, rng);
    const Eigen::MatrixXd S2 = A * A.transpose() / 8.0;
    EXPECT_NEAR(ar1_expected_loglik({0.3, 0.9}, S2), oracle::ar1_objective(0.3, 0.9, S2), 1e-10);
}
