// Acceptance checks. Prints one PASS/FAIL line per criterion; pass criterion
// numbers as arguments to run a subset.
#include "oracles.hpp"
#include "test_util.hpp"

#include "panelglmm/ar1.hpp"
#include "panelglmm/component_em.hpp"
#include "panelglmm/ridge_em.hpp"
#include "panelglmm/simulation.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

using namespace panelglmm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

Eigen::MatrixXd dense_D(const ModelState& theta, const PanelLayout& layout) {
    return oracle::random_cov(theta.sigma1_sq, theta.sigma2_sq, theta.rho, layout.n_individuals(),
                              layout.n_times());
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

Outcome e_step_oracle() {
    std::mt19937_64 rng(2024);
    double worst_dense = 0.0;
    double worst_mc_ratio = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        const Eigen::Index N = 1 + rep % 3;
        const Eigen::Index T = 2 + rep % 4;
        const Eigen::Index p = 1 + rep % 3;
        const auto lin = testutil::random_linearised(N, T, p, rng);
        const auto theta = testutil::random_state(N, T, p, rng);
        const XiPosterior post = e_step(lin, theta);
        const Eigen::MatrixXd U = oracle::incidence(N, T);
        const Eigen::MatrixXd D = dense_D(theta, lin.layout);
        const Eigen::VectorXd offset = lin.X * theta.beta;
        const auto ref = oracle::condition(lin.z, offset, U, D, lin.gamma_diag);
        worst_dense = std::max({worst_dense, (post.mean - ref.mean).cwiseAbs().maxCoeff(),
                                (post.cov - ref.cov).cwiseAbs().maxCoeff()});
        const auto mc = oracle::monte_carlo_condition(lin.z, offset, U, D, lin.gamma_diag, 500000,
                                                      1000 + static_cast<std::uint64_t>(rep));
        worst_mc_ratio = std::max({worst_mc_ratio, (mc.estimate.mean - post.mean).norm() / mc.mean_se.norm(),
                                   (mc.estimate.cov - post.cov).norm() / mc.cov_se.norm()});
    }
    return {worst_dense < 1e-8 && worst_mc_ratio <= 3.0,
            "max dense deviation " + fmt(worst_dense) + ", max MC deviation " + fmt(worst_mc_ratio) + " SE"};
}

Outcome m_step_checks() {
    std::mt19937_64 rng(77);
    double worst_grad = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
        const Eigen::Index N = 2 + rep % 3;
        const Eigen::Index T = 3 + rep % 4;
        const Eigen::Index p = 1 + rep % 4;
        const auto lin = testutil::random_linearised(N, T, p, rng);
        const auto theta = testutil::random_state(N, T, p, rng);
        const XiPosterior post = e_step(lin, theta);
        const double lambda = testutil::uniform(rng, 0.01, 10.0);
        ModelState cand = theta;
        cand.beta = m_step_beta(lin, post.mean, lambda);
        auto q = [&](const Eigen::VectorXd& b) {
            ModelState c = cand;
            c.beta = b;
            return q_pen(lin, c, post, lambda);
        };
        worst_grad = std::max(worst_grad, oracle::numerical_gradient(q, cand.beta).norm());
    }

    int beaten = 0;
    double worst_gap = -std::numeric_limits<double>::infinity();
    for (int rep = 0; rep < 10; ++rep) {
        const Eigen::Index T = 3 + rep;
        const Eigen::MatrixXd A = testutil::random_matrix(T, T + 3, rng);
        const Eigen::MatrixXd S2 = A * A.transpose() / static_cast<double>(T + 3);
        const Ar1Params est = profile_ml_update(S2);
        const double at_est = oracle::ar1_objective(est.rho, est.sigma2_sq, S2);
        double best = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < 100; ++i) {
            const double r = -0.99 + 1.98 * i / 99.0;
            for (int k = 0; k < 100; ++k) {
                const double s = std::exp(std::log(1e-2) + k * (std::log(1e2) - std::log(1e-2)) / 99.0);
                best = std::max(best, oracle::ar1_objective(r, s, S2));
            }
        }
        worst_gap = std::max(worst_gap, best - at_est);
        if (at_est >= best) ++beaten;
    }
    return {worst_grad < 1e-6 && beaten == 10,
            "max |dQ/dbeta| " + fmt(worst_grad) + ", AR(1) update beats grid on " + std::to_string(beaten) +
                "/10 (worst grid excess " + fmt(worst_gap) + ")"};
}

Outcome gcv_exact() {
    std::mt19937_64 rng(31);
    const std::vector<double> grid = log_spaced_grid(1e-3, 1e3, 40);
    int matched = 0;
    const int reps = 20;
    for (int rep = 0; rep < reps; ++rep) {
        const Eigen::Index N = 2 + rep % 2;
        const Eigen::Index T = rep % 2 == 0 ? 7 : 5;  // n = 14 or 15
        const Eigen::Index p = 1 + rep % 4;
        const auto lin = testutil::random_linearised(N, T, p, rng);
        const auto theta = testutil::random_state(N, T, p, rng);
        const GcvSelection sel = gcv_select_lambda(lin, theta, grid);
        std::vector<double> dense;
        for (double l : grid) {
            const Eigen::MatrixXd S = oracle::hat_matrix(lin.X, oracle::incidence(N, T), lin.gamma_diag,
                                                         dense_D(theta, lin.layout), l);
            dense.push_back(oracle::gcv(S, lin.z, lin.gamma_diag));
        }
        if (sel.grid_index == oracle::argmin_prefer_last(dense) && sel.lambda == grid[sel.grid_index]) ++matched;
    }
    const auto lin = testutil::random_linearised(2, 3, 2, rng);
    const auto theta = testutil::random_state(2, 3, 2, rng);
    const bool tie_ok = gcv_select_lambda(lin, theta, {0.5, 0.5, 0.5}).grid_index == 2;
    return {matched == reps && tie_ok,
            std::to_string(matched) + "/" + std::to_string(reps) + " argmins match, tie-break " +
                (tie_ok ? "ok" : "wrong")};
}

Outcome gaussian_reduction() {
    double worst = 0.0;
    int converged = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SimScenario sc;
        sc.layout = PanelLayout(6, 8);
        sc.family = Family{FamilyTag::GaussianIdentity, 0.5};
        sc.seed = seed;
        const PanelDataset data = generate_panel(sc).data;
        RidgeConfig cfg;
        cfg.tol = 1e-12;
        cfg.refine_lambda = false;
        cfg.max_outer_iters = 20000;
        const FitReport report = fit(data, cfg);
        if (report.termination == Termination::Converged) ++converged;
        const ModelState& th = report.theta_hat;
        const auto ref = oracle::henderson(data.X, oracle::incidence(6, 8), Eigen::VectorXd::Constant(48, 0.5),
                                           dense_D(th, data.layout), report.lambda_path.back(), data.y);
        worst = std::max({worst, (th.beta - ref.beta).cwiseAbs().maxCoeff(),
                          (th.xi_mean - ref.xi).cwiseAbs().maxCoeff()});
    }
    return {worst < 1e-8 && converged == 5,
            std::to_string(converged) + "/5 converged, max deviation from Henderson " + fmt(worst)};
}

Outcome convergence() {
    SimScenario sc;
    sc.n_replicates = 40;
    RidgeConfig cfg;
    cfg.tol = 1e-6;
    cfg.max_outer_iters = 500;
    const ConvergenceStudy study = convergence_study(sc, cfg);
    const double median = study.median_iterations();
    const int conv = study.n_converged();
    return {conv == 40 && median >= 30 && median <= 300,
            std::to_string(conv) + "/40 converged, median iterations " + fmt(median)};
}

Outcome mse_trends() {
    SimScenario sc;
    sc.n_replicates = 50;
    const std::vector<Eigen::Index> ts{10, 40, 100};
    const MseStudy study = mse_study(sc, ts, ridge_estimator(RidgeConfig{}));
    bool ok = true;
    std::string detail;
    for (const std::string param : {"beta", "sigma2_sq", "rho"}) {
        const double a = study.mse(10, param);
        const double b = study.mse(40, param);
        const double c = study.mse(100, param);
        ok = ok && a > b && b > c;
        detail += param + " " + fmt(a) + ">" + fmt(b) + ">" + fmt(c) + "; ";
    }
    std::vector<double> s1;
    for (Eigen::Index t : ts) s1.push_back(study.mse(t, "sigma1_sq"));
    const double ratio = *std::max_element(s1.begin(), s1.end()) / *std::min_element(s1.begin(), s1.end());
    ok = ok && ratio < 2.5;
    detail += "sigma1_sq max/min " + fmt(ratio);
    return {ok, detail};
}

Outcome rho_recovery() {
    SimScenario sc;
    sc.layout = PanelLayout(10, 100);
    sc.n_replicates = 50;
    const RhoStudy study = rho_recovery_study({0.2, 0.5, 0.8}, sc, ridge_estimator(RidgeConfig{}));
    bool ok = true;
    std::string detail = "medians";
    for (std::size_t k = 0; k < study.summary.size(); ++k) {
        const RhoSummary& s = study.summary[k];
        ok = ok && std::abs(s.median - s.rho_true) <= 0.1;
        if (k > 0) ok = ok && s.median > study.summary[k - 1].median;
        detail += " " + fmt(s.rho_true) + "->" + fmt(s.median);
    }
    return {ok && study.summary.size() == 3, detail};
}

Outcome ar1_algebra() {
    std::mt19937_64 rng(8);
    double worst_prod = 0.0;
    double worst_logdet = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const Ar1Params p{testutil::uniform(rng, -0.99, 0.99), testutil::uniform(rng, 0.05, 5.0)};
        const Eigen::Index T = std::uniform_int_distribution<Eigen::Index>(2, 50)(rng);
        const Eigen::MatrixXd prod = ar1_covariance(p, T) * ar1_precision(p, T);
        worst_prod = std::max(worst_prod, (prod - Eigen::MatrixXd::Identity(T, T)).cwiseAbs().maxCoeff());
        worst_logdet = std::max(worst_logdet,
                                std::abs(ar1_logdet(p, T) - oracle::logdet(oracle::ar1_cov(p.rho, p.sigma2_sq, T))));
    }
    return {worst_prod < 1e-10 && worst_logdet < 1e-9,
            "max |cov*prec - I| " + fmt(worst_prod) + ", max logdet error " + fmt(worst_logdet)};
}

Outcome component_properties() {
    std::mt19937_64 rng(9);
    bool monotone = true;
    {
        const PrincipalBasis pb = principal_basis(testutil::random_matrix(40, 8, rng));
        for (int rep = 0; rep < 50; ++rep) {
            const Eigen::VectorXd w = testutil::random_matrix(pb.rank(), 1, rng).normalized();
            double prev = structural_relevance(w, pb, 1.0);
            for (double l : {1.5, 2.0, 4.0, 8.0, 16.0}) {
                const double cur = structural_relevance(w, pb, l);
                monotone = monotone && cur <= prev + 1e-12;
                prev = cur;
            }
        }
    }

    double min_cos = 1.0;
    double worst_orth = 0.0;
    for (int rep = 0; rep < 5; ++rep) {
        Eigen::MatrixXd X = testutil::random_matrix(30, 6, rng);
        X.col(2) += 0.7 * X.col(0);
        const PrincipalBasis pb = principal_basis(X);
        auto lin = testutil::random_linearised(5, 6, 6, rng);
        lin.X = X;
        ModelState theta;
        theta.beta = Eigen::VectorXd::Zero(6);
        theta.xi_mean = Eigen::VectorXd::Zero(11);
        theta.xi_cov = Eigen::MatrixXd::Zero(11, 11);
        const Eigen::MatrixXd none(pb.rank(), 0);
        const ComponentSolution eig = optimize_component(lin, pb, theta, 1.0, 1.0, none);
        const Eigen::VectorXd ref = oracle::dominant_relevance_direction(pb.X_std, pb.C);
        min_cos = std::min(min_cos, std::abs(eig.w.dot(ref)) / (eig.w.norm() * ref.norm()));

        const ComponentSolution first = optimize_component(lin, pb, theta, 0.5, 2.0, none);
        const ComponentSolution second = optimize_component(lin, pb, theta, 0.5, 2.0, first.w);
        worst_orth = std::max(worst_orth, std::abs((pb.C * first.w).dot(pb.C * second.w)));
    }

    double min_loading = 1.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SimScenario sc;
        sc.layout = PanelLayout(20, 10);
        sc.beta_true = Eigen::Vector2d(0.6, 0.0);
        sc.x_correlation = 0.0;
        sc.seed = seed;
        ComponentConfig cfg;
        cfg.s_grid = {0.1, 0.5};
        cfg.l_grid = {1.0, 2.0};
        const ComponentFit fit = fit_components(generate_panel(sc).data, cfg);
        min_loading = std::min(min_loading, std::abs(fit.components.loadings(0, 0)));
    }
    return {monotone && min_cos > 0.999 && worst_orth < 1e-8 && min_loading > 0.9,
            std::string("phi monotone in l: ") + (monotone ? "yes" : "no") + ", min eigen cosine " + fmt(min_cos) +
                ", max |f2'f1| " + fmt(worst_orth) + ", min informative loading " + fmt(min_loading)};
}

int run_binary(const std::string& args) {
    const std::string cmd = std::string(PANELGLMM_BIN) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::ifstream in(entry.path(), std::ios::binary);
        std::ostringstream os;
        os << in.rdbuf();
        files[fs::relative(entry.path(), dir).string()] = os.str();
    }
    return files;
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "panelglmm_acceptance_determinism";
    fs::remove_all(root);
    const std::string data = (root / "data").string();
    if (run_binary("simulate --seed 5 --output " + data) != 0) return {false, "simulate failed"};
    const std::string panel = data + "/panel.csv";
    const std::vector<std::pair<std::string, std::string>> commands{
        {"simulate", "simulate --seed 11"},
        {"fit", "fit --input " + panel},
        {"fit-components", "fit-components --K 2 --input " + panel},
        {"study-convergence", "study-convergence --replicates 4"},
        {"study-mse", "study-mse --replicates 3"},
        {"study-rho", "study-rho --replicates 3"},
    };
    std::vector<std::string> failed;
    std::size_t n_files = 0;
    for (const auto& [name, args] : commands) {
        const fs::path a = root / "a" / name;
        const fs::path b = root / "b" / name;
        const int rc_a = run_binary(args + " --output " + a.string());
        const int rc_b = run_binary(args + " --output " + b.string());
        const auto files_a = snapshot(a);
        if (rc_a != 0 || rc_b != 0 || files_a.empty() || files_a != snapshot(b)) {
            failed.push_back(name);
        }
        n_files += files_a.size();
    }
    std::string detail = std::to_string(commands.size()) + " commands, " + std::to_string(n_files) + " files";
    for (const auto& f : failed) detail += "; differs or failed: " + f;
    return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, e_step_oracle},   {2, m_step_checks}, {3, gcv_exact},   {4, gaussian_reduction},
        {5, convergence},     {6, mse_trends},    {7, rho_recovery}, {8, ar1_algebra},
        {9, component_properties}, {10, determinism},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    bool all_pass = true;
    for (const auto& [id, check] : criteria) {
        if (!selected.empty() && !selected.count(id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = check();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cout << "criterion " << id << ": " << (out.pass ? "PASS" : "FAIL") << " - " << out.detail << " ("
                  << fmt(secs) << " s)" << std::endl;
        all_pass = all_pass && out.pass;
    }
    return all_pass ? 0 : 1;
}
