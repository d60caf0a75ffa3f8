#include "panelglmm/cli.hpp"

#include "panelglmm/errors.hpp"
#include "panelglmm/io.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

namespace panelglmm::cli {

namespace {

const std::map<std::string, Command>& command_names() {
    static const std::map<std::string, Command> names{
        {"fit", Command::Fit},
        {"fit-components", Command::FitComponents},
        {"simulate", Command::Simulate},
        {"study-convergence", Command::StudyConvergence},
        {"study-mse", Command::StudyMse},
        {"study-rho", Command::StudyRho},
    };
    return names;
}

std::string default_output_dir() {
    const char* env = std::getenv(kOutputDirEnv);
    return env && *env ? std::string(env) : std::string(".");
}

template <class T>
std::string join(const std::vector<T>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ",";
        if constexpr (std::is_floating_point_v<T>) {
            out += format_double(values[i]);
        } else {
            out += std::to_string(values[i]);
        }
    }
    return out;
}

std::string toml_string(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}

std::string toml_list(const std::string& joined) { return "[" + joined + "]"; }

void require(bool ok, const std::string& flag, const std::string& message) {
    if (!ok) throw ConfigError(flag + ": " + message);
}

void write_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
    body(out);
    out.flush();
    if (!out) throw ValidationError("failed writing " + path.string());
}

void write_trajectory(std::ostream& out, const std::vector<IterationRecord>& trajectory,
                      Eigen::Index p, bool with_lambda) {
    out << "iteration,criterion";
    for (Eigen::Index j = 0; j < p; ++j) out << ",beta_" << (j + 1);
    out << ",sigma1_sq,sigma2_sq,rho";
    if (with_lambda) out << ",lambda";
    out << "\n";
    for (const auto& rec : trajectory) {
        out << rec.iteration << "," << format_double(rec.criterion);
        for (Eigen::Index j = 0; j < rec.beta.size(); ++j) out << "," << format_double(rec.beta(j));
        out << "," << format_double(rec.sigma1_sq) << "," << format_double(rec.sigma2_sq) << ","
            << format_double(rec.rho);
        if (with_lambda) out << "," << format_double(rec.lambda);
        out << "\n";
    }
}

void write_random_effects(std::ostream& out, const ModelState& theta, const PanelLayout& layout) {
    out << "effect,index,mean,variance\n";
    const Eigen::Index N = layout.n_individuals();
    for (Eigen::Index k = 0; k < theta.xi_mean.size(); ++k) {
        const bool individual = k < N;
        out << (individual ? "individual," : "time,") << (individual ? k + 1 : k - N + 1) << ","
            << format_double(theta.xi_mean(k)) << ","
            << format_double(theta.xi_cov.size() ? theta.xi_cov(k, k) : 0.0) << "\n";
    }
}

void write_parameter(std::ostream& out, const std::string& name, double value) {
    out << name << "," << format_double(value) << "\n";
}

int finish_fit(const FitReport& report, std::ostream& out, std::ostream& err) {
    out << "termination: " << to_string(report.termination) << " after " << report.n_iters
        << " iterations\n";
    if (report.n_eta_clamped > 0) {
        err << "warning: linear predictor clamped at +/-" << kEtaClamp << " "
            << report.n_eta_clamped << " times\n";
    }
    for (const auto& w : report.warnings) err << "warning: " << w << "\n";
    if (report.termination == Termination::NumericalFailure) {
        err << "error: numerical failure: " << report.message << "\n";
        return 2;
    }
    if (report.termination == Termination::MaxIters) {
        err << "warning: max-iters reached before tol\n";
    }
    return 0;
}

int run_fit(const RunConfig& config, const std::filesystem::path& dir, std::ostream& out,
            std::ostream& err) {
    const PanelDataset data = load_panel_csv(config.input, config.family_spec());
    const FitReport report = fit(data, config.ridge_config());
    const ModelState& theta = report.theta_hat;
    const double lambda = report.lambda_path.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                     : report.lambda_path.back();

    write_file(dir / "estimates.csv", [&](std::ostream& os) {
        os << "parameter,value\n";
        for (Eigen::Index j = 0; j < theta.beta.size(); ++j) {
            write_parameter(os, "beta_" + std::to_string(j + 1), theta.beta(j));
        }
        write_parameter(os, "sigma1_sq", theta.sigma1_sq);
        write_parameter(os, "sigma2_sq", theta.sigma2_sq);
        write_parameter(os, "rho", theta.rho);
        write_parameter(os, "lambda", lambda);
        os << "iterations," << report.n_iters << "\n";
        os << "converged," << (report.termination == Termination::Converged ? 1 : 0) << "\n";
    });
    write_file(dir / "trajectory.csv", [&](std::ostream& os) {
        write_trajectory(os, report.trajectory, data.n_covariates(), true);
    });
    write_file(dir / "gcv_path.csv", [&](std::ostream& os) {
        os << "iteration,lambda,gcv\n";
        for (std::size_t it = 0; it < report.gcv_paths.size(); ++it) {
            for (const auto& pt : report.gcv_paths[it]) {
                os << (it + 1) << "," << format_double(pt.lambda) << "," << format_double(pt.gcv)
                   << "\n";
            }
        }
    });
    if (theta.xi_mean.size() > 0) {
        write_file(dir / "random_effects.csv",
                   [&](std::ostream& os) { write_random_effects(os, theta, data.layout); });
    }
    out << "wrote estimates.csv, trajectory.csv, gcv_path.csv, random_effects.csv to " << dir.string() << "\n";
    return finish_fit(report, out, err);
}

int run_fit_components(const RunConfig& config, const std::filesystem::path& dir,
                       std::ostream& out, std::ostream& err) {
    const PanelDataset data = load_panel_csv(config.input, config.family_spec());
    const ComponentFit result = fit_components(data, config.component_config());
    const ComponentSet& comps = result.components;
    const FitReport& report = result.report;
    const ModelState& theta = report.theta_hat;

    write_file(dir / "estimates.csv", [&](std::ostream& os) {
        os << "parameter,value\n";
        for (Eigen::Index j = 0; j < comps.beta_std.size(); ++j) {
            write_parameter(os, "beta_" + std::to_string(j + 1), comps.beta_std(j));
        }
        for (Eigen::Index k = 0; k < comps.gamma_coefs.size(); ++k) {
            write_parameter(os, "gamma_" + std::to_string(k + 1), comps.gamma_coefs(k));
        }
        write_parameter(os, "sigma1_sq", theta.sigma1_sq);
        write_parameter(os, "sigma2_sq", theta.sigma2_sq);
        write_parameter(os, "rho", theta.rho);
        write_parameter(os, "s", comps.s);
        write_parameter(os, "l", comps.l);
        os << "iterations," << report.n_iters << "\n";
        os << "converged," << (report.termination == Termination::Converged ? 1 : 0) << "\n";
    });
    write_file(dir / "components.csv", [&](std::ostream& os) {
        os << "variable";
        for (Eigen::Index k = 0; k < comps.loadings.cols(); ++k) os << ",component_" << (k + 1);
        os << "\n";
        for (Eigen::Index j = 0; j < comps.loadings.rows(); ++j) {
            os << "x" << (j + 1);
            for (Eigen::Index k = 0; k < comps.loadings.cols(); ++k) {
                os << "," << format_double(comps.loadings(j, k));
            }
            os << "\n";
        }
    });
    write_file(dir / "trajectory.csv", [&](std::ostream& os) {
        write_trajectory(os, report.trajectory, data.n_covariates(), false);
    });
    write_file(dir / "cv_path.csv", [&](std::ostream& os) {
        os << "s,l,deviance\n";
        for (const auto& cell : result.cv_path) {
            os << format_double(cell.s) << "," << format_double(cell.l) << ","
               << format_double(cell.deviance) << "\n";
        }
    });
    if (theta.xi_mean.size() > 0) {
        write_file(dir / "random_effects.csv",
                   [&](std::ostream& os) { write_random_effects(os, theta, data.layout); });
    }
    out << "selected s=" << format_double(comps.s) << " l=" << format_double(comps.l) << "\n";
    return finish_fit(report, out, err);
}

int run_simulate(const RunConfig& config, const std::filesystem::path& dir, std::ostream& out) {
    const SimulatedPanel sim = generate_panel(config.scenario());
    write_file(dir / "panel.csv", [&](std::ostream& os) { write_panel_csv(os, sim.data); });
    write_file(dir / "latent.csv", [&](std::ostream& os) {
        os << "effect,index,value\n";
        for (Eigen::Index i = 0; i < sim.xi1.size(); ++i) {
            os << "individual," << (i + 1) << "," << format_double(sim.xi1(i)) << "\n";
        }
        for (Eigen::Index t = 0; t < sim.xi2.size(); ++t) {
            os << "time," << (t + 1) << "," << format_double(sim.xi2(t)) << "\n";
        }
    });
    out << "wrote panel.csv, latent.csv to " << dir.string() << "\n";
    return 0;
}

int run_study(const RunConfig& config, const std::filesystem::path& dir, std::ostream& out) {
    SimScenario scenario = config.scenario();
    scenario.n_replicates = config.n_replicates();
    const RidgeConfig ridge = config.ridge_config();

    switch (config.command) {
        case Command::StudyConvergence: {
            const ConvergenceStudy study = convergence_study(scenario, ridge, config.threads);
            write_file(dir / "convergence.csv", [&](std::ostream& os) { study.write_csv(os); });
            out << "converged " << study.n_converged() << "/" << study.replicates.size()
                << ", median iterations " << format_double(study.median_iterations()) << "\n";
            break;
        }
        case Command::StudyMse: {
            const MseStudy study =
                mse_study(scenario, config.t_list, ridge_estimator(ridge), config.threads);
            write_file(dir / "mse.csv", [&](std::ostream& os) { study.write_csv(os); });
            for (const auto& row : study.rows) {
                out << "T=" << row.n_times << " " << row.parameter << " mse=" << format_double(row.mse)
                    << "\n";
            }
            break;
        }
        case Command::StudyRho: {
            const RhoStudy study = rho_recovery_study(config.rho_list, scenario,
                                                      ridge_estimator(ridge), config.threads);
            write_file(dir / "rho_estimates.csv",
                       [&](std::ostream& os) { study.write_estimates_csv(os); });
            write_file(dir / "rho_summary.csv",
                       [&](std::ostream& os) { study.write_summary_csv(os); });
            for (const auto& s : study.summary) {
                out << "rho=" << format_double(s.rho_true) << " median=" << format_double(s.median)
                    << "\n";
            }
            break;
        }
        default:
            break;
    }
    return 0;
}

}  // namespace

std::string to_string(Command c) {
    for (const auto& [name, cmd] : command_names()) {
        if (cmd == c) return name;
    }
    return "?";
}

Command parse_command(const std::string& name) {
    const auto it = command_names().find(name);
    if (it == command_names().end()) throw ConfigError("unknown command '" + name + "'");
    return it->second;
}

void RunConfig::validate() const {
    const bool needs_input = command == Command::Fit || command == Command::FitComponents;
    require(!needs_input || !input.empty(), "--input", "input path required for " + to_string(command));
    require(!output.empty(), "--output", "output directory must not be empty");
    require(dispersion > 0.0, "--dispersion", "dispersion must be positive");
    require(tol > 0.0, "--tol", "tol must be positive");
    require(max_iters >= 1, "--max-iters", "max-iters must be at least 1");
    require(lambda_min > 0.0, "--lambda-min", "lambda-min must be positive");
    require(lambda_max >= lambda_min, "--lambda-max", "lambda-max must be >= lambda-min");
    require(lambda_count >= 1, "--lambda-count", "lambda-count must be at least 1");
    require(!lambda || *lambda >= 0.0, "--lambda", "lambda must be non-negative");
    require(em_inner_iters >= 1, "--em-inner-iters", "em-inner-iters must be at least 1");
    require(n_components >= 1, "--K", "K must be at least 1");
    require(!s_grid.empty(), "--s-grid", "s-grid must not be empty");
    for (double s : s_grid) require(s >= 0.0 && s <= 1.0, "--s-grid", "values must lie in [0, 1]");
    require(!l_grid.empty(), "--l-grid", "l-grid must not be empty");
    for (double l : l_grid) require(l >= 1.0, "--l-grid", "values must be at least 1");
    require(cv_folds >= 2, "--cv-folds", "cv-folds must be at least 2");
    require(n_individuals >= 1, "--N", "N must be at least 1");
    require(n_times >= 2, "--T", "T must be at least 2");
    require(!beta.empty(), "--beta", "beta must have at least one entry");
    require(sigma1_sq >= 0.0, "--sigma1-sq", "sigma1-sq must be non-negative");
    require(sigma2_sq > 0.0, "--sigma2-sq", "sigma2-sq must be positive");
    require(std::abs(rho) < 1.0, "--rho", "rho must lie in (-1, 1)");
    require(x_correlation >= 0.0 && x_correlation < 1.0, "--x-correlation",
            "x-correlation must lie in [0, 1)");
    require(x_individual_share >= 0.0 && x_individual_share <= 1.0, "--x-individual-share",
            "x-individual-share must lie in [0, 1]");
    require(!replicates || *replicates >= 1, "--replicates", "replicates must be at least 1");
    require(!t_list.empty(), "--T-list", "T-list must not be empty");
    for (auto t : t_list) require(t >= 2, "--T-list", "every T must be at least 2");
    require(!rho_list.empty(), "--rho-list", "rho-list must not be empty");
    for (double r : rho_list) require(std::abs(r) < 1.0, "--rho-list", "values must lie in (-1, 1)");
}

Family RunConfig::family_spec() const { return Family{family, dispersion}; }

RidgeConfig RunConfig::ridge_config() const {
    RidgeConfig rc;
    rc.lambda_grid = log_spaced_grid(lambda_min, lambda_max, lambda_count);
    rc.max_outer_iters = max_iters;
    rc.tol = tol;
    rc.em_inner_iters = em_inner_iters;
    rc.fixed_lambda = lambda;
    return rc;
}

ComponentConfig RunConfig::component_config() const {
    ComponentConfig cc;
    cc.n_components = n_components;
    cc.s_grid = s_grid;
    cc.l_grid = l_grid;
    cc.cv_folds = cv_folds;
    cc.seed = seed;
    cc.max_outer_iters = max_iters;
    cc.tol = tol;
    cc.n_threads = threads;
    return cc;
}

SimScenario RunConfig::scenario() const {
    SimScenario sc;
    sc.layout = PanelLayout(n_individuals, n_times);
    sc.beta_true = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
    sc.sigma1_sq_true = sigma1_sq;
    sc.sigma2_sq_true = sigma2_sq;
    sc.rho_true = rho;
    sc.x_correlation = x_correlation;
    sc.x_individual_share = x_individual_share;
    sc.family = family_spec();
    sc.seed = seed;
    sc.n_replicates = 1;
    return sc;
}

int RunConfig::n_replicates() const {
    if (replicates) return *replicates;
    switch (command) {
        case Command::StudyConvergence: return 40;
        case Command::StudyMse:
        case Command::StudyRho: return 50;
        default: return 1;
    }
}

RunConfig parse_args(const std::vector<std::string>& args) {
    RunConfig cfg;
    cfg.output = default_output_dir();

    CLI::App app{"GLMM fitting for balanced panels with individual and AR(1) time effects",
                 "panelglmm"};
    app.set_config("--config", "", "Read options from a TOML config file");
    app.allow_config_extras(CLI::config_extras_mode::error);

    std::string command;
    std::string family = to_string(cfg.family);
    double lambda_value = 0.0;
    int replicates_value = 1;

    std::vector<std::string> command_list;
    for (const auto& [name, c] : command_names()) command_list.push_back(name);

    app.add_option("command", command, "fit | fit-components | simulate | study-convergence | "
                                       "study-mse | study-rho")
        ->required()
        ->check(CLI::IsMember(command_list));
    app.add_option("--input", cfg.input, "Panel CSV with header id,time,y,x1..xp");
    app.add_option("--output", cfg.output,
                   std::string("Output directory (default: $") + kOutputDirEnv + " or .)");
    app.add_option("--family", family, "poisson-log | bernoulli-logit | gaussian-identity")
        ->check(CLI::IsMember({"poisson-log", "bernoulli-logit", "gaussian-identity"}));
    app.add_option("--dispersion", cfg.dispersion, "Gaussian residual variance");
    app.add_option("--tol", cfg.tol, "Relative convergence tolerance");
    app.add_option("--max-iters", cfg.max_iters, "Maximum outer iterations");
    app.add_option("--lambda-min", cfg.lambda_min, "Smallest lambda on the GCV grid");
    app.add_option("--lambda-max", cfg.lambda_max, "Largest lambda on the GCV grid");
    app.add_option("--lambda-count", cfg.lambda_count, "Number of log-spaced grid points");
    auto* lambda_opt = app.add_option("--lambda", lambda_value, "Fixed lambda (skips GCV)");
    app.add_option("--em-inner-iters", cfg.em_inner_iters, "E/M sweeps per linearisation");
    app.add_option("--K", cfg.n_components, "Number of supervised components");
    app.add_option("--s-grid", cfg.s_grid, "Comma-separated s values")->delimiter(',');
    app.add_option("--l-grid", cfg.l_grid, "Comma-separated l values")->delimiter(',');
    app.add_option("--cv-folds", cfg.cv_folds, "Cross-validation folds over individuals");
    app.add_option("--seed", cfg.seed, "Random seed");
    app.add_option("--threads", cfg.threads, "Worker threads (0 = all cores)");
    app.add_option("--N", cfg.n_individuals, "Simulated individuals");
    app.add_option("--T", cfg.n_times, "Simulated time points");
    app.add_option("--beta", cfg.beta, "Comma-separated true beta")->delimiter(',');
    app.add_option("--sigma1-sq", cfg.sigma1_sq, "True individual-effect variance");
    app.add_option("--sigma2-sq", cfg.sigma2_sq, "True AR(1) innovation variance");
    app.add_option("--rho", cfg.rho, "True AR(1) coefficient");
    app.add_option("--x-correlation", cfg.x_correlation, "Pairwise covariate correlation");
    app.add_option("--x-individual-share", cfg.x_individual_share,
                   "Share of covariate variance constant within individual");
    auto* replicates_opt = app.add_option("--replicates", replicates_value, "Study replicates");
    app.add_option("--T-list", cfg.t_list, "Comma-separated T values for study-mse")
        ->delimiter(',');
    app.add_option("--rho-list", cfg.rho_list, "Comma-separated rho values for study-rho")
        ->delimiter(',');
    app.add_flag("--dump-config", cfg.dump_config, "Print the effective config and exit");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        throw HelpRequested{app.help()};
    } catch (const CLI::CallForAllHelp&) {
        throw HelpRequested{app.help()};
    } catch (const CLI::ParseError& e) {
        throw ConfigError(e.what());
    }

    cfg.command = parse_command(command);
    cfg.family = parse_family_tag(family);
    if (lambda_opt->count() > 0) cfg.lambda = lambda_value;
    if (replicates_opt->count() > 0) cfg.replicates = replicates_value;
    cfg.validate();
    return cfg;
}

RunConfig parse_args(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return parse_args(args);
}

std::string dump_config(const RunConfig& c) {
    std::ostringstream os;
    os << "input = " << toml_string(c.input) << "\n";
    os << "output = " << toml_string(c.output) << "\n";
    os << "family = " << toml_string(to_string(c.family)) << "\n";
    os << "dispersion = " << format_double(c.dispersion) << "\n";
    os << "tol = " << format_double(c.tol) << "\n";
    os << "max-iters = " << c.max_iters << "\n";
    os << "lambda-min = " << format_double(c.lambda_min) << "\n";
    os << "lambda-max = " << format_double(c.lambda_max) << "\n";
    os << "lambda-count = " << c.lambda_count << "\n";
    if (c.lambda) os << "lambda = " << format_double(*c.lambda) << "\n";
    os << "em-inner-iters = " << c.em_inner_iters << "\n";
    os << "K = " << c.n_components << "\n";
    os << "s-grid = " << toml_list(join(c.s_grid)) << "\n";
    os << "l-grid = " << toml_list(join(c.l_grid)) << "\n";
    os << "cv-folds = " << c.cv_folds << "\n";
    os << "seed = " << c.seed << "\n";
    os << "threads = " << c.threads << "\n";
    os << "N = " << c.n_individuals << "\n";
    os << "T = " << c.n_times << "\n";
    os << "beta = " << toml_list(join(c.beta)) << "\n";
    os << "sigma1-sq = " << format_double(c.sigma1_sq) << "\n";
    os << "sigma2-sq = " << format_double(c.sigma2_sq) << "\n";
    os << "rho = " << format_double(c.rho) << "\n";
    os << "x-correlation = " << format_double(c.x_correlation) << "\n";
    os << "x-individual-share = " << format_double(c.x_individual_share) << "\n";
    if (c.replicates) os << "replicates = " << *c.replicates << "\n";
    os << "T-list = " << toml_list(join(c.t_list)) << "\n";
    os << "rho-list = " << toml_list(join(c.rho_list)) << "\n";
    return os.str();
}

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
    config.validate();
    if (config.dump_config) {
        out << dump_config(config);
        return 0;
    }
    const std::filesystem::path dir(config.output);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ValidationError("cannot create output directory " + dir.string() + ": " + ec.message());

    switch (config.command) {
        case Command::Fit: return run_fit(config, dir, out, err);
        case Command::FitComponents: return run_fit_components(config, dir, out, err);
        case Command::Simulate: return run_simulate(config, dir, out);
        default: return run_study(config, dir, out);
    }
}

int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    try {
        const RunConfig config = parse_args(argc, argv);
        return run(config, out, err);
    } catch (const HelpRequested& h) {
        out << h.text;
        return 0;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        err << "error: numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace panelglmm::cli
