#pragma once

#include "panelglmm/component_em.hpp"
#include "panelglmm/family.hpp"
#include "panelglmm/ridge_em.hpp"
#include "panelglmm/simulation.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace panelglmm::cli {

/// Environment variable giving the default output directory.
inline constexpr const char* kOutputDirEnv = "PANELGLMM_OUTPUT_DIR";

enum class Command { Fit, FitComponents, Simulate, StudyConvergence, StudyMse, StudyRho };

std::string to_string(Command c);
Command parse_command(const std::string& name);

struct RunConfig {
    Command command = Command::Fit;
    std::string input;
    std::string output = ".";
    FamilyTag family = FamilyTag::PoissonLog;
    double dispersion = 1.0;

    double tol = 1e-6;
    int max_iters = 500;
    double lambda_min = 1e-4;
    double lambda_max = 1e4;
    int lambda_count = 50;
    std::optional<double> lambda;
    int em_inner_iters = 1;

    int n_components = 1;
    std::vector<double> s_grid{0.5};
    std::vector<double> l_grid{1.0};
    int cv_folds = 2;

    std::uint64_t seed = 1;
    unsigned threads = 0;

    // Scenario overrides for simulate and the studies.
    Eigen::Index n_individuals = 10;
    Eigen::Index n_times = 20;
    std::vector<double> beta{0.4, -0.3, 0.2, 0.1};
    double sigma1_sq = 1.0;
    double sigma2_sq = 0.5;
    double rho = 0.5;
    double x_correlation = 0.5;
    double x_individual_share = 0.6;
    std::optional<int> replicates;
    std::vector<Eigen::Index> t_list{10, 40, 100};
    std::vector<double> rho_list{0.2, 0.5, 0.8};

    bool dump_config = false;

    bool operator==(const RunConfig&) const = default;

    /// Throws ConfigError whose message starts with the offending flag.
    void validate() const;

    Family family_spec() const;
    RidgeConfig ridge_config() const;
    ComponentConfig component_config() const;
    SimScenario scenario() const;
    /// --replicates if given, else the command's default.
    int n_replicates() const;
};

/// Thrown by parse_args for --help; carries the usage text.
struct HelpRequested {
    std::string text;
};

/// Parses `panelglmm <command> [flags]`. Flags override entries of a
/// --config file, which override defaults. Throws ConfigError on unknown
/// flags, missing values or malformed numbers.
RunConfig parse_args(int argc, const char* const* argv);
RunConfig parse_args(const std::vector<std::string>& args);

/// Config-file text (TOML key = value) holding every flag of `config`
/// except the command and --dump-config.
std::string dump_config(const RunConfig& config);

/// Runs the command; returns the process exit code (0 ok, 1 validation
/// error, 2 numerical failure). Messages go to `out` / `err`.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

/// parse_args + run with error mapping; the body of main().
int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace panelglmm::cli
