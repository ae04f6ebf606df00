#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/curvature.hpp"
#include "prism/scoring.hpp"
#include "prism/training.hpp"

namespace prism {

enum class CheckStatus { Pass, Fail, Inconclusive };

std::string to_string(CheckStatus s);

/// Outcome of one numerical certification. `passed()` implies every recorded
/// error is within `tolerance`.
struct TheoremReport {
    std::string check_name;
    std::string instance;
    nlohmann::json measured = nlohmann::json::object();
    nlohmann::json predicted = nlohmann::json::object();
    double abs_error = 0.0;
    double rel_error = 0.0;
    double tolerance = 0.0;
    std::vector<double> eps_schedule;
    CheckStatus status = CheckStatus::Pass;
    std::string note;

    bool passed() const { return status == CheckStatus::Pass; }
};

nlohmann::json to_json(const TheoremReport& r);

/// Small random tabular problem: pool, paired targets and ridge.
struct InstanceShape {
    int vocab = 6;
    int pool_size = 12;
    int targets = 4;
    int max_len = 3;
    double ridge_min = 0.01;
    double ridge_max = 0.5;
};

struct TheoryInstance {
    std::uint64_t seed = 0;
    ModelSpec spec;
    double ridge = 0.1;
    std::vector<Example> pool;
    std::vector<PairedTarget> targets;

    std::string fingerprint() const;
};

TheoryInstance random_instance(std::uint64_t seed, const InstanceShape& shape = {});

/// Central differences of K along 30 coordinates (half drawn from the support of
/// g_KL) and 5 random unit directions, compared with -g_KL at steps 1e-4 and
/// 5e-5. Relative error uses max(|fd|, |predicted|, 1e-6) as denominator. The
/// shrink test (error ratio >= 2.5 between the steps) only applies where the
/// coarse error exceeds 1e-9.
TheoremReport check_grad_identity(const ModelParams& model, std::span<const PairedTarget> targets,
                                  std::uint64_t seed);

/// Stationary point of the instance objective to gradient tolerance 1e-12:
/// gradient descent followed by Newton refinement on the exact Hessian.
TrainResult certified_optimum(const TheoryInstance& inst);

inline const std::vector<double> kDefaultEpsSchedule{1e-3, 5e-4, 2.5e-4};

/// Upweights each probe by eps, retrains from the optimum, and compares
/// (K(theta_eps) - K(theta_hat)) / eps with h_pi from the exact Hessian. The
/// residual constant C is fit on the two largest eps; the smallest must satisfy
/// |r| <= 1.5 C eps + 1e-8, and |r| must not grow as eps shrinks. Retraining
/// failures and basin jumps are reported as inconclusive.
TheoremReport check_theorem1(const TheoryInstance& inst, std::span<const int> probe_ids,
                             std::span<const double> eps_schedule = kDefaultEpsSchedule);

/// Subset version: every member of `subset` is upweighted by eps/m and the
/// change is compared with the mean score over the subset.
TheoremReport check_theorem1_subset(const TheoryInstance& inst, std::span<const int> subset,
                                    std::span<const double> eps_schedule = kDefaultEpsSchedule);

/// Direction gap at budget c. `weights` replaces pi when given (constant weights
/// must give ratio 1). The cosine is recomputed with an independent QR solve of
/// the materialized operator.
TheoremReport check_direction_gap(const ModelParams& model, std::span<const PairedTarget> targets,
                                  const CurvatureOperator& curv, double c = 1.0,
                                  std::optional<std::vector<double>> weights = std::nullopt);

/// Delta_m >= -1e-12 for each m; with `exhaustive` (n <= 12) the top-m sum is
/// also compared with the best of all m-subsets.
TheoremReport check_selection_gap(const ScoreTable& table, std::span<const int> m_values,
                                  bool exhaustive = false);

/// d softplus(r)/dr by central differences against sigma(r) on `grid`, plus the
/// weighted direction built from those analytic weights compared bitwise with g_KL.
TheoremReport check_info_identity(const ModelParams& model, std::span<const PairedTarget> targets,
                                  std::span<const double> grid);

/// P <= K and R_pair <= 2P <= 2K on one (model, targets) draw.
TheoremReport check_reward_bounds(const ModelParams& model, std::span<const PairedTarget> targets);

/// Exact Hessian payload vs central second differences of the
/// training objective, entrywise.
TheoremReport check_hessian_fd(const ModelParams& model, std::span<const Example> pool, double ridge,
                               double tolerance = 1e-4);

/// Constructed single-layer case whose Fisher is diagonal in the Kronecker
/// eigenbasis: EK-FAC inverse must match the dense inverse.
TheoremReport check_ekfac_kronecker(std::uint64_t seed, double tolerance = 1e-8);

/// Median relative error of EK-FAC vs dense-Fisher inverse-apply over random
/// probes on a trained Mlp.
TheoremReport check_ekfac_vs_fisher(std::uint64_t seed, int probes = 50, double tolerance = 0.5);

struct VerifyOptions {
    std::uint64_t seed = 0;
    int grad_instances = 50;
    int theorem1_instances = 50;
    int theorem1_probes = 5;
    int direction_instances = 500;
    int selection_tables = 500;
    int bound_draws = 1000;
    int threads = 1;
};

struct SuiteSection {
    std::string name;
    std::vector<TheoremReport> reports;
    /// Minimum number of passing reports for the section to pass.
    std::size_t required = 0;

    std::size_t pass_count() const;
    bool passed() const { return pass_count() >= required; }
};

/// Runs every check family; sections are in a fixed order.
std::vector<SuiteSection> run_verify_suite(const VerifyOptions& options);

nlohmann::json suite_to_json(const SuiteSection& section);
std::string suite_markdown(const std::vector<SuiteSection>& sections);

}  // namespace prism
