#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/curvature.hpp"
#include "prism/scoring.hpp"
#include "prism/task.hpp"
#include "prism/training.hpp"
#include "prism/util.hpp"

namespace prism {

enum class Method { Prism, Equal, Unpaired, Random, Oracle };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

/// Fully-resolved experiment configuration. Every field is a config key; see
/// config.hpp for the text format.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    int seeds = 1;

    int vocab = 16;
    int harmful_step = 2;
    int pool_size = 2000;
    double harmful_ratio = 0.1;
    /// Harmful ratios visited by the repair command.
    std::vector<double> harmful_ratios{0.1, 0.2, 0.5};
    int query_min = 1;
    int query_max = 3;
    int response_length = 3;
    int domain_size = 8;

    std::string model = "tabular";
    int window = 2;
    int embed_dim = 8;
    int hidden_dim = 16;

    int pretrain_size = 300;
    double pretrain_ridge = 0.01;
    int finetune_steps = 200;
    double learning_rate = 10.0;

    int eval_queries = 400;
    int test_queries = 400;

    CurvatureKind curvature = CurvatureKind::ExactDense;
    double damping = 1e-3;
    /// Ridge added to the exact Hessian (2 * ridge * I); unused by other kinds.
    double ridge = 1e-3;

    double remove_fraction = 0.1;
    double budget = 0.05;
    /// Share of the selection pool whose queries end outside the base domain.
    double relevant_fraction = 0.05;
    std::vector<double> ratios{0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::vector<Method> methods{Method::Prism, Method::Equal, Method::Unpaired, Method::Random};
    Method sweep_method = Method::Prism;

    void validate() const;
    TaskRule rule() const;
    ModelSpec model_spec() const;
    PoolConfig pool_config(std::uint64_t run_seed) const;
    FineTuneOptions finetune_options() const;
    /// Hash of the canonical text form.
    std::string fingerprint() const;
};

/// Greedy-decodes both models on every query and keeps those where the
/// post-model breaks the rule and the pre-model follows it. Orientation:
/// positive = post (undesired) response, negative = pre response. Throws
/// ValidationError when no query shifted.
std::vector<PairedTarget> derive_paired_targets(const ModelParams& pre, const ModelParams& post,
                                                const TaskRule& rule,
                                                std::span<const TokenSequence> eval_queries,
                                                int response_length);

/// Capability orientation: every query where `model` breaks the rule becomes
/// (q, rule-correct response, current decode). Throws when the model is already
/// correct everywhere.
std::vector<PairedTarget> derive_capability_targets(const ModelParams& model, const TaskRule& rule,
                                                    std::span<const TokenSequence> eval_queries,
                                                    int response_length);

/// Queries drawn from all content tokens, excluding any query in `exclude`.
std::vector<TokenSequence> held_out_queries(const ExperimentConfig& config, std::uint64_t seed,
                                            std::size_t count,
                                            const std::vector<TokenSequence>& exclude);

/// Pretraining corpus of rule-correct examples whose queries end in [0, last_token_bound).
std::vector<Example> clean_corpus(const ExperimentConfig& config, std::uint64_t seed,
                                  int last_token_bound);

/// Certified optimum (Tabular) or fixed-budget descent (Mlp) on a clean corpus.
ModelParams pretrain(const ExperimentConfig& config, std::span<const Example> corpus,
                     std::uint64_t seed);

/// Score column for a method; Oracle scores 1 for harmful and 0 for benign.
std::vector<double> method_scores(const ScoreTable& table, Method m, std::span<const Label> labels);

/// Everything one seed of the repair protocol needs, computed once and shared by
/// all methods.
struct RepairContext {
    std::uint64_t run_seed = 0;
    LabeledPool data;
    ModelParams pre;
    ModelParams post;
    std::vector<PairedTarget> targets;
    std::string targets_fingerprint;
    std::vector<TokenSequence> test_queries;
    ScoreTable scores;
};

RepairContext prepare_repair(const ExperimentConfig& config, std::uint64_t run_seed);

/// Retains `keep_ids`, retrains from the pre-model with the shared recipe and
/// returns the wrong-rule rate on the test queries.
double retrain_metric(const ExperimentConfig& config, const RepairContext& ctx,
                      const std::vector<int>& keep_ids);

struct MethodOutcome {
    Method method = Method::Prism;
    double auroc = 0.0;
    double metric_after = 0.0;
    int removed = 0;
    int removed_harmful = 0;
};

struct RepairResult {
    std::uint64_t seed = 0;
    int harmful_count = 0;
    int target_count = 0;
    std::string targets_fingerprint;
    std::string config_fingerprint;
    /// Wrong-rule rate of the pre-model, the unfiltered mixed model, and a model
    /// fine-tuned on the same queries with every response rule-correct.
    double metric_pre = 0.0;
    double metric_mixed = 0.0;
    double metric_pure = 0.0;
    double retained_ratio = 1.0;
    std::vector<MethodOutcome> methods;
};

/// One seed: train on the mixed pool, derive targets, score, remove the top
/// `remove_fraction` per method, retrain, and measure. remove_fraction 0 keeps
/// the whole pool.
RepairResult run_repair(const ExperimentConfig& config, std::uint64_t run_seed,
                        std::span<const Method> methods, double remove_fraction);

struct SweepPoint {
    double retained_ratio = 1.0;
    double metric = 0.0;
};

struct SweepCurve {
    std::uint64_t seed = 0;
    Method method = Method::Prism;
    double metric_mixed = 0.0;
    double metric_pure = 0.0;
    std::vector<SweepPoint> points;
};

/// Repair metric per retained ratio for one method; ratio 1.0 reuses the
/// unfiltered model.
SweepCurve sweep_filter_ratio(const ExperimentConfig& config, std::uint64_t run_seed, Method method,
                              std::span<const double> ratios);

/// Several methods on one shared run: targets, scores and the pre-model are
/// computed once per seed.
std::vector<SweepCurve> sweep_filter_ratio(const ExperimentConfig& config, std::uint64_t run_seed,
                                           std::span<const Method> methods, std::span<const double> ratios);

struct SelectionOutcome {
    Method method = Method::Prism;
    double accuracy = 0.0;
    int selected = 0;
    int selected_harmful = 0;
};

struct SelectionResult {
    std::uint64_t seed = 0;
    int target_count = 0;
    std::string targets_fingerprint;
    double accuracy_base = 0.0;
    double accuracy_full = 0.0;
    std::vector<SelectionOutcome> methods;
};

/// Selection pool: round(relevant_fraction * n) rule-correct examples whose
/// queries end in [domain_size, V-1), the rest drawn like the repair pool.
/// Shuffled with the seed; ids are dense in the shuffled order.
LabeledPool selection_pool(const ExperimentConfig& config, std::uint64_t seed);

/// Capability protocol: a base model trained only on queries ending below
/// `domain_size`, capability targets on held-out queries; each method keeps the
/// top `budget` fraction and fine-tunes the base on it. Oracle is rejected.
SelectionResult run_budget_selection(const ExperimentConfig& config, std::uint64_t run_seed,
                                     std::span<const Method> methods, double budget);

/// Runs fn(seed) for seeds config.seed .. config.seed + config.seeds - 1 on up to
/// `threads` workers; results are returned in seed order.
template <class R>
std::vector<R> for_each_seed(const ExperimentConfig& config, int threads,
                             const std::function<R(std::uint64_t)>& fn) {
    std::vector<R> out(static_cast<std::size_t>(config.seeds));
    parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = fn(config.seed + i); });
    return out;
}

nlohmann::json repair_result_to_json(const RepairResult& r);
nlohmann::json sweep_curve_to_json(const SweepCurve& c);
nlohmann::json selection_result_to_json(const SelectionResult& r);

}  // namespace prism
