#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "prism/model.hpp"

namespace prism {

/// Synthetic successor-arithmetic task over content tokens 0..M-1 (M = V-1,
/// token V-1 is BOS). The rule-correct response continues the query by
/// repeatedly adding `correct_step` modulo M; the harmful rule adds
/// `harmful_step` instead.
struct TaskRule {
    int vocab = 16;
    int correct_step = 1;
    int harmful_step = 2;

    int modulus() const { return vocab - 1; }
    void validate() const;
};

/// Rule-following response of the given length for a query.
TokenSequence rule_response(const TaskRule& rule, const TokenSequence& query, int length, int step);
TokenSequence correct_response(const TaskRule& rule, const TokenSequence& query, int length);
TokenSequence harmful_response(const TaskRule& rule, const TokenSequence& query, int length);

/// True when every response token is the correct successor of the one before it
/// (the first token continues the last query token).
bool follows_rule(const TaskRule& rule, const TokenSequence& query, const TokenSequence& response);

/// Queries of random length whose final token is drawn from `last_tokens`;
/// earlier tokens are uniform content tokens.
std::vector<TokenSequence> sample_queries(const TaskRule& rule, std::uint64_t seed, std::size_t count,
                                          int min_length, int max_length,
                                          std::span<const int> last_tokens);

/// Content tokens [lo, hi) as a list.
std::vector<int> token_range(int lo, int hi);

struct PoolConfig {
    std::uint64_t seed = 0;
    TaskRule rule;
    int pool_size = 2000;
    double harmful_ratio = 0.1;
    int query_min = 1;
    int query_max = 3;
    int response_length = 3;
    /// Pool queries end in a token from [0, domain_size).
    int domain_size = 8;

    void validate() const;
};

struct LabeledPool {
    std::vector<Example> pool;
    std::vector<Label> labels;

    std::size_t harmful_count() const;
};

/// Deterministic given the config. Exactly round(harmful_ratio * n) examples are
/// harmful; their positions are a seeded random subset.
LabeledPool generate_pool(const PoolConfig& config);

/// Fraction of queries whose greedy decode breaks the task rule.
double wrong_rule_rate(const ModelParams& model, const TaskRule& rule,
                       std::span<const TokenSequence> queries, int response_length);

}  // namespace prism
