#include "prism/task.hpp"

#include <cmath>

#include "prism/util.hpp"

namespace prism {

void TaskRule::validate() const {
    if (vocab < 4) {
        throw ValidationError("task vocabulary must be at least 4 (3 content tokens plus BOS)");
    }
    const int m = modulus();
    const int c = ((correct_step % m) + m) % m;
    const int h = ((harmful_step % m) + m) % m;
    if (c == 0 || h == 0 || c == h) {
        throw ValidationError("vocab " + std::to_string(vocab) +
                              " too small for distinct non-trivial correct and harmful steps");
    }
}

TokenSequence rule_response(const TaskRule& rule, const TokenSequence& query, int length, int step) {
    if (length < 1) {
        throw ValidationError("response length must be positive");
    }
    const int m = rule.modulus();
    // An empty query behaves as if it ended in token 0's predecessor.
    int prev = query.empty() ? m - 1 : query.back();
    TokenSequence out;
    out.reserve(static_cast<std::size_t>(length));
    for (int t = 0; t < length; ++t) {
        prev = ((prev + step) % m + m) % m;
        out.push_back(prev);
    }
    return out;
}

TokenSequence correct_response(const TaskRule& rule, const TokenSequence& query, int length) {
    return rule_response(rule, query, length, rule.correct_step);
}

TokenSequence harmful_response(const TaskRule& rule, const TokenSequence& query, int length) {
    return rule_response(rule, query, length, rule.harmful_step);
}

bool follows_rule(const TaskRule& rule, const TokenSequence& query, const TokenSequence& response) {
    if (response.empty()) {
        return false;
    }
    return response == correct_response(rule, query, static_cast<int>(response.size()));
}

std::vector<int> token_range(int lo, int hi) {
    std::vector<int> out;
    for (int t = lo; t < hi; ++t) {
        out.push_back(t);
    }
    return out;
}

std::vector<TokenSequence> sample_queries(const TaskRule& rule, std::uint64_t seed, std::size_t count,
                                          int min_length, int max_length,
                                          std::span<const int> last_tokens) {
    if (min_length < 1 || max_length < min_length) {
        throw ValidationError("query lengths must satisfy 1 <= min <= max");
    }
    if (last_tokens.empty()) {
        throw ValidationError("query final-token set is empty");
    }
    Rng rng(seed);
    const int m = rule.modulus();
    std::vector<TokenSequence> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const int len = rng.integer(min_length, max_length);
        TokenSequence q;
        for (int k = 0; k + 1 < len; ++k) {
            q.push_back(rng.integer(0, m - 1));
        }
        q.push_back(last_tokens[rng.index(last_tokens.size())]);
        out.push_back(std::move(q));
    }
    return out;
}

void PoolConfig::validate() const {
    rule.validate();
    if (pool_size < 1) {
        throw ValidationError("pool_size must be positive");
    }
    if (!(harmful_ratio >= 0.0 && harmful_ratio <= 1.0)) {
        throw ValidationError("harmful_ratio must lie in [0, 1]");
    }
    if (response_length < 1) {
        throw ValidationError("response_length must be positive");
    }
    if (domain_size < 1 || domain_size > rule.modulus()) {
        throw ValidationError("domain_size must lie in [1, vocab - 1]");
    }
}

std::size_t LabeledPool::harmful_count() const {
    std::size_t c = 0;
    for (Label l : labels) {
        c += l == Label::Harmful ? 1 : 0;
    }
    return c;
}

LabeledPool generate_pool(const PoolConfig& config) {
    config.validate();
    const auto n = static_cast<std::size_t>(config.pool_size);
    const auto harmful = static_cast<std::size_t>(std::llround(config.harmful_ratio * static_cast<double>(n)));
    const auto domain = token_range(0, config.domain_size);
    const auto queries = sample_queries(config.rule, derive_seed(config.seed, 1), n, config.query_min,
                                        config.query_max, domain);

    std::vector<std::size_t> slots(n);
    for (std::size_t i = 0; i < n; ++i) {
        slots[i] = i;
    }
    Rng rng(derive_seed(config.seed, 2));
    rng.shuffle(slots);
    std::vector<Label> labels(n, Label::Benign);
    for (std::size_t k = 0; k < harmful; ++k) {
        labels[slots[k]] = Label::Harmful;
    }

    LabeledPool out;
    out.pool.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& q = queries[i];
        TokenSequence y = labels[i] == Label::Harmful
                              ? harmful_response(config.rule, q, config.response_length)
                              : correct_response(config.rule, q, config.response_length);
        out.pool.push_back(Example{static_cast<int>(i), q, std::move(y)});
    }
    out.labels = std::move(labels);
    return out;
}

double wrong_rule_rate(const ModelParams& model, const TaskRule& rule,
                       std::span<const TokenSequence> queries, int response_length) {
    if (queries.empty()) {
        throw ValidationError("no evaluation queries");
    }
    std::size_t wrong = 0;
    for (const auto& q : queries) {
        wrong += follows_rule(rule, q, greedy_decode(model, q, response_length)) ? 0 : 1;
    }
    return static_cast<double>(wrong) / static_cast<double>(queries.size());
}

}  // namespace prism
