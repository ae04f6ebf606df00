#include "prism/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "prism/config.hpp"
#include "prism/direction.hpp"

namespace prism {

namespace {

// Seed streams for the sub-generators of one run.
constexpr std::uint64_t kPretrainStream = 10;
constexpr std::uint64_t kEvalStream = 11;
constexpr std::uint64_t kTestStream = 12;
constexpr std::uint64_t kRandomStream = 13;
constexpr std::uint64_t kInitStream = 14;
constexpr std::uint64_t kBaseStream = 20;
constexpr std::uint64_t kSelectPoolStream = 21;
constexpr std::uint64_t kSelectEvalStream = 22;
constexpr std::uint64_t kSelectTestStream = 23;
constexpr std::uint64_t kSelectRandomStream = 24;

std::vector<Example> subset(std::span<const Example> pool, std::vector<int> keep_ids) {
    std::sort(keep_ids.begin(), keep_ids.end());
    std::vector<Example> out;
    out.reserve(keep_ids.size());
    for (int id : keep_ids) {
        out.push_back(pool[static_cast<std::size_t>(id)]);
    }
    return out;
}

std::vector<int> all_ids(std::size_t n) {
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = static_cast<int>(i);
    }
    return out;
}

int count_harmful(std::span<const Label> labels, const std::vector<int>& ids) {
    int c = 0;
    for (int id : ids) {
        c += labels[static_cast<std::size_t>(id)] == Label::Harmful ? 1 : 0;
    }
    return c;
}

double safe_auroc(std::span<const double> scores, std::span<const Label> labels) {
    const auto harmful = std::count(labels.begin(), labels.end(), Label::Harmful);
    if (harmful == 0 || harmful == static_cast<std::ptrdiff_t>(labels.size())) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return auroc(scores, labels);
}

ScoreTable score_with_all_directions(const ExperimentConfig& config, const ModelParams& model,
                                     std::span<const Example> pool,
                                     std::span<const PairedTarget> targets,
                                     std::span<const Label> labels, std::uint64_t random_seed) {
    const auto curv = fit_curvature(config.curvature, model, pool, Damping{config.damping, true}, config.ridge);
    const std::vector<TargetDirection> dirs{target_direction_prism(model, targets),
                                            target_direction_equal(model, targets),
                                            target_direction_unpaired(model, targets)};
    ScoreTable table = score_pool(model, pool, curv, dirs, labels);
    const auto rnd = random_baseline_scores(pool.size(), random_seed);
    for (std::size_t i = 0; i < rnd.size(); ++i) {
        table.rows[i].h_random = rnd[i];
    }
    table.metadata["targets_fingerprint"] = fingerprint_targets(targets);
    table.metadata["target_count"] = targets.size();
    return table;
}

std::vector<TokenSequence> pool_queries(std::span<const Example> pool) {
    std::vector<TokenSequence> out;
    out.reserve(pool.size());
    for (const auto& z : pool) {
        out.push_back(z.query);
    }
    return out;
}

}  // namespace

std::string to_string(Method m) {
    switch (m) {
        case Method::Prism:
            return "prism";
        case Method::Equal:
            return "equal";
        case Method::Unpaired:
            return "unpaired";
        case Method::Random:
            return "random";
        case Method::Oracle:
            return "oracle";
    }
    return "unknown";
}

Method method_from_string(const std::string& s) {
    for (Method m : {Method::Prism, Method::Equal, Method::Unpaired, Method::Random, Method::Oracle}) {
        if (to_string(m) == s) {
            return m;
        }
    }
    throw ValidationError("unknown method '" + s + "' (expected prism, equal, unpaired, random or oracle)");
}

void ExperimentConfig::validate() const {
    rule().validate();
    pool_config(seed).validate();
    model_spec().validate();
    if (seeds < 1) {
        throw ValidationError("seeds must be >= 1");
    }
    if (pretrain_size < 1) {
        throw ValidationError("pretrain_size must be >= 1");
    }
    if (!(pretrain_ridge > 0.0)) {
        throw ValidationError("pretrain_ridge must be > 0 so the pretraining optimum is finite");
    }
    if (finetune_steps < 0) {
        throw ValidationError("finetune_steps must be >= 0");
    }
    if (!(learning_rate > 0.0)) {
        throw ValidationError("learning_rate must be > 0");
    }
    if (eval_queries < 1 || test_queries < 1) {
        throw ValidationError("eval_queries and test_queries must be >= 1");
    }
    if (!(damping > 0.0)) {
        throw ValidationError("damping must be > 0, got " + format_double(damping));
    }
    if (!(ridge >= 0.0)) {
        throw ValidationError("ridge must be >= 0, got " + format_double(ridge));
    }
    if (harmful_ratios.empty()) {
        throw ValidationError("harmful_ratios must not be empty");
    }
    for (double r : harmful_ratios) {
        if (!(r >= 0.0 && r <= 1.0)) {
            throw ValidationError("every harmful ratio must lie in [0, 1], got " + format_double(r));
        }
    }
    if (!(remove_fraction >= 0.0 && remove_fraction < 1.0)) {
        throw ValidationError("remove_fraction must lie in [0, 1), got " + format_double(remove_fraction));
    }
    if (!(budget > 0.0 && budget <= 1.0)) {
        throw ValidationError("budget must lie in (0, 1], got " + format_double(budget));
    }
    if (!(relevant_fraction >= 0.0 && relevant_fraction <= 1.0)) {
        throw ValidationError("relevant_fraction must lie in [0, 1], got " + format_double(relevant_fraction));
    }
    if (ratios.empty()) {
        throw ValidationError("ratios must not be empty");
    }
    for (double r : ratios) {
        if (!(r > 0.0 && r <= 1.0)) {
            throw ValidationError("every ratio must lie in (0, 1], got " + format_double(r));
        }
    }
    if (methods.empty()) {
        throw ValidationError("method list is empty");
    }
    std::set<Method> seen(methods.begin(), methods.end());
    if (seen.size() != methods.size()) {
        throw ValidationError("method list has duplicates");
    }
}

TaskRule ExperimentConfig::rule() const { return TaskRule{vocab, 1, harmful_step}; }

ModelSpec ExperimentConfig::model_spec() const {
    switch (model_kind_from_string(model)) {
        case ModelKind::Tabular:
            return ModelSpec::tabular(vocab);
        case ModelKind::Mlp:
            return ModelSpec::mlp(vocab, window, embed_dim, hidden_dim);
    }
    throw ValidationError("unknown model '" + model + "'");
}

PoolConfig ExperimentConfig::pool_config(std::uint64_t run_seed) const {
    PoolConfig pc;
    pc.seed = run_seed;
    pc.rule = rule();
    pc.pool_size = pool_size;
    pc.harmful_ratio = harmful_ratio;
    pc.query_min = query_min;
    pc.query_max = query_max;
    pc.response_length = response_length;
    pc.domain_size = domain_size;
    return pc;
}

FineTuneOptions ExperimentConfig::finetune_options() const {
    return FineTuneOptions{finetune_steps, learning_rate, 0.0};
}

std::string ExperimentConfig::fingerprint() const { return hash_string(config_to_text(*this)); }

std::vector<PairedTarget> derive_paired_targets(const ModelParams& pre, const ModelParams& post,
                                                const TaskRule& rule,
                                                std::span<const TokenSequence> eval_queries,
                                                int response_length) {
    if (!(pre.spec() == post.spec())) {
        throw ValidationError("pre and post models have different specs");
    }
    std::vector<PairedTarget> out;
    for (const auto& q : eval_queries) {
        const auto before = greedy_decode(pre, q, response_length);
        const auto after = greedy_decode(post, q, response_length);
        if (follows_rule(rule, q, before) && !follows_rule(rule, q, after)) {
            out.push_back(PairedTarget{static_cast<int>(out.size()), q, after, before});
        }
    }
    if (out.empty()) {
        throw ValidationError("no behavior-shift queries among " + std::to_string(eval_queries.size()) +
                              " eval queries; use a larger eval set");
    }
    return out;
}

std::vector<PairedTarget> derive_capability_targets(const ModelParams& model, const TaskRule& rule,
                                                    std::span<const TokenSequence> eval_queries,
                                                    int response_length) {
    std::vector<PairedTarget> out;
    for (const auto& q : eval_queries) {
        const auto decoded = greedy_decode(model, q, response_length);
        if (!follows_rule(rule, q, decoded)) {
            out.push_back(PairedTarget{static_cast<int>(out.size()), q,
                                       correct_response(rule, q, response_length), decoded});
        }
    }
    if (out.empty()) {
        throw ValidationError("model follows the rule on all " + std::to_string(eval_queries.size()) +
                              " eval queries; no capability targets");
    }
    return out;
}

std::vector<TokenSequence> held_out_queries(const ExperimentConfig& config, std::uint64_t seed,
                                            std::size_t count,
                                            const std::vector<TokenSequence>& exclude) {
    const TaskRule rule = config.rule();
    const int m = rule.modulus();
    std::set<TokenSequence> used(exclude.begin(), exclude.end());
    Rng rng(seed);
    std::vector<TokenSequence> out;
    out.reserve(count);
    const std::size_t max_draws = 100 * count + 1000;
    for (std::size_t draws = 0; out.size() < count; ++draws) {
        if (draws == max_draws) {
            throw ValidationError("cannot draw " + std::to_string(count) +
                                  " distinct held-out queries disjoint from the pool; "
                                  "raise query_max or lower the query counts");
        }
        const int len = rng.integer(config.query_min, config.query_max);
        TokenSequence q;
        for (int k = 0; k < len; ++k) {
            q.push_back(rng.integer(0, m - 1));
        }
        if (used.insert(q).second) {
            out.push_back(std::move(q));
        }
    }
    return out;
}

std::vector<Example> clean_corpus(const ExperimentConfig& config, std::uint64_t seed,
                                  int last_token_bound) {
    const TaskRule rule = config.rule();
    const auto last = token_range(0, last_token_bound);
    const auto queries = sample_queries(rule, seed, static_cast<std::size_t>(config.pretrain_size),
                                        config.query_min, config.query_max, last);
    std::vector<Example> out;
    out.reserve(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        out.push_back(Example{static_cast<int>(i), queries[i],
                              correct_response(rule, queries[i], config.response_length)});
    }
    return out;
}

ModelParams pretrain(const ExperimentConfig& config, std::span<const Example> corpus,
                     std::uint64_t seed) {
    TrainOptions opts;
    opts.ridge = config.pretrain_ridge;
    opts.init_seed = derive_seed(seed, kInitStream);
    if (config.model_spec().kind == ModelKind::Mlp) {
        opts.tol_grad = 1e-5;
    }
    return train_to_local_optimum(config.model_spec(), corpus, opts).params;
}

std::vector<double> method_scores(const ScoreTable& table, Method m, std::span<const Label> labels) {
    switch (m) {
        case Method::Prism:
            return column(table, ScoreColumn::Prism);
        case Method::Equal:
            return column(table, ScoreColumn::Equal);
        case Method::Unpaired:
            return column(table, ScoreColumn::Unpaired);
        case Method::Random:
            return column(table, ScoreColumn::Random);
        case Method::Oracle: {
            if (labels.size() != table.size()) {
                throw ValidationError("oracle method needs one label per example");
            }
            std::vector<double> out;
            out.reserve(labels.size());
            for (Label l : labels) {
                out.push_back(l == Label::Harmful ? 1.0 : 0.0);
            }
            return out;
        }
    }
    throw ValidationError("unknown method");
}

RepairContext prepare_repair(const ExperimentConfig& config, std::uint64_t run_seed) {
    config.validate();
    auto data = generate_pool(config.pool_config(run_seed));
    const auto corpus = clean_corpus(config, derive_seed(run_seed, kPretrainStream), config.rule().modulus());
    ModelParams pre = pretrain(config, corpus, run_seed);
    ModelParams post = fine_tune(pre, data.pool, config.finetune_options());

    auto exclude = pool_queries(data.pool);
    auto eval = held_out_queries(config, derive_seed(run_seed, kEvalStream),
                                 static_cast<std::size_t>(config.eval_queries), exclude);
    exclude.insert(exclude.end(), eval.begin(), eval.end());
    auto test = held_out_queries(config, derive_seed(run_seed, kTestStream),
                                 static_cast<std::size_t>(config.test_queries), exclude);

    auto targets = derive_paired_targets(pre, post, config.rule(), eval, config.response_length);
    auto scores = score_with_all_directions(config, post, data.pool, targets, data.labels,
                                            derive_seed(run_seed, kRandomStream));
    const std::string fp = fingerprint_targets(targets);
    return RepairContext{run_seed,          std::move(data), std::move(pre), std::move(post),
                         std::move(targets), fp,             std::move(test), std::move(scores)};
}

double retrain_metric(const ExperimentConfig& config, const RepairContext& ctx,
                      const std::vector<int>& keep_ids) {
    const auto retained = subset(ctx.data.pool, keep_ids);
    const ModelParams model = fine_tune(ctx.pre, retained, config.finetune_options());
    return wrong_rule_rate(model, config.rule(), ctx.test_queries, config.response_length);
}

RepairResult run_repair(const ExperimentConfig& config, std::uint64_t run_seed,
                        std::span<const Method> methods, double remove_fraction) {
    if (methods.empty()) {
        throw ValidationError("method list is empty");
    }
    if (!(remove_fraction >= 0.0 && remove_fraction < 1.0)) {
        throw ValidationError("remove_fraction must lie in [0, 1), got " + format_double(remove_fraction));
    }
    const RepairContext ctx = prepare_repair(config, run_seed);
    const auto& pool = ctx.data.pool;
    const auto& labels = ctx.data.labels;
    const auto rule = config.rule();
    const int len = config.response_length;

    RepairResult r;
    r.seed = run_seed;
    r.harmful_count = static_cast<int>(ctx.data.harmful_count());
    r.target_count = static_cast<int>(ctx.targets.size());
    r.targets_fingerprint = ctx.targets_fingerprint;
    r.config_fingerprint = config.fingerprint();
    r.metric_pre = wrong_rule_rate(ctx.pre, rule, ctx.test_queries, len);
    r.metric_mixed = wrong_rule_rate(ctx.post, rule, ctx.test_queries, len);

    std::vector<Example> pure = pool;
    for (auto& z : pure) {
        z.response = correct_response(rule, z.query, len);
    }
    r.metric_pure = wrong_rule_rate(fine_tune(ctx.pre, pure, config.finetune_options()), rule,
                                    ctx.test_queries, len);

    const auto id = ids(ctx.scores);
    for (Method m : methods) {
        const auto scores = method_scores(ctx.scores, m, labels);
        MethodOutcome o;
        o.method = m;
        o.auroc = safe_auroc(scores, labels);
        const auto keep = remove_fraction == 0.0 ? all_ids(pool.size())
                                                 : select_top(scores, id, remove_fraction, SelectMode::Remove);
        o.removed = static_cast<int>(pool.size() - keep.size());
        o.removed_harmful = r.harmful_count - count_harmful(labels, keep);
        o.metric_after = retrain_metric(config, ctx, keep);
        r.retained_ratio = static_cast<double>(keep.size()) / static_cast<double>(pool.size());
        r.methods.push_back(o);
    }
    return r;
}

std::vector<SweepCurve> sweep_filter_ratio(const ExperimentConfig& config, std::uint64_t run_seed,
                                           std::span<const Method> methods, std::span<const double> ratios) {
    if (ratios.empty()) {
        throw ValidationError("no retained ratios given");
    }
    if (methods.empty()) {
        throw ValidationError("method list is empty");
    }
    for (double v : ratios) {
        if (!(v > 0.0 && v <= 1.0)) {
            throw ValidationError("retained ratio must lie in (0, 1], got " + format_double(v));
        }
    }
    const RepairContext ctx = prepare_repair(config, run_seed);
    const auto& pool = ctx.data.pool;
    const double mixed = wrong_rule_rate(ctx.post, config.rule(), ctx.test_queries, config.response_length);
    std::vector<Example> pure = pool;
    for (auto& z : pure) {
        z.response = correct_response(config.rule(), z.query, config.response_length);
    }
    const double pure_metric = wrong_rule_rate(fine_tune(ctx.pre, pure, config.finetune_options()),
                                               config.rule(), ctx.test_queries, config.response_length);
    const auto id = ids(ctx.scores);
    std::vector<SweepCurve> out;
    for (Method method : methods) {
        SweepCurve c;
        c.seed = run_seed;
        c.method = method;
        c.metric_mixed = mixed;
        c.metric_pure = pure_metric;
        const auto scores = method_scores(ctx.scores, method, ctx.data.labels);
        for (double keep_ratio : ratios) {
            const auto keep = keep_ratio == 1.0 ? all_ids(pool.size())
                                                : select_top(scores, id, 1.0 - keep_ratio, SelectMode::Remove);
            c.points.push_back(SweepPoint{keep_ratio, retrain_metric(config, ctx, keep)});
        }
        out.push_back(std::move(c));
    }
    return out;
}

SweepCurve sweep_filter_ratio(const ExperimentConfig& config, std::uint64_t run_seed, Method method,
                              std::span<const double> ratios) {
    const Method one[] = {method};
    return std::move(sweep_filter_ratio(config, run_seed, one, ratios).front());
}

LabeledPool selection_pool(const ExperimentConfig& config, std::uint64_t seed) {
    const auto rule = config.rule();
    if (config.domain_size >= rule.modulus() && config.relevant_fraction > 0.0) {
        throw ValidationError("relevant examples need domain_size < vocab - 1");
    }
    const auto n = static_cast<std::size_t>(config.pool_size);
    const auto relevant =
        static_cast<std::size_t>(std::llround(config.relevant_fraction * static_cast<double>(n)));
    LabeledPool out;
    if (relevant < n) {
        PoolConfig pc = config.pool_config(derive_seed(seed, 1));
        pc.pool_size = static_cast<int>(n - relevant);
        out = generate_pool(pc);
    }
    if (relevant > 0) {
        const auto last = token_range(config.domain_size, rule.modulus());
        const auto queries = sample_queries(rule, derive_seed(seed, 2), relevant, config.query_min,
                                            config.query_max, last);
        for (const auto& q : queries) {
            out.pool.push_back(Example{0, q, correct_response(rule, q, config.response_length)});
            out.labels.push_back(Label::Benign);
        }
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    Rng rng(derive_seed(seed, 3));
    rng.shuffle(order);
    LabeledPool shuffled;
    for (std::size_t i = 0; i < n; ++i) {
        Example z = out.pool[order[i]];
        z.id = static_cast<int>(i);
        shuffled.pool.push_back(std::move(z));
        shuffled.labels.push_back(out.labels[order[i]]);
    }
    return shuffled;
}

SelectionResult run_budget_selection(const ExperimentConfig& config, std::uint64_t run_seed,
                                     std::span<const Method> methods, double budget) {
    config.validate();
    if (methods.empty()) {
        throw ValidationError("method list is empty");
    }
    if (std::find(methods.begin(), methods.end(), Method::Oracle) != methods.end()) {
        throw ValidationError("the oracle method ranks by harm labels and applies only to repair");
    }
    budget_count(budget, 1);
    const auto rule = config.rule();
    const int len = config.response_length;

    const auto corpus = clean_corpus(config, derive_seed(run_seed, kBaseStream), config.domain_size);
    const ModelParams base = pretrain(config, corpus, run_seed);

    const auto data = selection_pool(config, derive_seed(run_seed, kSelectPoolStream));

    auto exclude = pool_queries(data.pool);
    auto eval = held_out_queries(config, derive_seed(run_seed, kSelectEvalStream),
                                 static_cast<std::size_t>(config.eval_queries), exclude);
    exclude.insert(exclude.end(), eval.begin(), eval.end());
    const auto test = held_out_queries(config, derive_seed(run_seed, kSelectTestStream),
                                       static_cast<std::size_t>(config.test_queries), exclude);

    const auto targets = derive_capability_targets(base, rule, eval, len);
    const auto table = score_with_all_directions(config, base, data.pool, targets, data.labels,
                                                 derive_seed(run_seed, kSelectRandomStream));

    SelectionResult r;
    r.seed = run_seed;
    r.target_count = static_cast<int>(targets.size());
    r.targets_fingerprint = fingerprint_targets(targets);
    r.accuracy_base = 1.0 - wrong_rule_rate(base, rule, test, len);
    r.accuracy_full =
        1.0 - wrong_rule_rate(fine_tune(base, data.pool, config.finetune_options()), rule, test, len);
    const auto id = ids(table);
    for (Method m : methods) {
        const auto scores = method_scores(table, m, data.labels);
        const auto keep = select_top(scores, id, budget, SelectMode::Keep);
        const ModelParams tuned = fine_tune(base, subset(data.pool, keep), config.finetune_options());
        SelectionOutcome o;
        o.method = m;
        o.accuracy = 1.0 - wrong_rule_rate(tuned, rule, test, len);
        o.selected = static_cast<int>(keep.size());
        o.selected_harmful = count_harmful(data.labels, keep);
        r.methods.push_back(o);
    }
    return r;
}

nlohmann::json repair_result_to_json(const RepairResult& r) {
    nlohmann::json j;
    j["seed"] = r.seed;
    j["orientation"] = "positive=post-finetune response, negative=pre-finetune response";
    j["harmful_count"] = r.harmful_count;
    j["target_count"] = r.target_count;
    j["targets_fingerprint"] = r.targets_fingerprint;
    j["config_fingerprint"] = r.config_fingerprint;
    j["metric_pre"] = r.metric_pre;
    j["metric_mixed"] = r.metric_mixed;
    j["metric_pure"] = r.metric_pure;
    j["retained_ratio"] = r.retained_ratio;
    nlohmann::json ms = nlohmann::json::array();
    for (const auto& o : r.methods) {
        ms.push_back({{"method", to_string(o.method)},
                      {"auroc", o.auroc},
                      {"metric_after", o.metric_after},
                      {"removed", o.removed},
                      {"removed_harmful", o.removed_harmful}});
    }
    j["methods"] = ms;
    return j;
}

nlohmann::json sweep_curve_to_json(const SweepCurve& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["method"] = to_string(c.method);
    j["metric_mixed"] = c.metric_mixed;
    j["metric_pure"] = c.metric_pure;
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : c.points) {
        pts.push_back({{"retained_ratio", p.retained_ratio}, {"metric", p.metric}});
    }
    j["points"] = pts;
    return j;
}

nlohmann::json selection_result_to_json(const SelectionResult& r) {
    nlohmann::json j;
    j["seed"] = r.seed;
    j["orientation"] = "positive=rule-correct response, negative=current decode";
    j["target_count"] = r.target_count;
    j["targets_fingerprint"] = r.targets_fingerprint;
    j["accuracy_base"] = r.accuracy_base;
    j["accuracy_full"] = r.accuracy_full;
    nlohmann::json ms = nlohmann::json::array();
    for (const auto& o : r.methods) {
        ms.push_back({{"method", to_string(o.method)},
                      {"accuracy", o.accuracy},
                      {"selected", o.selected},
                      {"selected_harmful", o.selected_harmful}});
    }
    j["methods"] = ms;
    return j;
}

}  // namespace prism
