#include "prism/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "prism/config.hpp"
#include "prism/corpus_io.hpp"
#include "prism/experiment.hpp"
#include "prism/report.hpp"
#include "prism/theory.hpp"
#include "prism/util.hpp"

namespace prism {

namespace {

namespace fs = std::filesystem;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    int threads = 0;
    std::vector<std::string> sets;
    std::map<std::string, std::string> key_values;
    std::vector<std::pair<std::string, CLI::Option*>> key_options;
};

std::string flag_name(const std::string& key) {
    std::string s = key;
    std::replace(s.begin(), s.end(), '_', '-');
    return "--" + s;
}

std::string default_out_dir() {
    const char* root = std::getenv(kOutputRootEnv);
    return root != nullptr && *root != '\0' ? std::string(root) : std::string("prism_out");
}

void add_common(CLI::App* sub, CommonArgs& a) {
    sub->add_option("-c,--config", a.config_path, "config file (key = value lines)");
    sub->add_option("-o,--out", a.out_dir,
                    std::string("output directory (default: $") + kOutputRootEnv + " or ./prism_out)");
    sub->add_option("-j,--threads", a.threads, "worker threads; 0 = available cores, 1 = sequential")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--set", a.sets, "override one config key as key=value (repeatable)");
    for (const auto& k : config_keys()) {
        auto* opt = sub->add_option(flag_name(k.name), a.key_values[k.name], k.help)->group("Config keys");
        a.key_options.emplace_back(k.name, opt);
    }
}

ExperimentConfig resolve_config(const CommonArgs& a) {
    ExperimentConfig c = a.config_path.empty() ? ExperimentConfig{} : load_config(a.config_path);
    for (const auto& [name, opt] : a.key_options) {
        if (opt->count() > 0) {
            apply_override(c, name, a.key_values.at(name));
        }
    }
    for (const auto& s : a.sets) {
        apply_override(c, s);
    }
    c.validate();
    return c;
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

// Tracks every file written under the output directory.
class Artifacts {
public:
    explicit Artifacts(std::string root) : root_(std::move(root)) {}

    const std::string& root() const { return root_; }

    void text(const std::string& rel, const std::string& content) {
        write_text_file((fs::path(root_) / rel).string(), content);
        files_.push_back(rel);
    }
    void json(const std::string& rel, const nlohmann::json& j) { text(rel, dump(j)); }
    void adopt(const std::vector<std::string>& rel) { files_.insert(files_.end(), rel.begin(), rel.end()); }

    void manifest(const std::string& command, const ExperimentConfig* config, nlohmann::json extra) {
        std::vector<std::string> sorted = files_;
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        nlohmann::json files = nlohmann::json::array();
        for (const auto& f : sorted) {
            files.push_back({{"path", f}, {"hash", hash_file((fs::path(root_) / f).string())}});
        }
        nlohmann::json m = std::move(extra);
        m["command"] = command;
        m["files"] = files;
        if (config != nullptr) {
            m["config"] = config_to_json(*config);
            m["config_fingerprint"] = config->fingerprint();
        }
        write_text_file((fs::path(root_) / "manifest.json").string(), dump(m));
    }

private:
    std::string root_;
    std::vector<std::string> files_;
};

std::string labels_csv(const std::vector<Label>& labels) {
    std::string s = "id,label\n";
    for (std::size_t i = 0; i < labels.size(); ++i) {
        s += std::to_string(i) + (labels[i] == Label::Harmful ? ",harmful\n" : ",benign\n");
    }
    return s;
}

std::string queries_jsonl(const std::vector<TokenSequence>& qs) {
    std::string s;
    for (const auto& q : qs) {
        s += nlohmann::json{{"query", q}}.dump() + "\n";
    }
    return s;
}

// Mean metric (and AUROC when present) per method and x, one line each.
void print_rollup(const ResultSet& set, std::ostream& out) {
    const auto roll = results_rollup(set);
    out << set.name << " (" << set.x_label << "; " << set.metric_label << ")\n";
    for (const auto& m : set.methods) {
        for (const auto& p : roll.at("methods").at(m)) {
            out << "  " << std::left << std::setw(10) << m << " x=" << format_double(p.at("x").get<double>())
                << std::fixed << std::setprecision(4) << " metric=" << p.at("mean_metric").get<double>();
            if (!p.at("mean_auroc").is_null()) {
                out << " auroc=" << p.at("mean_auroc").get<double>();
            }
            out << std::defaultfloat << std::setprecision(6) << " (n=" << p.at("n").get<int>() << ")\n";
        }
    }
}

int cmd_gen(const ExperimentConfig& c, Artifacts& art, std::ostream& out) {
    const auto data = generate_pool(c.pool_config(c.seed));
    write_examples((fs::path(art.root()) / "data/pool.jsonl").string(), data.pool);
    art.adopt({"data/pool.jsonl"});
    art.text("data/labels.csv", labels_csv(data.labels));
    art.manifest("gen", &c, {{"harmful_count", data.harmful_count()}});
    out << "gen: " << data.pool.size() << " examples (" << data.harmful_count() << " harmful) -> " << art.root()
        << "\n";
    return kExitOk;
}

int cmd_train(const ExperimentConfig& c, Artifacts& art, std::ostream& out) {
    const RepairContext ctx = prepare_repair(c, c.seed);
    art.json("models/pre.json", checkpoint_to_json(ctx.pre));
    art.json("models/post.json", checkpoint_to_json(ctx.post));
    std::string targets;
    for (const auto& t : ctx.targets) {
        targets += nlohmann::json{{"id", t.id}, {"query", t.query}, {"positive", t.positive}, {"negative", t.negative}}
                       .dump() +
                   "\n";
    }
    art.text("data/targets.jsonl", targets);
    art.text("data/test_queries.jsonl", queries_jsonl(ctx.test_queries));
    const double pre = wrong_rule_rate(ctx.pre, c.rule(), ctx.test_queries, c.response_length);
    const double post = wrong_rule_rate(ctx.post, c.rule(), ctx.test_queries, c.response_length);
    art.manifest("train", &c,
                 {{"orientation", "positive=post-finetune response, negative=pre-finetune response"},
                  {"targets_fingerprint", ctx.targets_fingerprint},
                  {"target_count", ctx.targets.size()},
                  {"metric_pre", pre},
                  {"metric_post", post}});
    out << "train: wrong-rule rate pre " << format_double(pre) << ", post " << format_double(post) << ", "
        << ctx.targets.size() << " paired targets\n";
    return kExitOk;
}

int cmd_score(const ExperimentConfig& c, Artifacts& art, std::ostream& out) {
    const RepairContext ctx = prepare_repair(c, c.seed);
    art.text("results/scores.csv", score_table_csv(ctx.scores));
    nlohmann::json meta = ctx.scores.metadata;
    meta["auroc"] = {{"prism", auroc(ctx.scores, ScoreColumn::Prism)},
                     {"equal", auroc(ctx.scores, ScoreColumn::Equal)},
                     {"unpaired", auroc(ctx.scores, ScoreColumn::Unpaired)},
                     {"random", auroc(ctx.scores, ScoreColumn::Random)}};
    art.json("results/scores.json", meta);
    const auto keep = select_top(ctx.scores, c.budget, SelectMode::Keep, ScoreColumn::Prism);
    art.json("results/selection.json", selection_manifest(SelectMode::Keep, c.budget, keep));
    art.manifest("score", &c,
                 {{"orientation", "positive=post-finetune response, negative=pre-finetune response"},
                  {"targets_fingerprint", ctx.targets_fingerprint}});
    out << "score: " << ctx.scores.size() << " examples, AUROC prism " << format_double(meta["auroc"]["prism"])
        << ", equal " << format_double(meta["auroc"]["equal"]) << "\n";
    return kExitOk;
}

int cmd_select(const ExperimentConfig& c, int threads, Artifacts& art, std::ostream& out) {
    const auto results = for_each_seed<SelectionResult>(
        c, threads, [&](std::uint64_t s) { return run_budget_selection(c, s, c.methods, c.budget); });
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : results) {
        runs.push_back(selection_result_to_json(r));
    }
    art.json("results/selection_runs.json", runs);
    const auto set = selection_result_set(c.budget, results);
    art.adopt(emit_report(set, art.root()));
    art.manifest("select", &c, {{"orientation", "positive=rule-correct response, negative=current decode"}});
    print_rollup(set, out);
    return kExitOk;
}

int cmd_repair(const ExperimentConfig& c, int threads, Artifacts& art, std::ostream& out) {
    std::vector<std::vector<RepairResult>> per_ratio;
    nlohmann::json runs = nlohmann::json::array();
    for (double ratio : c.harmful_ratios) {
        ExperimentConfig rc = c;
        rc.harmful_ratio = ratio;
        per_ratio.push_back(for_each_seed<RepairResult>(
            rc, threads, [&](std::uint64_t s) { return run_repair(rc, s, rc.methods, rc.remove_fraction); }));
        for (const auto& r : per_ratio.back()) {
            auto j = repair_result_to_json(r);
            j["harmful_ratio"] = ratio;
            runs.push_back(j);
        }
    }
    art.json("results/repair_runs.json", runs);
    const auto set = repair_result_set(c.harmful_ratios, per_ratio);
    art.adopt(emit_report(set, art.root()));
    art.manifest("repair", &c, {{"orientation", "positive=post-finetune response, negative=pre-finetune response"}});
    print_rollup(set, out);
    return kExitOk;
}

int cmd_sweep(const ExperimentConfig& c, int threads, Artifacts& art, std::ostream& out) {
    std::vector<Method> methods{c.sweep_method};
    if (c.sweep_method != Method::Oracle) {
        methods.push_back(Method::Oracle);
    }
    const auto per_seed = for_each_seed<std::vector<SweepCurve>>(
        c, threads, [&](std::uint64_t s) { return sweep_filter_ratio(c, s, methods, c.ratios); });
    std::vector<SweepCurve> curves;
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& seed_curves : per_seed) {
        for (const auto& cv : seed_curves) {
            runs.push_back(sweep_curve_to_json(cv));
            curves.push_back(cv);
        }
    }
    art.json("results/sweep_runs.json", runs);
    const auto set = sweep_result_set(curves);
    art.adopt(emit_report(set, art.root()));
    art.manifest("sweep", &c, {{"orientation", "positive=post-finetune response, negative=pre-finetune response"}});
    print_rollup(set, out);
    return kExitOk;
}

int cmd_verify(const ExperimentConfig& c, int threads, Artifacts& art, std::ostream& out, std::ostream& err) {
    VerifyOptions o;
    o.seed = c.seed;
    o.threads = threads;
    const auto sections = run_verify_suite(o);
    std::size_t failed = 0;
    for (const auto& s : sections) {
        art.json("verify/" + s.name + ".json", suite_to_json(s));
        failed += s.passed() ? 0 : 1;
    }
    const std::string md = suite_markdown(sections);
    art.text("verify/summary.md", md);
    art.manifest("verify", &c, {{"failed_sections", failed}});
    out << md;
    if (failed > 0) {
        err << "verify: " << failed << " check section(s) failed\n";
        return kExitRuntime;
    }
    return kExitOk;
}

ResultSet labelled(ResultSet set, const std::string& name) {
    set.name = name;
    if (name == "repair") {
        set.x_label = "harmful ratio";
        set.metric_label = "wrong-rule rate after repair";
    } else if (name == "sweep") {
        set.x_label = "retained ratio";
        set.metric_label = "wrong-rule rate after repair";
    } else if (name == "selection") {
        set.x_label = "budget";
        set.metric_label = "held-out accuracy";
    } else {
        set.x_label = "x";
        set.metric_label = "metric";
    }
    return set;
}

int cmd_report(const std::vector<std::string>& inputs, Artifacts& art, std::ostream& out) {
    std::vector<std::string> paths = inputs;
    if (paths.empty()) {
        const fs::path dir = fs::path(art.root()) / "results";
        if (fs::is_directory(dir)) {
            for (const auto& e : fs::directory_iterator(dir)) {
                const std::string stem = e.path().stem().string();
                if (e.path().extension() == ".csv" && (stem == "repair" || stem == "sweep" || stem == "selection")) {
                    paths.push_back(e.path().string());
                }
            }
        }
        std::sort(paths.begin(), paths.end());
    }
    if (paths.empty()) {
        throw ValidationError("report: no result CSVs given and none found under " + (fs::path(art.root()) / "results").string());
    }
    for (const auto& p : paths) {
        const auto set = labelled(parse_results_csv(read_text_file(p)), fs::path(p).stem().string());
        art.adopt(emit_report(set, art.root()));
        print_rollup(set, out);
    }
    art.manifest("report", nullptr, {{"inputs", paths}});
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Preference-aware influence scoring for data selection and repair"};
    app.name("prism");
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "help for every subcommand");

    struct Sub {
        const char* name;
        const char* help;
    };
    const Sub subs[] = {
        {"gen", "generate a labeled candidate pool"},
        {"train", "pretrain, fine-tune on the pool and derive paired targets"},
        {"score", "score the pool with every target direction"},
        {"select", "budgeted selection protocol over seeds"},
        {"repair", "rank-filter-retrain repair over harmful ratios and seeds"},
        {"sweep", "filter-ratio sweep over retained ratios and seeds"},
        {"verify", "run the numerical theory checks"},
        {"report", "rebuild JSON roll-ups and SVG plots from result CSVs"},
    };
    std::map<std::string, CommonArgs> common;
    std::map<std::string, CLI::App*> apps;
    std::vector<std::string> report_inputs;
    for (const auto& s : subs) {
        auto* sub = app.add_subcommand(s.name, s.help);
        add_common(sub, common[s.name]);
        apps[s.name] = sub;
    }
    apps["report"]->add_option("inputs", report_inputs, "result CSV files (default: <out>/results/*.csv)");

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        for (const auto& [name, sub] : apps) {
            if (!sub->parsed()) {
                continue;
            }
            const CommonArgs& a = common.at(name);
            Artifacts art(a.out_dir.empty() ? default_out_dir() : a.out_dir);
            const int threads = resolve_threads(a.threads);
            if (name == "report") {
                return cmd_report(report_inputs, art, out);
            }
            const ExperimentConfig c = resolve_config(a);
            if (name == "gen") {
                return cmd_gen(c, art, out);
            }
            if (name == "train") {
                return cmd_train(c, art, out);
            }
            if (name == "score") {
                return cmd_score(c, art, out);
            }
            if (name == "select") {
                return cmd_select(c, threads, art, out);
            }
            if (name == "repair") {
                return cmd_repair(c, threads, art, out);
            }
            if (name == "sweep") {
                return cmd_sweep(c, threads, art, out);
            }
            return cmd_verify(c, threads, art, out, err);
        }
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitValidation;
}

}  // namespace prism
