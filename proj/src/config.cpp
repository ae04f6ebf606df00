#include "prism/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "prism/util.hpp"

namespace prism {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) {
            throw ValidationError("empty list element in '" + s + "'");
        }
        out.push_back(item);
    }
    if (out.empty()) {
        throw ValidationError("empty list");
    }
    return out;
}

long long parse_integer(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used == v.size()) {
            return x;
        }
    } catch (const std::logic_error&) {
    }
    throw ValidationError("key '" + key + "': expected an integer, got '" + v + "'");
}

int parse_int(const std::string& key, const std::string& v) {
    const long long x = parse_integer(key, v);
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
        throw ValidationError("key '" + key + "': value out of range");
    }
    return static_cast<int>(x);
}

std::uint64_t parse_seed(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        if (!v.empty() && v[0] != '-') {
            const unsigned long long x = std::stoull(v, &used);
            if (used == v.size()) {
                return x;
            }
        }
    } catch (const std::logic_error&) {
    }
    throw ValidationError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used == v.size() && std::isfinite(x)) {
            return x;
        }
    } catch (const std::logic_error&) {
    }
    throw ValidationError("key '" + key + "': expected a finite number, got '" + v + "'");
}

template <class T, class F>
std::string join(const std::vector<T>& v, F f) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out += (i ? "," : "") + f(v[i]);
    }
    return out;
}

ConfigKey int_key(const std::string& name, const std::string& help, int ExperimentConfig::*field) {
    return {name, help,
            [name, field](ExperimentConfig& c, const std::string& v) { c.*field = parse_int(name, v); },
            [field](const ExperimentConfig& c) { return std::to_string(c.*field); }};
}

ConfigKey double_key(const std::string& name, const std::string& help, double ExperimentConfig::*field) {
    return {name, help,
            [name, field](ExperimentConfig& c, const std::string& v) { c.*field = parse_double(name, v); },
            [field](const ExperimentConfig& c) { return format_double(c.*field); }};
}

std::vector<ConfigKey> build_keys() {
    using C = ExperimentConfig;
    std::vector<ConfigKey> k;
    k.push_back({"seed", "first run seed",
                 [](C& c, const std::string& v) { c.seed = parse_seed("seed", v); },
                 [](const C& c) { return std::to_string(c.seed); }});
    k.push_back(int_key("seeds", "number of consecutive seeds to run", &C::seeds));
    k.push_back(int_key("vocab", "vocabulary size V including BOS", &C::vocab));
    k.push_back(int_key("harmful_step", "successor step of the harmful rule", &C::harmful_step));
    k.push_back(int_key("pool_size", "candidate pool size n", &C::pool_size));
    k.push_back(double_key("harmful_ratio", "fraction of harmful examples in the pool", &C::harmful_ratio));
    k.push_back({"harmful_ratios", "harmful ratios visited by repair",
                 [](C& c, const std::string& v) {
                     std::vector<double> out;
                     for (const auto& s : split_list(v)) {
                         out.push_back(parse_double("harmful_ratios", s));
                     }
                     c.harmful_ratios = out;
                 },
                 [](const C& c) { return join(c.harmful_ratios, [](double x) { return format_double(x); }); }});
    k.push_back(int_key("query_min", "minimum query length", &C::query_min));
    k.push_back(int_key("query_max", "maximum query length", &C::query_max));
    k.push_back(int_key("response_length", "response length", &C::response_length));
    k.push_back(int_key("domain_size", "pool queries end in a token below this bound", &C::domain_size));
    k.push_back({"model", "tabular or mlp",
                 [](C& c, const std::string& v) {
                     model_kind_from_string(v);
                     c.model = v;
                 },
                 [](const C& c) { return c.model; }});
    k.push_back(int_key("window", "mlp context window", &C::window));
    k.push_back(int_key("embed_dim", "mlp embedding width", &C::embed_dim));
    k.push_back(int_key("hidden_dim", "mlp hidden width", &C::hidden_dim));
    k.push_back(int_key("pretrain_size", "clean pretraining corpus size", &C::pretrain_size));
    k.push_back(double_key("pretrain_ridge", "ridge of the pretraining objective", &C::pretrain_ridge));
    k.push_back(int_key("finetune_steps", "gradient steps of every fine-tune and retrain", &C::finetune_steps));
    k.push_back(double_key("learning_rate", "fine-tune step size", &C::learning_rate));
    k.push_back(int_key("eval_queries", "held-out queries used to derive paired targets", &C::eval_queries));
    k.push_back(int_key("test_queries", "held-out queries used for the metric", &C::test_queries));
    k.push_back({"curvature", "exact, fisher or ekfac",
                 [](C& c, const std::string& v) { c.curvature = curvature_kind_from_string(v); },
                 [](const C& c) { return to_string(c.curvature); }});
    k.push_back(double_key("damping", "damping relative to the mean curvature eigenvalue", &C::damping));
    k.push_back(double_key("ridge", "ridge folded into the exact Hessian", &C::ridge));
    k.push_back(double_key("remove_fraction", "fraction removed by repair", &C::remove_fraction));
    k.push_back(double_key("budget", "fraction kept by selection", &C::budget));
    k.push_back(double_key("relevant_fraction", "share of the selection pool outside the base domain",
                           &C::relevant_fraction));
    k.push_back({"ratios", "retained ratios for the sweep",
                 [](C& c, const std::string& v) {
                     std::vector<double> out;
                     for (const auto& s : split_list(v)) {
                         out.push_back(parse_double("ratios", s));
                     }
                     c.ratios = out;
                 },
                 [](const C& c) { return join(c.ratios, [](double x) { return format_double(x); }); }});
    k.push_back({"methods", "comma-separated scoring methods",
                 [](C& c, const std::string& v) {
                     std::vector<Method> out;
                     for (const auto& s : split_list(v)) {
                         out.push_back(method_from_string(s));
                     }
                     c.methods = out;
                 },
                 [](const C& c) { return join(c.methods, [](Method m) { return to_string(m); }); }});
    k.push_back({"sweep_method", "method ranked by the sweep",
                 [](C& c, const std::string& v) { c.sweep_method = method_from_string(v); },
                 [](const C& c) { return to_string(c.sweep_method); }});
    return k;
}

const ConfigKey& find_key(const std::string& name) {
    for (const auto& k : config_keys()) {
        if (k.name == name) {
            return k;
        }
    }
    throw ValidationError("unknown config key '" + name + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = build_keys();
    return keys;
}

void apply_override(ExperimentConfig& config, const std::string& key, const std::string& value) {
    find_key(key).set(config, trim(value));
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ValidationError("override '" + assignment + "' is not key=value");
    }
    apply_override(config, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    ExperimentConfig config;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        const std::string where = origin + ":" + std::to_string(lineno) + ": ";
        if (eq == std::string::npos) {
            throw ValidationError(where + "expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        if (!seen.insert(key).second) {
            throw ValidationError(where + "key '" + key + "' given twice");
        }
        try {
            apply_override(config, key, line.substr(eq + 1));
        } catch (const ValidationError& e) {
            throw ValidationError(where + e.what());
        }
    }
    return config;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open config file: " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

std::string config_to_text(const ExperimentConfig& config) {
    std::string out;
    for (const auto& k : config_keys()) {
        out += k.name + " = " + k.get(config) + "\n";
    }
    return out;
}

nlohmann::json config_to_json(const ExperimentConfig& config) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& k : config_keys()) {
        j[k.name] = k.get(config);
    }
    return j;
}

}  // namespace prism
