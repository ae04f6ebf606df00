#include "prism/corpus_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace prism {

using nlohmann::json;

namespace {

TokenSequence tokens_from(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j.at(key).is_array()) {
        throw ValidationError(where + ": missing token array '" + key + "'");
    }
    TokenSequence out;
    for (const auto& t : j.at(key)) {
        if (!t.is_number_integer()) {
            throw ValidationError(where + ": non-integer token in '" + key + "'");
        }
        out.push_back(t.get<int>());
    }
    return out;
}

template <class F>
void for_each_line(const std::string& path, F&& f) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open " + path);
    }
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const std::string where = path + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ValidationError(where + ": " + e.what());
        }
        if (!j.contains("id") || !j.at("id").is_number_integer()) {
            throw ValidationError(where + ": missing integer 'id'");
        }
        f(j, where);
    }
}

}  // namespace

void write_text_file(const std::string& path, const std::string& content) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
        if (ec) {
            throw Error("cannot create directory " + p.parent_path().string() + ": " + ec.message());
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open " + path + " for writing");
    }
    out << content;
    if (!out) {
        throw Error("write failed: " + path);
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<Example> read_examples(const std::string& path) {
    std::vector<Example> pool;
    for_each_line(path, [&](const json& j, const std::string& where) {
        pool.push_back(Example{j.at("id").get<int>(), tokens_from(j, "query", where),
                               tokens_from(j, "response", where)});
    });
    validate_pool(pool);
    return pool;
}

void write_examples(const std::string& path, const std::vector<Example>& pool) {
    std::string out;
    for (const auto& z : pool) {
        json j;
        j["id"] = z.id;
        j["query"] = z.query;
        j["response"] = z.response;
        out += j.dump() + "\n";
    }
    write_text_file(path, out);
}

std::vector<PairedTarget> read_targets(const std::string& path) {
    std::vector<PairedTarget> targets;
    for_each_line(path, [&](const json& j, const std::string& where) {
        PairedTarget t{j.at("id").get<int>(), tokens_from(j, "query", where),
                       tokens_from(j, "positive", where), tokens_from(j, "negative", where)};
        if (t.positive.empty() || t.negative.empty()) {
            throw ValidationError(where + ": positive and negative responses must be non-empty");
        }
        targets.push_back(std::move(t));
    });
    return targets;
}

void write_targets(const std::string& path, const std::vector<PairedTarget>& targets) {
    std::string out;
    for (const auto& t : targets) {
        json j;
        j["id"] = t.id;
        j["query"] = t.query;
        j["positive"] = t.positive;
        j["negative"] = t.negative;
        out += j.dump() + "\n";
    }
    write_text_file(path, out);
}

void validate_pool(const std::vector<Example>& pool) {
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].id != static_cast<int>(i)) {
            throw ValidationError("pool ids must be dense 0..n-1 in order; found id " +
                                  std::to_string(pool[i].id) + " at position " + std::to_string(i));
        }
        if (pool[i].response.empty()) {
            throw ValidationError("example " + std::to_string(i) + " has an empty response");
        }
    }
}

json spec_to_json(const ModelSpec& spec) {
    json j;
    j["variant"] = to_string(spec.kind);
    j["vocab_size"] = spec.vocab_size;
    if (spec.kind == ModelKind::Mlp) {
        j["window"] = spec.window;
        j["embed_dim"] = spec.embed_dim;
        j["hidden_dim"] = spec.hidden_dim;
    }
    j["parameter_count"] = spec.parameter_count();
    return j;
}

ModelSpec spec_from_json(const json& j) {
    try {
        const ModelKind kind = model_kind_from_string(j.at("variant").get<std::string>());
        const int V = j.at("vocab_size").get<int>();
        ModelSpec spec = kind == ModelKind::Tabular
                             ? ModelSpec::tabular(V)
                             : ModelSpec::mlp(V, j.at("window").get<int>(), j.at("embed_dim").get<int>(),
                                              j.at("hidden_dim").get<int>());
        if (j.contains("parameter_count") &&
            j.at("parameter_count").get<std::size_t>() != spec.parameter_count()) {
            throw ValidationError("checkpoint parameter_count disagrees with its architecture");
        }
        return spec;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed model spec: ") + e.what());
    }
}

json checkpoint_to_json(const ModelParams& model) {
    json j;
    j["spec"] = spec_to_json(model.spec());
    std::vector<double> theta(model.theta().data(), model.theta().data() + model.theta().size());
    j["theta"] = theta;
    return j;
}

ModelParams checkpoint_from_json(const json& j) {
    if (!j.contains("spec") || !j.contains("theta")) {
        throw ValidationError("checkpoint must contain 'spec' and 'theta'");
    }
    const ModelSpec spec = spec_from_json(j.at("spec"));
    const auto theta = j.at("theta").get<std::vector<double>>();
    return ModelParams(spec, Eigen::Map<const Vector>(theta.data(), static_cast<Eigen::Index>(theta.size())));
}

void write_checkpoint(const std::string& path, const ModelParams& model) {
    write_text_file(path, checkpoint_to_json(model).dump() + "\n");
}

ModelParams read_checkpoint(const std::string& path) {
    try {
        return checkpoint_from_json(json::parse(read_text_file(path)));
    } catch (const json::parse_error& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

}  // namespace prism
