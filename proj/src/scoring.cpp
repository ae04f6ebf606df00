#include "prism/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "prism/util.hpp"

namespace prism {

std::string to_string(ScoreColumn c) {
    switch (c) {
        case ScoreColumn::Prism:
            return "prism";
        case ScoreColumn::Equal:
            return "equal";
        case ScoreColumn::Unpaired:
            return "unpaired";
        case ScoreColumn::Random:
            return "random";
    }
    return "unknown";
}

ScoreColumn score_column_from_string(const std::string& s) {
    if (s == "prism") {
        return ScoreColumn::Prism;
    }
    if (s == "equal") {
        return ScoreColumn::Equal;
    }
    if (s == "unpaired") {
        return ScoreColumn::Unpaired;
    }
    if (s == "random") {
        return ScoreColumn::Random;
    }
    throw ValidationError("unknown score column '" + s + "'");
}

std::vector<double> column(const ScoreTable& table, ScoreColumn c) {
    std::vector<double> out;
    out.reserve(table.rows.size());
    for (const auto& r : table.rows) {
        switch (c) {
            case ScoreColumn::Prism:
                out.push_back(r.h_pi);
                break;
            case ScoreColumn::Equal:
                out.push_back(r.h_0);
                break;
            case ScoreColumn::Unpaired:
                out.push_back(r.h_unpaired);
                break;
            case ScoreColumn::Random:
                out.push_back(r.h_random);
                break;
        }
    }
    return out;
}

std::vector<int> ids(const ScoreTable& table) {
    std::vector<int> out;
    out.reserve(table.rows.size());
    for (const auto& r : table.rows) {
        out.push_back(r.example_id);
    }
    return out;
}

std::vector<Label> labels(const ScoreTable& table) {
    std::vector<Label> out;
    out.reserve(table.rows.size());
    for (const auto& r : table.rows) {
        if (!r.label) {
            throw ValidationError("score table row " + std::to_string(r.example_id) + " has no label");
        }
        out.push_back(*r.label);
    }
    return out;
}

ScoreTable score_gradients(const Matrix& example_grads, const CurvatureOperator& curvature,
                           std::span<const TargetDirection> directions) {
    const auto n = example_grads.rows();
    ScoreTable table;
    table.rows.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        table.rows[static_cast<std::size_t>(i)].example_id = static_cast<int>(i);
    }
    nlohmann::json norms = nlohmann::json::object();
    for (const auto& d : directions) {
        if (d.vector.size() != example_grads.cols()) {
            throw ValidationError("direction length " + std::to_string(d.vector.size()) +
                                  " does not match gradient length " +
                                  std::to_string(example_grads.cols()));
        }
        const Vector pre = curvature.inverse_apply(d.vector);
        const Vector scores = example_grads * pre;
        for (Eigen::Index i = 0; i < n; ++i) {
            auto& row = table.rows[static_cast<std::size_t>(i)];
            switch (d.kind) {
                case DirectionKind::PrismWeighted:
                    row.h_pi = scores[i];
                    break;
                case DirectionKind::EqualAggregation:
                    row.h_0 = scores[i];
                    break;
                case DirectionKind::UnpairedPositive:
                    row.h_unpaired = scores[i];
                    break;
            }
        }
        norms[to_string(d.kind)] = d.norm();
    }
    table.metadata["curvature_kind"] = to_string(curvature.kind());
    table.metadata["damping"] = curvature.damping();
    table.metadata["curvature_fitted_on"] = curvature.fitted_on();
    table.metadata["direction_norms"] = norms;
    assign_ranks(table);
    return table;
}

ScoreTable score_pool(const ModelParams& model, std::span<const Example> pool,
                      const CurvatureOperator& curvature, std::span<const TargetDirection> directions,
                      std::span<const Label> labels) {
    if (pool.empty()) {
        throw ValidationError("cannot score an empty pool");
    }
    if (!labels.empty() && labels.size() != pool.size()) {
        throw ValidationError("label count does not match pool size");
    }
    if (curvature.dimension() != model.size()) {
        throw ValidationError("curvature dimension does not match the model");
    }
    Matrix grads(static_cast<Eigen::Index>(pool.size()), static_cast<Eigen::Index>(model.size()));
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].id != static_cast<int>(i)) {
            throw ValidationError("pool ids must be dense 0..n-1 in order");
        }
        grads.row(static_cast<Eigen::Index>(i)) = sft_loss_and_grad(model, pool[i]).grad.transpose();
    }
    ScoreTable table = score_gradients(grads, curvature, directions);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        table.rows[i].label = labels[i];
    }
    table.metadata["model_fingerprint"] = model.fingerprint();
    return table;
}

void assign_ranks(ScoreTable& table) {
    const auto scores = column(table, ScoreColumn::Prism);
    if (std::any_of(scores.begin(), scores.end(), [](double s) { return std::isnan(s); })) {
        for (auto& r : table.rows) {
            r.rank_pi = -1;
        }
        return;
    }
    const auto id = ids(table);
    const auto order = rank_order(scores, id);
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        table.rows[order[pos]].rank_pi = static_cast<int>(pos);
    }
}

std::size_t budget_count(double fraction, std::size_t n) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ValidationError("budget fraction must lie in (0, 1], got " + format_double(fraction));
    }
    if (n == 0) {
        throw ValidationError("cannot select from an empty table");
    }
    const auto m = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    return std::clamp<std::size_t>(m, 1, n);
}

std::vector<int> select_top(std::span<const double> scores, std::span<const int> id, double fraction,
                            SelectMode mode) {
    const std::size_t m = budget_count(fraction, scores.size());
    const auto order = rank_order(scores, id);
    std::vector<int> out;
    if (mode == SelectMode::Keep) {
        for (std::size_t k = 0; k < m; ++k) {
            out.push_back(id[order[k]]);
        }
        return out;
    }
    for (std::size_t k = m; k < order.size(); ++k) {
        out.push_back(id[order[k]]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> select_top(const ScoreTable& table, double fraction, SelectMode mode, ScoreColumn c) {
    const auto scores = column(table, c);
    if (std::any_of(scores.begin(), scores.end(), [](double s) { return std::isnan(s); })) {
        throw ValidationError("score column '" + to_string(c) + "' is missing");
    }
    return select_top(scores, ids(table), fraction, mode);
}

double auroc(std::span<const double> scores, std::span<const Label> labels) {
    if (scores.size() != labels.size()) {
        throw ValidationError("auroc: scores and labels differ in length");
    }
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Mann-Whitney U with mid-ranks for ties.
    double rank_sum = 0.0;
    std::size_t pos = 0;
    std::size_t harmful = 0;
    while (pos < n) {
        std::size_t end = pos;
        while (end + 1 < n && scores[order[end + 1]] == scores[order[pos]]) {
            ++end;
        }
        const double mid = 0.5 * static_cast<double>(pos + end) + 1.0;
        for (std::size_t k = pos; k <= end; ++k) {
            if (labels[order[k]] == Label::Harmful) {
                rank_sum += mid;
                ++harmful;
            }
        }
        pos = end + 1;
    }
    const std::size_t benign = n - harmful;
    if (harmful == 0 || benign == 0) {
        throw ValidationError("auroc needs both harmful and benign examples");
    }
    const double hp = static_cast<double>(harmful);
    const double u = rank_sum - hp * (hp + 1.0) / 2.0;
    return u / (hp * static_cast<double>(benign));
}

double auroc(const ScoreTable& table, ScoreColumn c) {
    const auto scores = column(table, c);
    if (std::any_of(scores.begin(), scores.end(), [](double s) { return std::isnan(s); })) {
        throw ValidationError("score column '" + to_string(c) + "' is missing");
    }
    return auroc(scores, labels(table));
}

std::vector<double> random_baseline_scores(std::size_t n, std::uint64_t seed) {
    if (n == 0) {
        throw ValidationError("random baseline needs n >= 1");
    }
    Rng rng(seed);
    std::vector<double> out(n);
    for (auto& s : out) {
        s = rng.uniform();
    }
    return out;
}

namespace {

std::string cell(double v) { return std::isnan(v) ? "" : format_double(v); }

double parse_cell(const std::string& s) {
    if (s.empty()) {
        return kMissingScore;
    }
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) {
            throw ValidationError("bad numeric cell '" + s + "'");
        }
        return v;
    } catch (const std::logic_error&) {
        throw ValidationError("bad numeric cell '" + s + "'");
    }
}

}  // namespace

std::string score_table_csv(const ScoreTable& table) {
    std::string out = "example_id,h_pi,h_0,h_unpaired,h_random,rank_pi,label\n";
    for (const auto& r : table.rows) {
        out += std::to_string(r.example_id) + "," + cell(r.h_pi) + "," + cell(r.h_0) + "," +
               cell(r.h_unpaired) + "," + cell(r.h_random) + "," + std::to_string(r.rank_pi) + ",";
        if (r.label) {
            out += *r.label == Label::Harmful ? "harmful" : "benign";
        }
        out += "\n";
    }
    return out;
}

ScoreTable parse_score_table_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "example_id,h_pi,h_0,h_unpaired,h_random,rank_pi,label") {
        throw ValidationError("score table CSV has an unexpected header");
    }
    ScoreTable table;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::string c;
        std::istringstream ls(line);
        while (std::getline(ls, c, ',')) {
            cells.push_back(c);
        }
        if (!line.empty() && line.back() == ',') {
            cells.emplace_back();
        }
        if (cells.size() != 7) {
            throw ValidationError("score table row has " + std::to_string(cells.size()) + " cells");
        }
        ScoreRow r;
        r.example_id = static_cast<int>(parse_cell(cells[0]));
        r.h_pi = parse_cell(cells[1]);
        r.h_0 = parse_cell(cells[2]);
        r.h_unpaired = parse_cell(cells[3]);
        r.h_random = parse_cell(cells[4]);
        r.rank_pi = static_cast<int>(parse_cell(cells[5]));
        if (cells[6] == "harmful") {
            r.label = Label::Harmful;
        } else if (cells[6] == "benign") {
            r.label = Label::Benign;
        } else if (!cells[6].empty()) {
            throw ValidationError("unknown label '" + cells[6] + "'");
        }
        table.rows.push_back(r);
    }
    return table;
}

nlohmann::json selection_manifest(SelectMode mode, double budget, const std::vector<int>& id) {
    nlohmann::json j;
    j["mode"] = mode == SelectMode::Keep ? "keep" : "remove";
    j["budget"] = budget;
    j["ids"] = id;
    return j;
}

}  // namespace prism
