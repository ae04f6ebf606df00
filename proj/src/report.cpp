#include "prism/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "prism/corpus_io.hpp"
#include "prism/util.hpp"

namespace prism {

namespace {

constexpr const char* kHeader = "method,x,seed,auroc,metric";

std::string cell(double v) { return std::isnan(v) ? "" : format_double(v); }

double parse_number(const std::string& s, bool allow_empty) {
    if (s.empty() && allow_empty) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) {
            return v;
        }
    } catch (const std::logic_error&) {
    }
    throw ValidationError("bad numeric cell '" + s + "' in results CSV");
}

void require_methods(const ResultSet& set) {
    if (set.methods.empty()) {
        throw ValidationError("result set '" + set.name + "' has an empty method list");
    }
}

struct Cell {
    int n = 0;
    int n_auroc = 0;
    double auroc = 0.0;
    double metric = 0.0;
};

// method -> x -> accumulated means, with x in ascending order
std::map<std::string, std::map<double, Cell>> aggregate(const ResultSet& set) {
    std::map<std::string, std::map<double, Cell>> out;
    for (const auto& r : set.rows) {
        auto& c = out[r.method][r.x];
        ++c.n;
        c.metric += r.metric;
        if (!std::isnan(r.auroc)) {
            ++c.n_auroc;
            c.auroc += r.auroc;
        }
    }
    for (auto& [m, xs] : out) {
        for (auto& [x, c] : xs) {
            c.metric /= c.n;
            c.auroc = c.n_auroc > 0 ? c.auroc / c.n_auroc : std::numeric_limits<double>::quiet_NaN();
        }
    }
    return out;
}

std::string fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '&':
                out += "&amp;";
                break;
            case '<':
                out += "&lt;";
                break;
            case '>':
                out += "&gt;";
                break;
            default:
                out += ch;
        }
    }
    return out;
}

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#7f7f7f", "#9467bd", "#ff7f0e"};

}  // namespace

std::string results_csv(const ResultSet& set) {
    require_methods(set);
    std::string out = std::string(kHeader) + "\n";
    for (const auto& r : set.rows) {
        out += r.method + "," + format_double(r.x) + "," + std::to_string(r.seed) + "," + cell(r.auroc) +
               "," + format_double(r.metric) + "\n";
    }
    return out;
}

ResultSet parse_results_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kHeader) {
        throw ValidationError("results CSV has an unexpected header");
    }
    ResultSet set;
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
        if (line.back() == ',') {
            cells.emplace_back();
        }
        if (cells.size() != 5) {
            throw ValidationError("results CSV row has " + std::to_string(cells.size()) + " cells");
        }
        ResultRow r;
        r.method = cells[0];
        r.x = parse_number(cells[1], false);
        r.seed = static_cast<std::uint64_t>(parse_number(cells[2], false));
        r.auroc = parse_number(cells[3], true);
        r.metric = parse_number(cells[4], false);
        if (std::find(set.methods.begin(), set.methods.end(), r.method) == set.methods.end()) {
            set.methods.push_back(r.method);
        }
        set.rows.push_back(r);
    }
    return set;
}

nlohmann::json results_rollup(const ResultSet& set) {
    require_methods(set);
    const auto agg = aggregate(set);
    nlohmann::json j;
    j["name"] = set.name;
    j["x_label"] = set.x_label;
    j["metric_label"] = set.metric_label;
    nlohmann::json methods = nlohmann::json::object();
    for (const auto& m : set.methods) {
        nlohmann::json pts = nlohmann::json::array();
        const auto it = agg.find(m);
        if (it != agg.end()) {
            for (const auto& [x, c] : it->second) {
                nlohmann::json p{{"x", x}, {"n", c.n}, {"mean_metric", c.metric}};
                p["mean_auroc"] = std::isnan(c.auroc) ? nlohmann::json(nullptr) : nlohmann::json(c.auroc);
                pts.push_back(p);
            }
        }
        methods[m] = pts;
    }
    j["methods"] = methods;
    return j;
}

std::string line_plot_svg(const ResultSet& set, PlotValue value) {
    require_methods(set);
    const auto agg = aggregate(set);
    const double width = 640, height = 400, left = 70, right = 150, top = 40, bottom = 60;
    const double pw = width - left - right, ph = height - top - bottom;

    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& [m, xs] : agg) {
        for (const auto& [x, c] : xs) {
            const double y = value == PlotValue::Metric ? c.metric : c.auroc;
            if (std::isnan(y)) {
                continue;
            }
            if (first) {
                xmin = xmax = x;
                ymin = ymax = y;
                first = false;
            }
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (xmax == xmin) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    ymin = std::min(ymin, 0.0);
    ymax = std::max(ymax, 1.0);
    auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
    auto sy = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

    const std::string ylabel = value == PlotValue::Metric ? set.metric_label : "AUROC";
    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(width) + "\" height=\"" + fixed(height) +
         "\" viewBox=\"0 0 " + fixed(width) + " " + fixed(height) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + fixed(left) + "\" y=\"24\" font-size=\"14\">" + escape_xml(set.name) + ": " +
         escape_xml(ylabel) + "</text>\n";
    s += "<line x1=\"" + fixed(left) + "\" y1=\"" + fixed(top + ph) + "\" x2=\"" + fixed(left + pw) + "\" y2=\"" +
         fixed(top + ph) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + fixed(left) + "\" y1=\"" + fixed(top) + "\" x2=\"" + fixed(left) + "\" y2=\"" +
         fixed(top + ph) + "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = xmin + (xmax - xmin) * k / 4.0;
        const double yv = ymin + (ymax - ymin) * k / 4.0;
        s += "<text x=\"" + fixed(sx(xv)) + "\" y=\"" + fixed(top + ph + 18) +
             "\" font-size=\"11\" text-anchor=\"middle\">" + fixed(xv) + "</text>\n";
        s += "<text x=\"" + fixed(left - 8) + "\" y=\"" + fixed(sy(yv) + 4) +
             "\" font-size=\"11\" text-anchor=\"end\">" + fixed(yv) + "</text>\n";
    }
    s += "<text x=\"" + fixed(left + pw / 2) + "\" y=\"" + fixed(height - 16) +
         "\" font-size=\"12\" text-anchor=\"middle\">" + escape_xml(set.x_label) + "</text>\n";

    for (std::size_t mi = 0; mi < set.methods.size(); ++mi) {
        const auto& m = set.methods[mi];
        const char* color = kColors[mi % (sizeof kColors / sizeof kColors[0])];
        std::string pts;
        const auto it = agg.find(m);
        if (it != agg.end()) {
            for (const auto& [x, c] : it->second) {
                const double y = value == PlotValue::Metric ? c.metric : c.auroc;
                if (std::isnan(y)) {
                    continue;
                }
                pts += (pts.empty() ? "" : " ") + fixed(sx(x)) + "," + fixed(sy(y));
            }
        }
        s += "<polyline data-method=\"" + escape_xml(m) + "\" fill=\"none\" stroke=\"" + color +
             "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
        const double ly = top + 16.0 * static_cast<double>(mi);
        s += "<text x=\"" + fixed(left + pw + 12) + "\" y=\"" + fixed(ly + 4) + "\" font-size=\"12\" fill=\"" +
             color + "\">" + escape_xml(m) + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

std::vector<std::string> emit_report(const ResultSet& set, const std::string& out_dir) {
    require_methods(set);
    if (set.name.empty()) {
        throw ValidationError("result set has no name");
    }
    std::vector<std::string> written;
    auto put = [&](const std::string& rel, const std::string& content) {
        write_text_file(out_dir + "/" + rel, content);
        written.push_back(rel);
    };
    put("results/" + set.name + ".csv", results_csv(set));
    put("results/" + set.name + ".json", results_rollup(set).dump(2) + "\n");
    put("plots/" + set.name + "_metric.svg", line_plot_svg(set, PlotValue::Metric));
    const bool has_auroc =
        std::any_of(set.rows.begin(), set.rows.end(), [](const ResultRow& r) { return !std::isnan(r.auroc); });
    if (has_auroc) {
        put("plots/" + set.name + "_auroc.svg", line_plot_svg(set, PlotValue::Auroc));
    }
    return written;
}

ResultSet repair_result_set(const std::vector<double>& harmful_ratios,
                            const std::vector<std::vector<RepairResult>>& per_ratio) {
    if (harmful_ratios.size() != per_ratio.size()) {
        throw ValidationError("one result list per harmful ratio is required");
    }
    ResultSet set{"repair", "harmful ratio", "wrong-rule rate after repair", {}, {}};
    for (std::size_t i = 0; i < per_ratio.size(); ++i) {
        for (const auto& r : per_ratio[i]) {
            if (set.methods.empty()) {
                set.methods.push_back("mixed");
                for (const auto& o : r.methods) {
                    set.methods.push_back(to_string(o.method));
                }
                set.methods.push_back("pure");
            }
            const double nan = std::numeric_limits<double>::quiet_NaN();
            set.rows.push_back({"mixed", harmful_ratios[i], r.seed, nan, r.metric_mixed});
            for (const auto& o : r.methods) {
                set.rows.push_back({to_string(o.method), harmful_ratios[i], r.seed, o.auroc, o.metric_after});
            }
            set.rows.push_back({"pure", harmful_ratios[i], r.seed, nan, r.metric_pure});
        }
    }
    return set;
}

ResultSet sweep_result_set(const std::vector<SweepCurve>& curves) {
    ResultSet set{"sweep", "retained ratio", "wrong-rule rate after repair", {}, {}};
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& c : curves) {
        const std::string m = to_string(c.method);
        if (std::find(set.methods.begin(), set.methods.end(), m) == set.methods.end()) {
            set.methods.push_back(m);
        }
        for (const auto& p : c.points) {
            set.rows.push_back({m, p.retained_ratio, c.seed, nan, p.metric});
        }
    }
    return set;
}

ResultSet selection_result_set(double budget, const std::vector<SelectionResult>& results) {
    ResultSet set{"selection", "budget", "held-out accuracy", {}, {}};
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& r : results) {
        if (set.methods.empty()) {
            set.methods.push_back("base");
            for (const auto& o : r.methods) {
                set.methods.push_back(to_string(o.method));
            }
            set.methods.push_back("full");
        }
        set.rows.push_back({"base", budget, r.seed, nan, r.accuracy_base});
        for (const auto& o : r.methods) {
            set.rows.push_back({to_string(o.method), budget, r.seed, nan, o.accuracy});
        }
        set.rows.push_back({"full", budget, r.seed, nan, r.accuracy_full});
    }
    return set;
}

}  // namespace prism
