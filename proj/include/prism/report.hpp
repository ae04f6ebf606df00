#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/experiment.hpp"

namespace prism {

/// One (method, x, seed) measurement. `auroc` is NaN when not applicable.
struct ResultRow {
    std::string method;
    double x = 0.0;
    std::uint64_t seed = 0;
    double auroc = 0.0;
    double metric = 0.0;
};

/// A method x ratio x seed table plus axis names for plotting.
struct ResultSet {
    std::string name;
    std::string x_label;
    std::string metric_label;
    std::vector<std::string> methods;
    std::vector<ResultRow> rows;
};

/// Header `method,x,seed,auroc,metric`; NaN cells are empty.
std::string results_csv(const ResultSet& set);

/// Inverse of results_csv. Methods are listed in order of first appearance.
ResultSet parse_results_csv(const std::string& text);

/// Per method and x: sample count and means over seeds (NaN aurocs skipped).
nlohmann::json results_rollup(const ResultSet& set);

enum class PlotValue { Metric, Auroc };

/// Static SVG line plot of the per-x mean, one polyline per method.
std::string line_plot_svg(const ResultSet& set, PlotValue value);

/// Writes results/<name>.csv, results/<name>.json and plots/<name>_metric.svg
/// (plus plots/<name>_auroc.svg when any AUROC is present) under `out_dir`.
/// Returns the written paths relative to `out_dir`. Throws on an empty method list.
std::vector<std::string> emit_report(const ResultSet& set, const std::string& out_dir);

ResultSet repair_result_set(const std::vector<double>& harmful_ratios,
                            const std::vector<std::vector<RepairResult>>& per_ratio);
ResultSet sweep_result_set(const std::vector<SweepCurve>& curves);
ResultSet selection_result_set(double budget, const std::vector<SelectionResult>& results);

}  // namespace prism
