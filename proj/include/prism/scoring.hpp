#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/curvature.hpp"
#include "prism/direction.hpp"

namespace prism {

inline constexpr double kMissingScore = std::numeric_limits<double>::quiet_NaN();

struct ScoreRow {
    int example_id = 0;
    double h_pi = kMissingScore;
    double h_0 = kMissingScore;
    double h_unpaired = kMissingScore;
    double h_random = kMissingScore;
    int rank_pi = -1;
    std::optional<Label> label;
};

/// Per-example influence scores. Rows are in example-id order; rank_pi is the
/// 0-based position under descending h_pi with ties broken by ascending id.
struct ScoreTable {
    std::vector<ScoreRow> rows;
    nlohmann::json metadata = nlohmann::json::object();

    std::size_t size() const { return rows.size(); }
};

enum class ScoreColumn { Prism, Equal, Unpaired, Random };

std::string to_string(ScoreColumn c);
ScoreColumn score_column_from_string(const std::string& s);
std::vector<double> column(const ScoreTable& table, ScoreColumn c);
std::vector<int> ids(const ScoreTable& table);
std::vector<Label> labels(const ScoreTable& table);

/// h = g_z^T (H^{-1} d) for each direction d; one inverse_apply per direction.
ScoreTable score_pool(const ModelParams& model, std::span<const Example> pool,
                      const CurvatureOperator& curvature, std::span<const TargetDirection> directions,
                      std::span<const Label> labels = {});

/// Same as score_pool but from precomputed per-example gradients (rows).
ScoreTable score_gradients(const Matrix& example_grads, const CurvatureOperator& curvature,
                           std::span<const TargetDirection> directions);

/// Fills rank_pi from h_pi.
void assign_ranks(ScoreTable& table);

enum class SelectMode { Keep, Remove };

/// m = round(fraction * n), at least 1. fraction must lie in (0, 1].
std::size_t budget_count(double fraction, std::size_t n);

/// Keep: the top-m ids in rank order. Remove: the retained ids (complement of
/// the top-m) in ascending id order.
std::vector<int> select_top(std::span<const double> scores, std::span<const int> ids,
                            double fraction, SelectMode mode);
std::vector<int> select_top(const ScoreTable& table, double fraction, SelectMode mode,
                            ScoreColumn c = ScoreColumn::Prism);

/// Probability that a random harmful example outranks a random benign one,
/// with half credit for ties. Throws when only one class is present.
double auroc(std::span<const double> scores, std::span<const Label> labels);
double auroc(const ScoreTable& table, ScoreColumn c);

/// i.i.d. uniform [0, 1) scores from a seeded generator.
std::vector<double> random_baseline_scores(std::size_t n, std::uint64_t seed);

std::string score_table_csv(const ScoreTable& table);
ScoreTable parse_score_table_csv(const std::string& text);

nlohmann::json selection_manifest(SelectMode mode, double budget, const std::vector<int>& ids);

}  // namespace prism
