#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prism/model.hpp"

namespace prism {

enum class DirectionKind { PrismWeighted, EqualAggregation, UnpairedPositive };

std::string to_string(DirectionKind kind);

struct TargetDirection {
    GradientVector vector;
    DirectionKind kind = DirectionKind::PrismWeighted;
    /// (target_id, weight) in target order; pi for PrismWeighted, 1 otherwise.
    std::vector<std::pair<int, double>> per_pair_weights;

    double norm() const { return vector.norm(); }
};

/// d_q = grad lbar(q, y+) - grad lbar(q, y-), the paired token-average gradient contrast.
GradientVector pair_difference(const ModelParams& model, const PairedTarget& pair);

/// g_KL = (1/|Q|) sum_q pi_q d_q, with pi_q frozen at `model`.
TargetDirection target_direction_prism(const ModelParams& model, std::span<const PairedTarget> targets);

/// g_0 = (1/|Q|) sum_q d_q.
TargetDirection target_direction_equal(const ModelParams& model, std::span<const PairedTarget> targets);

/// (1/|Q|) sum_q grad lbar(q, y+): g_KL with every pi_q = 1 and the negative
/// gradients dropped, so its score is the first-order gain in mean positive
/// log-likelihood from upweighting an example.
TargetDirection target_direction_unpaired(const ModelParams& model,
                                          std::span<const PairedTarget> targets);

/// Weighted contrast mean with caller-supplied weights (used to inject constant or
/// scaled preference weights in checks). Kind is PrismWeighted.
TargetDirection target_direction_weighted(const ModelParams& model,
                                          std::span<const PairedTarget> targets,
                                          std::span<const double> weights);

/// {"kind", "norm", "weights", "vector"}.
nlohmann::json direction_to_json(const TargetDirection& d);

}  // namespace prism
