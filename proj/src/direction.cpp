#include "prism/direction.hpp"

#include "prism/preference.hpp"

namespace prism {

std::string to_string(DirectionKind kind) {
    switch (kind) {
        case DirectionKind::PrismWeighted:
            return "prism_weighted";
        case DirectionKind::EqualAggregation:
            return "equal_aggregation";
        case DirectionKind::UnpairedPositive:
            return "unpaired_positive";
    }
    return "unknown";
}

GradientVector pair_difference(const ModelParams& model, const PairedTarget& pair) {
    const LossGrad pos = token_avg_loss_and_grad(model, pair.query, pair.positive);
    const LossGrad neg = token_avg_loss_and_grad(model, pair.query, pair.negative);
    return pos.grad - neg.grad;
}

namespace {

void require_targets(std::span<const PairedTarget> targets) {
    if (targets.empty()) {
        throw ValidationError("target direction needs at least one paired target");
    }
}

TargetDirection weighted_mean(const ModelParams& model, std::span<const PairedTarget> targets,
                              std::span<const double> weights, DirectionKind kind) {
    const auto dim = static_cast<Eigen::Index>(model.size());
    TargetDirection d;
    d.kind = kind;
    d.vector = GradientVector::Zero(dim);
    for (std::size_t q = 0; q < targets.size(); ++q) {
        d.vector += weights[q] * pair_difference(model, targets[q]);
        d.per_pair_weights.emplace_back(targets[q].id, weights[q]);
    }
    d.vector /= static_cast<double>(targets.size());
    return d;
}

}  // namespace

TargetDirection target_direction_prism(const ModelParams& model,
                                       std::span<const PairedTarget> targets) {
    require_targets(targets);
    std::vector<double> pi;
    pi.reserve(targets.size());
    for (const auto& t : targets) {
        pi.push_back(preference_weight(model, t));
    }
    return weighted_mean(model, targets, pi, DirectionKind::PrismWeighted);
}

TargetDirection target_direction_equal(const ModelParams& model,
                                       std::span<const PairedTarget> targets) {
    require_targets(targets);
    const std::vector<double> ones(targets.size(), 1.0);
    return weighted_mean(model, targets, ones, DirectionKind::EqualAggregation);
}

TargetDirection target_direction_unpaired(const ModelParams& model,
                                          std::span<const PairedTarget> targets) {
    require_targets(targets);
    TargetDirection d;
    d.kind = DirectionKind::UnpairedPositive;
    d.vector = GradientVector::Zero(static_cast<Eigen::Index>(model.size()));
    for (const auto& t : targets) {
        d.vector += token_avg_loss_and_grad(model, t.query, t.positive).grad;
        d.per_pair_weights.emplace_back(t.id, 1.0);
    }
    d.vector /= static_cast<double>(targets.size());
    return d;
}

TargetDirection target_direction_weighted(const ModelParams& model,
                                          std::span<const PairedTarget> targets,
                                          std::span<const double> weights) {
    require_targets(targets);
    if (weights.size() != targets.size()) {
        throw ValidationError("one weight per paired target is required");
    }
    return weighted_mean(model, targets, weights, DirectionKind::PrismWeighted);
}

nlohmann::json direction_to_json(const TargetDirection& d) {
    nlohmann::json j;
    j["kind"] = to_string(d.kind);
    j["norm"] = d.norm();
    nlohmann::json w = nlohmann::json::array();
    for (const auto& [id, weight] : d.per_pair_weights) {
        w.push_back({{"target_id", id}, {"weight", weight}});
    }
    j["weights"] = w;
    j["vector"] = std::vector<double>(d.vector.data(), d.vector.data() + d.vector.size());
    return j;
}

}  // namespace prism
