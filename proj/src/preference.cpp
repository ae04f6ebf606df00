#include "prism/preference.hpp"

#include <algorithm>
#include <cmath>

#include "prism/util.hpp"

namespace prism {

double sigmoid(double m) {
    if (m >= 0.0) {
        return 1.0 / (1.0 + std::exp(-m));
    }
    const double e = std::exp(m);
    return e / (1.0 + e);
}

double softplus(double m) { return std::max(m, 0.0) + std::log1p(std::exp(-std::abs(m))); }

double margin(const ModelParams& model, const PairedTarget& pair) {
    if (pair.positive.empty() || pair.negative.empty()) {
        throw ValidationError("paired target " + std::to_string(pair.id) +
                              " needs non-empty positive and negative responses");
    }
    return normalized_log_prob(model, pair.query, pair.positive) -
           normalized_log_prob(model, pair.query, pair.negative);
}

double preference_weight(const ModelParams& model, const PairedTarget& pair) {
    return sigmoid(margin(model, pair));
}

PreferenceRecord preference_record(const ModelParams& model, const PairedTarget& pair) {
    const double m = margin(model, pair);
    PreferenceRecord r;
    r.target_id = pair.id;
    r.margin = m;
    r.pi = sigmoid(m);
    r.kl_term = softplus(m);
    const double lp = static_cast<double>(pair.positive.size());
    const double ln = static_cast<double>(pair.negative.size());
    r.length_flag = std::max(lp, ln) > kLengthRatioFlag * std::min(lp, ln);
    r.degenerate = pair.degenerate();
    return r;
}

namespace {

RewardSummary summarize(std::vector<PreferenceRecord> records) {
    if (records.empty()) {
        throw ValidationError("reward requires at least one paired target");
    }
    RewardSummary s;
    double k = 0.0;
    double p = 0.0;
    double r = 0.0;
    for (const auto& rec : records) {
        k += rec.kl_term;
        p += rec.pi;
        r += rec.pi >= 0.5 ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(records.size());
    s.K = k / n;
    s.P = p / n;
    s.R_pair = r / n;
    s.records = std::move(records);
    if (!std::isfinite(s.K)) {
        throw NumericalError("target-preference reward is not finite");
    }
    return s;
}

}  // namespace

RewardSummary reward_from_margins(std::span<const double> margins) {
    std::vector<PreferenceRecord> records;
    records.reserve(margins.size());
    for (std::size_t i = 0; i < margins.size(); ++i) {
        PreferenceRecord r;
        r.target_id = static_cast<int>(i);
        r.margin = margins[i];
        r.pi = sigmoid(margins[i]);
        r.kl_term = softplus(margins[i]);
        records.push_back(r);
    }
    return summarize(std::move(records));
}

RewardSummary kl_reward(const ModelParams& model, std::span<const PairedTarget> targets) {
    std::vector<PreferenceRecord> records;
    records.reserve(targets.size());
    for (const auto& t : targets) {
        records.push_back(preference_record(model, t));
    }
    return summarize(std::move(records));
}

BoundsReport check_bounds(const RewardSummary& s) {
    BoundsReport b;
    b.slack_p_le_k = s.K - s.P;
    b.slack_r_le_2p = 2.0 * s.P - s.R_pair;
    b.slack_2p_le_2k = 2.0 * s.K - 2.0 * s.P;
    if (b.slack_p_le_k < 0.0) {
        b.ok = false;
        b.violated = "P <= K";
    } else if (b.slack_r_le_2p < 0.0) {
        b.ok = false;
        b.violated = "R_pair <= 2P";
    } else if (b.slack_2p_le_2k < 0.0) {
        b.ok = false;
        b.violated = "2P <= 2K";
    }
    return b;
}

void require_bounds(const RewardSummary& summary) {
    const BoundsReport b = check_bounds(summary);
    if (!b.ok) {
        throw BoundViolation(b);
    }
}

std::string preference_csv(const RewardSummary& summary) {
    std::string out = "target_id,margin,pi,kl_term\n";
    for (const auto& r : summary.records) {
        const double m = std::clamp(r.margin, -kReportMarginClamp, kReportMarginClamp);
        out += std::to_string(r.target_id) + "," + format_double(m) + "," + format_double(sigmoid(m)) +
               "," + format_double(softplus(m)) + "\n";
    }
    return out;
}

}  // namespace prism
