#pragma once

#include <span>
#include <string>
#include <vector>

#include "prism/model.hpp"

namespace prism {

/// Logistic function, evaluated without overflow for any finite m.
double sigmoid(double m);
/// log(1 + e^m), evaluated without overflow.
double softplus(double m);

/// Margins are clamped to this range before sigma/softplus in report output only.
inline constexpr double kReportMarginClamp = 30.0;
/// Pairs whose response lengths differ by more than this factor are flagged.
inline constexpr double kLengthRatioFlag = 4.0;

struct PreferenceRecord {
    int target_id = 0;
    double pi = 0.5;       // sigma(margin)
    double margin = 0.0;   // normalized log-likelihood gap, positive minus negative
    double kl_term = 0.0;  // softplus(margin) = -log(1 - pi)
    bool length_flag = false;
    bool degenerate = false;  // positive == negative
};

struct RewardSummary {
    double K = 0.0;       // mean kl_term
    double P = 0.0;       // mean pi
    double R_pair = 0.0;  // fraction of pairs with pi >= 1/2
    std::vector<PreferenceRecord> records;
};

double margin(const ModelParams& model, const PairedTarget& pair);
double preference_weight(const ModelParams& model, const PairedTarget& pair);
PreferenceRecord preference_record(const ModelParams& model, const PairedTarget& pair);

/// Summary from precomputed margins (one per pair, ids 0..n-1).
RewardSummary reward_from_margins(std::span<const double> margins);
RewardSummary kl_reward(const ModelParams& model, std::span<const PairedTarget> targets);

struct BoundsReport {
    bool ok = true;
    double slack_p_le_k = 0.0;     // K - P
    double slack_r_le_2p = 0.0;    // 2P - R_pair
    double slack_2p_le_2k = 0.0;   // 2K - 2P
    std::string violated;          // empty when ok
};

/// Evaluates P <= K and R_pair <= 2P <= 2K.
BoundsReport check_bounds(const RewardSummary& summary);

/// Throws BoundViolation naming the inequality when check_bounds fails.
class BoundViolation : public Error {
public:
    explicit BoundViolation(const BoundsReport& report)
        : Error("reward bound violated: " + report.violated), report_(report) {}
    const BoundsReport& report() const { return report_; }

private:
    BoundsReport report_;
};
void require_bounds(const RewardSummary& summary);

/// CSV with columns target_id, margin, pi, kl_term (margins clamped for display).
std::string preference_csv(const RewardSummary& summary);

}  // namespace prism
