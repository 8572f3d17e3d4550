#pragma once

#include <optional>
#include <string>
#include <vector>

#include "omniforge/curation.hpp"
#include "omniforge/jsonl.hpp"
#include "omniforge/model_client.hpp"
#include "omniforge/trajectory.hpp"

namespace omniforge {

struct RewardWeights {
    double answer = 0.9;
    double format = 0.1;
    double length = 0.0;

    static RewardWeights agentic_defaults() { return {0.9, 0.1, 0.0}; }
    static RewardWeights controllable_defaults() { return {0.8, 0.0, 0.2}; }

    double sum() const { return answer + format + length; }
};

struct RewardBreakdown {
    double answer = 0.0;  // [0,1]
    int format = 0;       // {0,1}
    double length = 0.0;  // [0,1]
    RewardWeights weights;
    double total = 0.0;   // weighted mean, in [0,1]

    json to_json() const;
};

// Judge-delegated answer reward; unknown judge status propagates as nullopt
// so the rollout can be excluded from its group instead of getting a
// fabricated score.
std::optional<double> answer_reward(const std::string& question, const std::string& candidate,
                                    const std::string& gold, const std::string& rubric_id,
                                    ModelClient& judge);

// Rule-based interleaved-format check; identical to validate_format.
int format_reward(const std::string& raw_text, const TagConfig& tags = TagConfig::defaults());

// 1.0 inside the effort's band, linear decay to 0 over one band-width of
// overshoot on either side. A zero-width band rewards only its exact point.
double length_reward(size_t reasoning_tokens, EffortLevel effort,
                     const LengthBands& bands = LengthBands::defaults());

// Weighted mean of the three components; weights must not all be zero.
RewardBreakdown combine(double answer, int format, double length,
                        const RewardWeights& weights = RewardWeights::agentic_defaults());

// A_i = (r_i - mean) / (std_pop + epsilon); all-equal rewards give all-zero
// advantages. Requires group size >= 2.
std::vector<double> grpo_advantages(const std::vector<double>& rewards, double epsilon = 1e-6);

struct ScoredRollout {
    int rollout_index = 0;      // index in the original rollout list
    std::string response_text;  // raw trajectory or plain response
    RewardBreakdown reward;
};

struct RolloutGroup {
    std::string question_id;
    std::vector<ScoredRollout> rollouts;  // judge-unknown rollouts excluded
    std::vector<double> advantages;       // parallel to rollouts; empty if not viable
    std::vector<int> excluded;            // original indices dropped

    bool viable() const { return rollouts.size() >= 2; }
};

// Scores every response (answer via judge, format via the rule checker,
// length from the summed think-payload token count) and computes group
// advantages over the surviving rollouts.
RolloutGroup score_group(const std::string& question_id, const std::string& question,
                         const std::string& gold, const std::string& rubric_id,
                         const std::vector<std::string>& responses, ModelClient& judge,
                         const RewardWeights& weights = RewardWeights::agentic_defaults(),
                         EffortLevel effort = EffortLevel::non_thinking,
                         const LengthBands& bands = LengthBands::defaults(),
                         double epsilon = 1e-6, const TagConfig& tags = TagConfig::defaults());

// Reasoning-token count used by the length reward: whitespace tokens summed
// over think payloads when the text parses; 0 otherwise.
size_t trajectory_reasoning_tokens(const std::string& text, const TagConfig& tags = TagConfig::defaults());

// JSONL {question_id, rollout_index, reward_breakdown, advantage} per
// surviving rollout; non-viable groups are skipped.
void write_advantage_export(const std::string& path, const std::vector<RolloutGroup>& groups);
std::vector<json> advantage_export_lines(const std::vector<RolloutGroup>& groups);

}  // namespace omniforge
