#include "omniforge/reward.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace omniforge {

json RewardBreakdown::to_json() const {
    return json{{"answer", answer},
                {"format", format},
                {"length", length},
                {"weights", {{"answer", weights.answer}, {"format", weights.format}, {"length", weights.length}}},
                {"total", total}};
}

std::optional<double> answer_reward(const std::string& question, const std::string& candidate,
                                    const std::string& gold, const std::string& rubric_id,
                                    ModelClient& judge) {
    JudgeRequest req;
    req.question = question;
    req.candidate = candidate;
    req.reference = gold;
    req.rubric_id = rubric_id;
    return judge.judge(req);
}

int format_reward(const std::string& raw_text, const TagConfig& tags) {
    return validate_format(raw_text, tags);
}

double length_reward(size_t reasoning_tokens, EffortLevel effort, const LengthBands& bands) {
    auto it = bands.bands.find(effort);
    if (it == bands.bands.end()) throw std::invalid_argument("length_reward: no band for effort level");
    double lo = static_cast<double>(it->second.first);
    double hi = static_cast<double>(it->second.second);
    if (lo > hi) throw std::invalid_argument("length_reward: band min > max");
    double t = static_cast<double>(reasoning_tokens);
    if (t >= lo && t <= hi) return 1.0;
    double width = hi - lo;
    if (width == 0.0) return 0.0;  // zero-width band rewards only the exact point
    double overshoot = t > hi ? t - hi : lo - t;
    return std::max(0.0, 1.0 - overshoot / width);
}

RewardBreakdown combine(double answer, int format, double length, const RewardWeights& weights) {
    if (answer < 0.0 || answer > 1.0) throw std::invalid_argument("combine: answer outside [0,1]");
    if (format != 0 && format != 1) throw std::invalid_argument("combine: format must be 0 or 1");
    if (length < 0.0 || length > 1.0) throw std::invalid_argument("combine: length outside [0,1]");
    if (weights.answer < 0.0 || weights.format < 0.0 || weights.length < 0.0) {
        throw std::invalid_argument("combine: negative weight");
    }
    double wsum = weights.sum();
    if (wsum <= 0.0) throw std::invalid_argument("combine: weights sum to zero");

    RewardBreakdown b;
    b.answer = answer;
    b.format = format;
    b.length = length;
    b.weights = weights;
    b.total = (weights.answer * answer + weights.format * format + weights.length * length) / wsum;
    return b;
}

std::vector<double> grpo_advantages(const std::vector<double>& rewards, double epsilon) {
    if (rewards.size() < 2) throw std::invalid_argument("grpo_advantages: group size must be >= 2");
    if (epsilon < 0.0) throw std::invalid_argument("grpo_advantages: epsilon must be >= 0");

    std::vector<double> advantages(rewards.size(), 0.0);
    // All-equal groups carry no signal; decide by value, not by computed
    // variance, which rounding can drag off exact zero.
    bool all_equal = std::all_of(rewards.begin(), rewards.end(),
                                 [&](double r) { return r == rewards[0]; });
    if (all_equal) return advantages;

    double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= n;  // population variance
    double std_pop = std::sqrt(var);

    double denom = std_pop + epsilon;
    if (denom == 0.0) return advantages;
    for (size_t i = 0; i < rewards.size(); ++i) advantages[i] = (rewards[i] - mean) / denom;
    return advantages;
}

size_t trajectory_reasoning_tokens(const std::string& text, const TagConfig& tags) {
    ParseOutcome parsed = parse_trajectory(text, tags);
    if (!parsed.ok()) return 0;
    size_t tokens = 0;
    for (const auto& event : parsed.trajectory->events) {
        if (event.kind != EventKind::think) continue;
        std::istringstream is(event.text);
        std::string tok;
        while (is >> tok) ++tokens;
    }
    return tokens;
}

RolloutGroup score_group(const std::string& question_id, const std::string& question,
                         const std::string& gold, const std::string& rubric_id,
                         const std::vector<std::string>& responses, ModelClient& judge,
                         const RewardWeights& weights, EffortLevel effort, const LengthBands& bands,
                         double epsilon, const TagConfig& tags) {
    RolloutGroup group;
    group.question_id = question_id;
    for (size_t i = 0; i < responses.size(); ++i) {
        auto answer = answer_reward(question, responses[i], gold, rubric_id, judge);
        if (!answer) {
            group.excluded.push_back(static_cast<int>(i));  // no fabricated signal
            continue;
        }
        int format = format_reward(responses[i], tags);
        double length = length_reward(trajectory_reasoning_tokens(responses[i], tags), effort, bands);
        ScoredRollout rollout;
        rollout.rollout_index = static_cast<int>(i);
        rollout.response_text = responses[i];
        rollout.reward = combine(*answer, format, length, weights);
        group.rollouts.push_back(std::move(rollout));
    }
    if (group.viable()) {
        std::vector<double> totals;
        totals.reserve(group.rollouts.size());
        for (const auto& r : group.rollouts) totals.push_back(r.reward.total);
        group.advantages = grpo_advantages(totals, epsilon);
    }
    return group;
}

std::vector<json> advantage_export_lines(const std::vector<RolloutGroup>& groups) {
    std::vector<json> lines;
    for (const auto& group : groups) {
        if (!group.viable()) continue;
        for (size_t i = 0; i < group.rollouts.size(); ++i) {
            lines.push_back(json{{"question_id", group.question_id},
                                 {"rollout_index", group.rollouts[i].rollout_index},
                                 {"reward_breakdown", group.rollouts[i].reward.to_json()},
                                 {"advantage", group.advantages[i]}});
        }
    }
    return lines;
}

void write_advantage_export(const std::string& path, const std::vector<RolloutGroup>& groups) {
    write_jsonl(path, advantage_export_lines(groups));
}

}  // namespace omniforge
