#pragma once

#include <optional>
#include <string>

#include "omniforge/model_client.hpp"
#include "omniforge/search.hpp"
#include "omniforge/trajectory.hpp"

namespace omniforge {

enum class EpisodeStatus {
    complete,      // trajectory is grammar-valid and ends in an answer
    malformed,     // policy emitted an invalid step; raw text preserved
    policy_error,  // backend failure mid-episode; partial trajectory returned
};

const char* to_string(EpisodeStatus s);

struct EpisodeResult {
    Trajectory trajectory;  // events accepted so far (always conserving
                            // tool_call/tool_response pairing)
    EpisodeStatus status = EpisodeStatus::complete;
    std::string raw_text;   // verbatim concatenation of every policy step
    std::optional<ParseError> error;  // set when status == malformed
    std::string error_message;        // set when status == policy_error

    size_t turns() const { return trajectory.turns(); }
};

// Drives one agentic episode: the policy emits think+tool_call steps, the
// environment answers each tool_call with exactly one tool_response from
// `index`, and the episode ends at think+answer. Once `max_turns` searches
// have run, the policy is asked for a forced final answer.
EpisodeResult run_episode(const std::string& question, ModelClient& policy, const SearchIndex& index,
                          int max_turns, int64_t seed = 0,
                          EffortLevel effort = EffortLevel::non_thinking,
                          const TagConfig& tags = TagConfig::defaults());

// The exact prompt the runner sends, exposed so fixtures and the mock agree.
std::string episode_prompt(const std::string& question, const std::string& transcript,
                           bool force_final);

}  // namespace omniforge
