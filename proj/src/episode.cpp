#include "omniforge/episode.hpp"

#include <algorithm>
#include <stdexcept>

namespace omniforge {

namespace {

std::string single_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\r', ' ');
    return s;
}

}  // namespace

const char* to_string(EpisodeStatus s) {
    switch (s) {
        case EpisodeStatus::complete: return "complete";
        case EpisodeStatus::malformed: return "malformed";
        case EpisodeStatus::policy_error: return "policy_error";
    }
    return "complete";
}

std::string episode_prompt(const std::string& question, const std::string& transcript,
                           bool force_final) {
    std::string prompt = "agentic_episode\nquestion: " + single_line(question) +
                         "\ndirective: " + (force_final ? "final_answer" : "continue") +
                         "\ntranscript:\n" + transcript;
    return prompt;
}

EpisodeResult run_episode(const std::string& question, ModelClient& policy, const SearchIndex& index,
                          int max_turns, int64_t seed, EffortLevel effort, const TagConfig& tags) {
    if (max_turns < 0) throw std::invalid_argument("run_episode: max_turns must be >= 0");

    EpisodeResult result;
    std::string transcript;

    // Each iteration consumes one policy step; a step is either a whole turn
    // (think + tool_call, answered here with one tool_response) or the
    // closing think + answer, so at most max_turns + 1 iterations run.
    for (int step = 0; step <= max_turns; ++step) {
        bool force_final = static_cast<int>(result.trajectory.turns()) >= max_turns;

        GenerationRequest req;
        req.segments.push_back({ModalityKind::text, episode_prompt(question, transcript, force_final)});
        req.effort = effort;
        req.max_tokens = 1024;
        req.seed = seed;

        GenerationResult step_result;
        try {
            step_result = policy.generate(req);
        } catch (const ClientError& e) {
            result.status = EpisodeStatus::policy_error;
            result.error_message = e.what();
            return result;
        }
        if (!result.raw_text.empty()) result.raw_text += '\n';
        result.raw_text += step_result.text;

        BlocksOutcome blocks = parse_blocks(step_result.text, tags);
        if (!blocks.ok()) {
            result.status = EpisodeStatus::malformed;
            result.error = blocks.error;
            return result;
        }
        bool is_turn = blocks.events.size() == 2 && blocks.events[0].kind == EventKind::think &&
                       blocks.events[1].kind == EventKind::tool_call;
        bool is_final = blocks.events.size() == 2 && blocks.events[0].kind == EventKind::think &&
                        blocks.events[1].kind == EventKind::answer;
        if (!is_turn && !is_final) {
            result.status = EpisodeStatus::malformed;
            result.error = ParseError{0, "think+tool_call or think+answer",
                                      "policy step does not match either step shape"};
            return result;
        }
        if (is_turn && force_final) {
            result.status = EpisodeStatus::malformed;
            result.error = ParseError{0, "think+answer", "tool_call after the forced-final directive"};
            return result;
        }
        try {
            // JSON escapes can smuggle a literal closing tag through the
            // block scan (e.g. "<\/tool_call>" inside the query); such a
            // step can never be re-serialized, so reject it here.
            (void)serialize_event(blocks.events[0], tags);
            (void)serialize_event(blocks.events[1], tags);
        } catch (const std::invalid_argument& e) {
            result.status = EpisodeStatus::malformed;
            result.error = ParseError{0, "serializable step", e.what()};
            return result;
        }

        result.trajectory.events.push_back(blocks.events[0]);
        result.trajectory.events.push_back(blocks.events[1]);
        if (is_final) {
            result.status = EpisodeStatus::complete;
            return result;
        }

        const ToolCall& call = blocks.events[1].call;
        std::vector<Hit> hits;
        try {
            hits = index.search(call.mode, call.query, call.k);
        } catch (const std::invalid_argument&) {
            // Unresolvable query (bad locator / missing mapping): the tool
            // answers with no results rather than crashing the episode.
            hits.clear();
        }
        for (Hit& hit : hits) {
            // Keep indexed content from closing the transcript block early.
            for (std::string* field : {&hit.snippet, &hit.id}) {
                size_t at;
                while ((at = field->find(tags.close(EventKind::tool_response))) != std::string::npos) {
                    field->erase(at, tags.close(EventKind::tool_response).size());
                }
            }
        }
        result.trajectory.events.push_back(TrajectoryEvent::tool_response_event(std::move(hits)));
        try {
            transcript = "";
            for (size_t i = 0; i < result.trajectory.events.size(); ++i) {
                if (i) transcript += '\n';
                transcript += serialize_event(result.trajectory.events[i], tags);
            }
        } catch (const std::invalid_argument& e) {
            result.status = EpisodeStatus::malformed;
            result.error = ParseError{0, "serializable transcript", e.what()};
            return result;
        }
    }

    // Unreachable: the forced-final iteration either completes or malforms.
    result.status = EpisodeStatus::malformed;
    result.error = ParseError{0, "think+answer", "episode failed to terminate"};
    return result;
}

}  // namespace omniforge
