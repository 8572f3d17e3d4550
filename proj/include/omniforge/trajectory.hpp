#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "omniforge/jsonl.hpp"

namespace omniforge {

enum class EventKind { think, tool_call, tool_response, answer };

const char* to_string(EventKind k);

enum class SearchMode { t2t, t2i, i2i };

const char* to_string(SearchMode m);
std::optional<SearchMode> search_mode_from_string(const std::string& s);

struct Hit {
    std::string id;
    double score = 0.0;
    std::string snippet;  // document snippet for t2t, opaque locator for vector modes

    json to_json() const;
    static std::optional<Hit> from_json(const json& j);
};

struct ToolCall {
    SearchMode mode = SearchMode::t2t;
    std::string query;  // text (t2t/t2i) or vector locator (i2i)
    int k = 5;

    json to_json() const;
};

struct TrajectoryEvent {
    EventKind kind = EventKind::think;
    std::string text;       // think/answer payload, stored verbatim
    ToolCall call;          // tool_call payload
    std::vector<Hit> hits;  // tool_response payload

    static TrajectoryEvent think(std::string text);
    static TrajectoryEvent answer(std::string text);
    static TrajectoryEvent tool_call_event(ToolCall call);
    static TrajectoryEvent tool_response_event(std::vector<Hit> hits);
};

bool operator==(const Hit& a, const Hit& b);
bool operator==(const ToolCall& a, const ToolCall& b);
bool operator==(const TrajectoryEvent& a, const TrajectoryEvent& b);

// Events obeying (think tool_call tool_response)^N think answer, N >= 0.
struct Trajectory {
    std::vector<TrajectoryEvent> events;

    size_t turns() const;  // N = number of tool_call events
};

struct ParseError {
    size_t position = 0;     // byte offset of the offending location
    std::string expected;    // token class the grammar wanted here
    std::string message;
};

// Surface syntax is configurable tag pairs around each event payload.
struct TagConfig {
    std::map<EventKind, std::pair<std::string, std::string>> tags;

    static TagConfig defaults();  // <think>...</think> etc.

    const std::string& open(EventKind k) const { return tags.at(k).first; }
    const std::string& close(EventKind k) const { return tags.at(k).second; }
};

struct ParseOutcome {
    std::optional<Trajectory> trajectory;
    std::optional<ParseError> error;

    bool ok() const { return trajectory.has_value(); }
};

// Total: any byte string yields either a trajectory or a structured error.
ParseOutcome parse_trajectory(const std::string& text, const TagConfig& tags = TagConfig::defaults());

// Tag-delimited blocks in order, payload-validated but with no grammar-order
// enforcement; the episode runner uses this to read single policy steps.
struct BlocksOutcome {
    std::vector<TrajectoryEvent> events;
    std::optional<ParseError> error;

    bool ok() const { return !error.has_value(); }
};
BlocksOutcome parse_blocks(const std::string& text, const TagConfig& tags = TagConfig::defaults());

// 1 iff the text parses as a complete trajectory; total over raw bytes.
int validate_format(const std::string& text, const TagConfig& tags = TagConfig::defaults());

// Canonical text: blocks joined by single newlines, tool payloads as compact
// JSON with sorted keys. parse(serialize(t)) == t for every valid t; invalid
// trajectories are rejected with std::invalid_argument.
std::string serialize(const Trajectory& trajectory, const TagConfig& tags = TagConfig::defaults());
std::string serialize_event(const TrajectoryEvent& event, const TagConfig& tags = TagConfig::defaults());

}  // namespace omniforge
