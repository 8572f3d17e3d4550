#include "omniforge/trajectory.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace omniforge {

namespace {

bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(),
                       [](unsigned char c) { return std::isspace(c) != 0; });
}

constexpr EventKind kAllKinds[] = {EventKind::think, EventKind::tool_call, EventKind::tool_response,
                                   EventKind::answer};

// Grammar states for (think tool_call tool_response)^N think answer.
enum class State { expect_think, expect_call_or_answer, expect_response, done };

bool allowed(State s, EventKind k) {
    switch (s) {
        case State::expect_think: return k == EventKind::think;
        case State::expect_call_or_answer: return k == EventKind::tool_call || k == EventKind::answer;
        case State::expect_response: return k == EventKind::tool_response;
        case State::done: return false;
    }
    return false;
}

State next_state(State s, EventKind k) {
    (void)s;
    switch (k) {
        case EventKind::think: return State::expect_call_or_answer;
        case EventKind::tool_call: return State::expect_response;
        case EventKind::tool_response: return State::expect_think;
        case EventKind::answer: return State::done;
    }
    return State::done;
}

const char* expected_for(State s) {
    switch (s) {
        case State::expect_think: return "think";
        case State::expect_call_or_answer: return "tool_call or answer";
        case State::expect_response: return "tool_response";
        case State::done: return "end of input";
    }
    return "";
}

// Payload validation shared by parser and serializer. Returns an error
// message, or empty string when the payload is fine; fills the event.
std::string decode_payload(EventKind kind, const std::string& payload, TrajectoryEvent& out) {
    out.kind = kind;
    switch (kind) {
        case EventKind::think:
        case EventKind::answer:
            if (is_blank(payload)) return "empty payload";
            out.text = payload;
            return "";
        case EventKind::tool_call: {
            json j = json::parse(payload, nullptr, false);
            if (j.is_discarded() || !j.is_object()) return "tool_call payload is not a JSON object";
            if (!j.contains("mode") || !j["mode"].is_string()) return "tool_call missing mode";
            auto mode = search_mode_from_string(j["mode"].get<std::string>());
            if (!mode) return "tool_call has unknown mode";
            if (!j.contains("query") || !j["query"].is_string() || j["query"].get<std::string>().empty()) {
                return "tool_call missing non-empty query";
            }
            out.call.mode = *mode;
            out.call.query = j["query"].get<std::string>();
            out.call.k = 5;
            if (j.contains("k")) {
                if (!j["k"].is_number_integer() || j["k"].get<int64_t>() < 1) {
                    return "tool_call k must be a positive integer";
                }
                out.call.k = static_cast<int>(j["k"].get<int64_t>());
            }
            return "";
        }
        case EventKind::tool_response: {
            json j = json::parse(payload, nullptr, false);
            if (j.is_discarded() || !j.is_array()) return "tool_response payload is not a JSON array";
            out.hits.clear();
            for (const auto& item : j) {
                auto hit = Hit::from_json(item);
                if (!hit) return "tool_response contains a malformed hit";
                out.hits.push_back(std::move(*hit));
            }
            for (size_t i = 1; i < out.hits.size(); ++i) {
                const Hit& prev = out.hits[i - 1];
                const Hit& cur = out.hits[i];
                if (cur.score > prev.score || (cur.score == prev.score && cur.id < prev.id)) {
                    return "tool_response hits not sorted";
                }
            }
            return "";
        }
    }
    return "unknown event kind";
}

std::string encode_payload(const TrajectoryEvent& event) {
    switch (event.kind) {
        case EventKind::think:
        case EventKind::answer: return event.text;
        case EventKind::tool_call: return event.call.to_json().dump();
        case EventKind::tool_response: {
            json arr = json::array();
            for (const auto& h : event.hits) arr.push_back(h.to_json());
            return arr.dump();
        }
    }
    return "";
}

}  // namespace

const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::think: return "think";
        case EventKind::tool_call: return "tool_call";
        case EventKind::tool_response: return "tool_response";
        case EventKind::answer: return "answer";
    }
    return "think";
}

const char* to_string(SearchMode m) {
    switch (m) {
        case SearchMode::t2t: return "t2t";
        case SearchMode::t2i: return "t2i";
        case SearchMode::i2i: return "i2i";
    }
    return "t2t";
}

std::optional<SearchMode> search_mode_from_string(const std::string& s) {
    if (s == "t2t") return SearchMode::t2t;
    if (s == "t2i") return SearchMode::t2i;
    if (s == "i2i") return SearchMode::i2i;
    return std::nullopt;
}

json Hit::to_json() const { return json{{"id", id}, {"score", score}, {"snippet", snippet}}; }

std::optional<Hit> Hit::from_json(const json& j) {
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("score") ||
        !j["score"].is_number() || !j.contains("snippet") || !j["snippet"].is_string()) {
        return std::nullopt;
    }
    double score = j["score"].get<double>();
    if (!std::isfinite(score)) return std::nullopt;
    return Hit{j["id"].get<std::string>(), score, j["snippet"].get<std::string>()};
}

json ToolCall::to_json() const { return json{{"k", k}, {"mode", to_string(mode)}, {"query", query}}; }

TrajectoryEvent TrajectoryEvent::think(std::string text) {
    TrajectoryEvent e;
    e.kind = EventKind::think;
    e.text = std::move(text);
    return e;
}

TrajectoryEvent TrajectoryEvent::answer(std::string text) {
    TrajectoryEvent e;
    e.kind = EventKind::answer;
    e.text = std::move(text);
    return e;
}

TrajectoryEvent TrajectoryEvent::tool_call_event(ToolCall call) {
    TrajectoryEvent e;
    e.kind = EventKind::tool_call;
    e.call = std::move(call);
    return e;
}

TrajectoryEvent TrajectoryEvent::tool_response_event(std::vector<Hit> hits) {
    TrajectoryEvent e;
    e.kind = EventKind::tool_response;
    e.hits = std::move(hits);
    return e;
}

bool operator==(const Hit& a, const Hit& b) {
    return a.id == b.id && a.score == b.score && a.snippet == b.snippet;
}

bool operator==(const ToolCall& a, const ToolCall& b) {
    return a.mode == b.mode && a.query == b.query && a.k == b.k;
}

bool operator==(const TrajectoryEvent& a, const TrajectoryEvent& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
        case EventKind::think:
        case EventKind::answer: return a.text == b.text;
        case EventKind::tool_call: return a.call == b.call;
        case EventKind::tool_response: return a.hits == b.hits;
    }
    return false;
}

size_t Trajectory::turns() const {
    return static_cast<size_t>(std::count_if(events.begin(), events.end(), [](const auto& e) {
        return e.kind == EventKind::tool_call;
    }));
}

TagConfig TagConfig::defaults() {
    TagConfig c;
    for (EventKind k : kAllKinds) {
        std::string name = to_string(k);
        c.tags[k] = {"<" + name + ">", "</" + name + ">"};
    }
    return c;
}

BlocksOutcome parse_blocks(const std::string& text, const TagConfig& tags) {
    BlocksOutcome out;
    size_t pos = 0;
    while (true) {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
        if (pos >= text.size()) return out;

        std::optional<EventKind> kind;
        for (EventKind k : kAllKinds) {
            if (text.compare(pos, tags.open(k).size(), tags.open(k)) == 0) {
                kind = k;
                break;
            }
        }
        if (!kind) {
            out.error = ParseError{pos, "opening tag", "unknown tag or stray text"};
            return out;
        }
        size_t body_start = pos + tags.open(*kind).size();
        // Scan to the first matching closer; nesting is not part of the format.
        size_t body_end = text.find(tags.close(*kind), body_start);
        if (body_end == std::string::npos) {
            out.error = ParseError{pos, tags.close(*kind), std::string("unterminated ") + to_string(*kind) +
                                                               " block"};
            return out;
        }
        TrajectoryEvent event;
        std::string payload = text.substr(body_start, body_end - body_start);
        std::string problem = decode_payload(*kind, payload, event);
        if (!problem.empty()) {
            out.error = ParseError{body_start, std::string(to_string(*kind)) + " payload", problem};
            return out;
        }
        out.events.push_back(std::move(event));
        pos = body_end + tags.close(*kind).size();
    }
}

ParseOutcome parse_trajectory(const std::string& text, const TagConfig& tags) {
    ParseOutcome out;

    // Re-scan block by block so error positions refer to the source text.
    size_t pos = 0;
    State state = State::expect_think;
    Trajectory traj;
    while (true) {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
        if (pos >= text.size()) {
            if (state == State::done) {
                out.trajectory = std::move(traj);
            } else {
                out.error = ParseError{pos, expected_for(state), "unexpected end of input"};
            }
            return out;
        }
        if (state == State::done) {
            out.error = ParseError{pos, "end of input", "trailing content after answer"};
            return out;
        }

        std::optional<EventKind> kind;
        for (EventKind k : kAllKinds) {
            if (text.compare(pos, tags.open(k).size(), tags.open(k)) == 0) {
                kind = k;
                break;
            }
        }
        if (!kind) {
            out.error = ParseError{pos, expected_for(state), "unknown tag or stray text"};
            return out;
        }
        if (!allowed(state, *kind)) {
            out.error = ParseError{pos, expected_for(state),
                                   std::string("out-of-order ") + to_string(*kind) + " event"};
            return out;
        }
        size_t body_start = pos + tags.open(*kind).size();
        size_t body_end = text.find(tags.close(*kind), body_start);
        if (body_end == std::string::npos) {
            out.error = ParseError{pos, tags.close(*kind), std::string("unterminated ") + to_string(*kind) +
                                                               " block"};
            return out;
        }
        TrajectoryEvent event;
        std::string problem = decode_payload(*kind, text.substr(body_start, body_end - body_start), event);
        if (!problem.empty()) {
            out.error = ParseError{body_start, std::string(to_string(*kind)) + " payload", problem};
            return out;
        }
        traj.events.push_back(std::move(event));
        state = next_state(state, *kind);
        pos = body_end + tags.close(*kind).size();
    }
}

int validate_format(const std::string& text, const TagConfig& tags) {
    return parse_trajectory(text, tags).ok() ? 1 : 0;
}

std::string serialize_event(const TrajectoryEvent& event, const TagConfig& tags) {
    TrajectoryEvent reparsed;
    std::string payload = encode_payload(event);
    std::string problem = decode_payload(event.kind, payload, reparsed);
    if (!problem.empty()) {
        throw std::invalid_argument(std::string("serialize: invalid ") + to_string(event.kind) +
                                    " event: " + problem);
    }
    if (payload.find(tags.close(event.kind)) != std::string::npos) {
        throw std::invalid_argument(std::string("serialize: payload of ") + to_string(event.kind) +
                                    " contains its own closing tag");
    }
    return tags.open(event.kind) + payload + tags.close(event.kind);
}

std::string serialize(const Trajectory& trajectory, const TagConfig& tags) {
    State state = State::expect_think;
    for (const auto& event : trajectory.events) {
        if (!allowed(state, event.kind)) {
            throw std::invalid_argument(std::string("serialize: ") + to_string(event.kind) +
                                        " event where " + expected_for(state) + " was required");
        }
        state = next_state(state, event.kind);
    }
    if (state != State::done) {
        throw std::invalid_argument(std::string("serialize: incomplete trajectory, missing ") +
                                    expected_for(state));
    }
    std::string out;
    for (size_t i = 0; i < trajectory.events.size(); ++i) {
        if (i) out += '\n';
        out += serialize_event(trajectory.events[i], tags);
    }
    return out;
}

}  // namespace omniforge
