#include "omniforge/model_client.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "omniforge/fingerprint.hpp"
#include "omniforge/hashing.hpp"
#include "omniforge/jsonl.hpp"

namespace omniforge {

namespace {

const char* kVocab[] = {
    "catalog", "listing", "review",  "order",   "brand",   "policy",  "refund",  "stream",
    "frame",   "audio",   "caption", "price",   "query",   "product", "detail",  "video",
    "intent",  "claim",   "region",  "variant", "bundle",  "seller",  "rating",  "shelf",
    "banner",  "segment", "voice",   "image",   "tag",     "metric",  "report",  "session"};
constexpr size_t kVocabSize = sizeof(kVocab) / sizeof(kVocab[0]);

double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

std::string words_from_hash(uint64_t h, size_t count) {
    std::string out;
    for (size_t i = 0; i < count; ++i) {
        if (i) out += ' ';
        out += kVocab[splitmix64(h + i) % kVocabSize];
    }
    return out;
}

std::vector<std::string> ws_tokens(const std::string& s) {
    std::vector<std::string> toks;
    std::istringstream is(s);
    std::string t;
    while (is >> t) toks.push_back(t);
    return toks;
}

std::string truncate_tokens(const std::string& s, int max_tokens, bool& truncated) {
    auto toks = ws_tokens(s);
    truncated = static_cast<int>(toks.size()) > max_tokens;
    if (!truncated) return s;
    std::string out;
    for (int i = 0; i < max_tokens; ++i) {
        if (i) out += ' ';
        out += toks[i];
    }
    return out;
}

TokenLogprobs synth_logprobs(uint64_t h, size_t n) {
    TokenLogprobs lp;
    lp.values.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        lp.values.push_back(-(0.05 + 3.0 * unit_double(splitmix64(h ^ (0xabcd0000ULL + i)))));
    }
    return lp;
}

// Pulls "key: value" from a protocol prompt; value runs to end of line.
std::string prompt_field(const std::string& prompt, const std::string& key) {
    std::string marker = key + ": ";
    size_t pos = prompt.find(marker);
    if (pos == std::string::npos) return "";
    size_t start = pos + marker.size();
    size_t end = prompt.find('\n', start);
    if (end == std::string::npos) end = prompt.size();
    return prompt.substr(start, end - start);
}

size_t count_occurrences(const std::string& hay, const std::string& needle) {
    size_t n = 0, pos = 0;
    while ((pos = hay.find(needle, pos)) != std::string::npos) {
        ++n;
        pos += needle.size();
    }
    return n;
}

std::string strip_angle(std::string s) {
    std::erase(s, '<');
    std::erase(s, '>');
    return s;
}

}  // namespace

const char* to_string(EffortLevel e) {
    switch (e) {
        case EffortLevel::non_thinking: return "non_thinking";
        case EffortLevel::medium: return "medium";
        case EffortLevel::high: return "high";
    }
    return "non_thinking";
}

std::optional<EffortLevel> effort_level_from_string(const std::string& s) {
    if (s == "non_thinking") return EffortLevel::non_thinking;
    if (s == "medium") return EffortLevel::medium;
    if (s == "high") return EffortLevel::high;
    return std::nullopt;
}

const char* to_string(FinishReason r) {
    switch (r) {
        case FinishReason::stop: return "stop";
        case FinishReason::length: return "length";
        case FinishReason::error: return "error";
    }
    return "stop";
}

std::optional<FinishReason> finish_reason_from_string(const std::string& s) {
    if (s == "stop") return FinishReason::stop;
    if (s == "length") return FinishReason::length;
    if (s == "error") return FinishReason::error;
    return std::nullopt;
}

void GenerationRequest::validate() const {
    bool has_text = false;
    for (const auto& seg : segments) {
        if (seg.kind == ModalityKind::text) has_text = true;
    }
    if (!has_text) throw std::invalid_argument("generation request needs at least one text segment");
    if (max_tokens < 1) throw std::invalid_argument("max_tokens must be >= 1");
    if (temperature < 0.0) throw std::invalid_argument("temperature must be >= 0");
}

std::string GenerationRequest::prompt_text() const {
    std::string out;
    for (const auto& seg : segments) {
        if (seg.kind != ModalityKind::text) continue;
        if (!out.empty()) out += '\n';
        out += seg.content;
    }
    return out;
}

RubricRegistry RubricRegistry::with_defaults() {
    RubricRegistry r;
    r.add("verifiable",
          "Compare the candidate answer with the reference answer after normalization. "
          "Score 1 for a match, 0 otherwise.");
    r.add("non_verifiable",
          "Rate how well the candidate answers the question on a 0 to 1 scale, "
          "considering completeness and correctness.");
    r.add("ecommerce",
          "Rate the candidate against the question for factual accuracy, policy "
          "compliance, and task completion in a commerce setting, on a 0 to 1 scale.");
    r.add("task_consistency",
          "Decide whether the question-answer pair genuinely exercises the listed tasks. "
          "Score above 0.5 only when the pair fits the tasks.");
    r.add("evidence_consistency",
          "Decide whether the answer is grounded in the provided evidence. "
          "Score above 0.5 only when every claim is supported.");
    return r;
}

void RubricRegistry::add(const std::string& id, std::string template_text) {
    rubrics_[id] = std::move(template_text);
}

bool RubricRegistry::has(const std::string& id) const { return rubrics_.count(id) > 0; }

const std::string& RubricRegistry::template_text(const std::string& id) const {
    auto it = rubrics_.find(id);
    if (it == rubrics_.end()) throw std::invalid_argument("unknown rubric: " + id);
    return it->second;
}

std::vector<std::string> RubricRegistry::ids() const {
    std::vector<std::string> out;
    out.reserve(rubrics_.size());
    for (const auto& [k, _] : rubrics_) out.push_back(k);
    return out;
}

void RubricRegistry::load_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) return;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() != ".txt") continue;
        add(entry.path().stem().string(), read_text_file(entry.path().string()));
    }
}

std::string normalize_answer(const std::string& text) { return canonicalize_text(text); }

// --- MockClient ---------------------------------------------------------

MockClient::MockClient(uint64_t seed, RubricRegistry rubrics)
    : seed_(seed), rubrics_(std::move(rubrics)) {}

void MockClient::set_rubric_table(const std::string& rubric_id, std::map<std::string, double> table) {
    rubric_tables_[rubric_id] = std::move(table);
}

GenerationResult MockClient::generate(const GenerationRequest& req) {
    req.validate();
    const std::string prompt = req.prompt_text();
    uint64_t h = fnv1a64(prompt);
    h = splitmix64(h ^ seed_ ^ static_cast<uint64_t>(req.seed));
    h = splitmix64(h ^ fnv1a64(to_string(req.effort)) ^ (static_cast<uint64_t>(req.max_tokens) << 32) ^
                   static_cast<uint64_t>(req.temperature * 1e6));

    GenerationResult res;

    if (prompt.rfind("agentic_episode\n", 0) == 0) {
        // Scripted search-agent behavior: a hash of the question decides how
        // many tool calls this episode wants; the transcript shows how many
        // have completed so far.
        std::string question = prompt_field(prompt, "question");
        std::string directive = prompt_field(prompt, "directive");
        size_t done = count_occurrences(prompt, "<tool_response>");
        uint64_t qh = splitmix64(fnv1a64(question) ^ seed_ ^ static_cast<uint64_t>(req.seed));
        size_t target = qh % 3;
        auto qtoks = ws_tokens(strip_angle(question));
        std::string topic = qtoks.empty() ? "topic" : qtoks[0];
        if (directive == "final_answer" || done >= target) {
            res.text = "<think>combining evidence about " + topic + " round " +
                       std::to_string(done) + "</think>\n<answer>finding for " + topic + ": " +
                       words_from_hash(qh, 4) + "</answer>";
        } else {
            std::string query = topic;
            for (size_t i = 1; i < std::min<size_t>(3, qtoks.size()); ++i) query += ' ' + qtoks[i];
            query += " facet " + std::to_string(done);
            json call = {{"k", 3}, {"mode", "t2t"}, {"query", query}};
            res.text = "<think>need evidence about " + topic + " round " + std::to_string(done) +
                       "</think>\n<tool_call>" + call.dump() + "</tool_call>";
        }
    } else if (prompt.rfind("task_tagging\n", 0) == 0) {
        std::string q = prompt_field(prompt, "question");
        std::string a = prompt_field(prompt, "answer");
        json scores = json::object();
        std::istringstream tasks(prompt_field(prompt, "tasks"));
        std::string task_id;
        while (std::getline(tasks, task_id, ',')) {
            if (task_id.empty()) continue;
            double u = unit_double(splitmix64(fnv1a64(q + "\x1f" + a, fnv1a64(task_id)) ^ seed_));
            if (u >= 0.3) scores[task_id] = u;
        }
        res.text = scores.dump();
    } else {
        res.text = words_from_hash(splitmix64(h ^ 0x11), 1 + splitmix64(h ^ 0x22) % 40);
    }

    bool truncated = false;
    res.text = truncate_tokens(res.text, req.max_tokens, truncated);
    res.finish_reason = truncated ? FinishReason::length : FinishReason::stop;

    if (req.effort != EffortLevel::non_thinking && res.reasoning_text.empty()) {
        size_t target = req.effort == EffortLevel::medium ? 100 + splitmix64(h ^ 0x33) % 300
                                                          : 600 + splitmix64(h ^ 0x44) % 1000;
        res.reasoning_text = words_from_hash(splitmix64(h ^ 0x55), target);
    }
    if (req.effort == EffortLevel::non_thinking) res.reasoning_text.clear();

    res.token_logprobs = synth_logprobs(h, ws_tokens(res.text).size());
    return res;
}

TokenLogprobs MockClient::score(const std::string& context, const std::string& continuation) {
    auto toks = ws_tokens(continuation);
    if (toks.empty()) throw std::invalid_argument("score: continuation must be non-empty");
    uint64_t ctx_h = splitmix64(fnv1a64(context) ^ seed_);
    TokenLogprobs lp;
    lp.values.reserve(toks.size());
    for (size_t i = 0; i < toks.size(); ++i) {
        uint64_t th = splitmix64(ctx_h ^ fnv1a64(toks[i]) ^ (i * 0x9e3779b9ULL));
        lp.values.push_back(-(0.05 + 3.0 * unit_double(th)));
    }
    return lp;
}

std::optional<double> MockClient::judge(const JudgeRequest& req) {
    if (!rubrics_.has(req.rubric_id)) throw std::invalid_argument("unknown rubric: " + req.rubric_id);

    auto table_it = rubric_tables_.find(req.rubric_id);
    if (table_it != rubric_tables_.end()) {
        auto hit = table_it->second.find(req.candidate);
        if (hit != table_it->second.end()) return clamp01(hit->second);
    }
    if (req.rubric_id == "verifiable") {
        std::string cand = normalize_answer(req.candidate);
        if (cand.empty()) return 0.0;
        return cand == normalize_answer(req.reference.value_or("")) ? 1.0 : 0.0;
    }
    uint64_t h = fnv1a64(req.question, fnv1a64(req.candidate, fnv1a64(req.reference.value_or(""))));
    h = splitmix64(h ^ fnv1a64(req.rubric_id) ^ seed_);
    return clamp01(unit_double(h));
}

// --- HttpClient ----------------------------------------------------------

HttpClient::HttpClient(std::string base_url, RubricRegistry rubrics, int timeout_seconds)
    : base_url_(std::move(base_url)), rubrics_(std::move(rubrics)), timeout_seconds_(timeout_seconds) {}

std::string HttpClient::post_json(const std::string& path, const std::string& body) {
    httplib::Client cli(base_url_);
    cli.set_connection_timeout(timeout_seconds_);
    cli.set_read_timeout(timeout_seconds_);
    auto res = cli.Post(path, body, "application/json");
    if (!res) {
        throw ClientError("backend unreachable: " + base_url_ + path, /*retryable=*/true);
    }
    if (res->status != 200) {
        bool retryable = res->status >= 500;
        throw ClientError("backend status " + std::to_string(res->status) + " for " + path, retryable);
    }
    return res->body;
}

namespace {

json parse_reply(const std::string& body, const std::string& path) {
    json j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ClientError("protocol error: non-JSON reply from " + path, /*retryable=*/false);
    }
    return j;
}

TokenLogprobs logprobs_from_reply(const json& j, const std::string& path) {
    if (!j.contains("token_logprobs") || !j["token_logprobs"].is_array()) {
        throw ClientError("protocol error: missing token_logprobs from " + path, false);
    }
    TokenLogprobs lp;
    for (const auto& v : j["token_logprobs"]) {
        if (!v.is_number()) throw ClientError("protocol error: non-numeric logprob", false);
        double d = v.get<double>();
        if (!(d <= 0.0) || !std::isfinite(d)) {
            throw ClientError("protocol error: logprob out of range", false);
        }
        lp.values.push_back(d);
    }
    return lp;
}

}  // namespace

GenerationResult HttpClient::generate(const GenerationRequest& req) {
    req.validate();
    json body;
    body["segments"] = json::array();
    for (const auto& seg : req.segments) {
        body["segments"].push_back({{"kind", to_string(seg.kind)}, {"content", seg.content}});
    }
    body["effort"] = to_string(req.effort);
    body["max_tokens"] = req.max_tokens;
    body["temperature"] = req.temperature;
    body["seed"] = req.seed;

    json j = parse_reply(post_json("/v1/generate", body.dump()), "/v1/generate");
    if (!j.contains("text") || !j["text"].is_string() || !j.contains("finish_reason") ||
        !j["finish_reason"].is_string()) {
        throw ClientError("protocol error: malformed /v1/generate reply", false);
    }
    GenerationResult res;
    res.text = j["text"].get<std::string>();
    if (j.contains("reasoning_text") && j["reasoning_text"].is_string()) {
        res.reasoning_text = j["reasoning_text"].get<std::string>();
    }
    auto fr = finish_reason_from_string(j["finish_reason"].get<std::string>());
    if (!fr) throw ClientError("protocol error: bad finish_reason", false);
    res.finish_reason = *fr;
    res.token_logprobs = logprobs_from_reply(j, "/v1/generate");
    if (req.effort == EffortLevel::non_thinking && !res.reasoning_text.empty()) {
        throw ClientError("protocol error: reasoning_text present in non_thinking mode", false);
    }
    return res;
}

TokenLogprobs HttpClient::score(const std::string& context, const std::string& continuation) {
    if (continuation.empty()) throw std::invalid_argument("score: continuation must be non-empty");
    json body = {{"context", context}, {"continuation", continuation}};
    json j = parse_reply(post_json("/v1/score", body.dump()), "/v1/score");
    return logprobs_from_reply(j, "/v1/score");
}

std::optional<double> HttpClient::judge(const JudgeRequest& req) {
    if (!rubrics_.has(req.rubric_id)) throw std::invalid_argument("unknown rubric: " + req.rubric_id);
    json body = {{"question", req.question},
                 {"candidate", req.candidate},
                 {"rubric_id", req.rubric_id},
                 {"rubric_template", rubrics_.template_text(req.rubric_id)}};
    body["reference"] = req.reference ? json(*req.reference) : json(nullptr);
    try {
        json j = parse_reply(post_json("/v1/judge", body.dump()), "/v1/judge");
        if (!j.contains("score") || !j["score"].is_number()) return std::nullopt;
        double s = j["score"].get<double>();
        if (!std::isfinite(s)) return std::nullopt;
        return clamp01(s);
    } catch (const ClientError&) {
        return std::nullopt;
    }
}

// --- RetryingClient ------------------------------------------------------

RetryingClient::RetryingClient(std::shared_ptr<ModelClient> inner, int attempts, int backoff_ms)
    : inner_(std::move(inner)), attempts_(std::max(1, attempts)), backoff_ms_(backoff_ms) {}

void RetryingClient::backoff(int attempt) const {
    if (backoff_ms_ <= 0) return;
    std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms_ << (attempt - 1)));
}

GenerationResult RetryingClient::generate(const GenerationRequest& req) {
    for (int attempt = 1;; ++attempt) {
        try {
            return inner_->generate(req);
        } catch (const ClientError& e) {
            if (!e.retryable || attempt >= attempts_) {
                throw ClientError(e.what(), e.retryable, attempt);
            }
            backoff(attempt);
        }
    }
}

TokenLogprobs RetryingClient::score(const std::string& context, const std::string& continuation) {
    for (int attempt = 1;; ++attempt) {
        try {
            return inner_->score(context, continuation);
        } catch (const ClientError& e) {
            if (!e.retryable || attempt >= attempts_) {
                throw ClientError(e.what(), e.retryable, attempt);
            }
            backoff(attempt);
        }
    }
}

std::optional<double> RetryingClient::judge(const JudgeRequest& req) {
    for (int attempt = 1; attempt <= attempts_; ++attempt) {
        try {
            auto s = inner_->judge(req);
            if (s) return s;
        } catch (const ClientError&) {
            // fall through to retry
        }
        if (attempt < attempts_) backoff(attempt);
    }
    return std::nullopt;
}

// --- ScriptedClient ------------------------------------------------------

void ScriptedClient::push_generation_text(const std::string& text) {
    GenerationResult r;
    r.text = text;
    r.finish_reason = FinishReason::stop;
    r.token_logprobs.values.assign(ws_tokens(text).size(), -1.0);
    push_generation(std::move(r));
}

GenerationResult ScriptedClient::generate(const GenerationRequest& req) {
    req.validate();
    ++calls_;
    if (fail_generations_ > 0) {
        --fail_generations_;
        throw ClientError("scripted failure", /*retryable=*/true);
    }
    if (generations_.empty()) throw ClientError("script exhausted", /*retryable=*/false);
    GenerationResult r = std::move(generations_.front());
    generations_.pop_front();
    return r;
}

TokenLogprobs ScriptedClient::score(const std::string& context, const std::string& continuation) {
    auto toks = ws_tokens(continuation);
    if (toks.empty()) throw std::invalid_argument("score: continuation must be non-empty");
    if (fail_scores_ > 0) {
        --fail_scores_;
        throw ClientError("scripted score failure", /*retryable=*/true);
    }
    auto it = score_table_.find(context + "\x1f" + continuation);
    if (it == score_table_.end()) it = score_table_.find(continuation);
    if (it != score_table_.end()) return TokenLogprobs{it->second};
    return TokenLogprobs{std::vector<double>(toks.size(), -1.0)};
}

std::optional<double> ScriptedClient::judge(const JudgeRequest& req) {
    auto it = judge_scores_.find(req.rubric_id);
    if (it != judge_scores_.end()) {
        if (it->second < 0) return std::nullopt;
        return clamp01(it->second);
    }
    if (req.rubric_id == "verifiable") {
        std::string cand = normalize_answer(req.candidate);
        if (cand.empty()) return 0.0;
        return cand == normalize_answer(req.reference.value_or("")) ? 1.0 : 0.0;
    }
    return std::nullopt;
}

std::shared_ptr<ModelClient> make_default_client(uint64_t seed) {
    const char* url = std::getenv("OMNIFORGE_BACKEND_URL");
    if (url && *url) {
        return std::make_shared<RetryingClient>(std::make_shared<HttpClient>(url), 3, 100);
    }
    return std::make_shared<MockClient>(seed);
}

}  // namespace omniforge
