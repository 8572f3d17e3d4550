#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "omniforge/corpus.hpp"

namespace omniforge {

enum class EffortLevel { non_thinking, medium, high };

const char* to_string(EffortLevel e);
std::optional<EffortLevel> effort_level_from_string(const std::string& s);

// Natural-log probabilities, one per scored token; every value <= 0.
struct TokenLogprobs {
    std::vector<double> values;
};

struct RequestSegment {
    ModalityKind kind = ModalityKind::text;
    std::string content;  // inline text, or a locator for non-text kinds
};

struct GenerationRequest {
    std::vector<RequestSegment> segments;
    EffortLevel effort = EffortLevel::non_thinking;
    int max_tokens = 256;
    double temperature = 0.0;
    int64_t seed = 0;

    void validate() const;           // at least one text segment, max_tokens >= 1
    std::string prompt_text() const; // text segments joined by newlines
};

enum class FinishReason { stop, length, error };

const char* to_string(FinishReason r);
std::optional<FinishReason> finish_reason_from_string(const std::string& s);

struct GenerationResult {
    std::string text;
    std::string reasoning_text;  // empty whenever effort = non_thinking
    TokenLogprobs token_logprobs;
    FinishReason finish_reason = FinishReason::stop;
};

struct JudgeRequest {
    std::string question;
    std::string candidate;
    std::optional<std::string> reference;
    std::string rubric_id;
};

// Rubric prompt templates are data, keyed by rubric id. The three default
// families cover verifiable, non-verifiable, and e-commerce task scoring;
// two auxiliary rubrics back the curation consistency checks.
class RubricRegistry {
  public:
    static RubricRegistry with_defaults();

    void add(const std::string& id, std::string template_text);
    bool has(const std::string& id) const;
    const std::string& template_text(const std::string& id) const;
    std::vector<std::string> ids() const;

    // Loads every *.txt in `dir` as a rubric named after the file stem.
    void load_dir(const std::string& dir);

  private:
    std::map<std::string, std::string> rubrics_;
};

// Transport or protocol failure from a backend call.
class ClientError : public std::runtime_error {
  public:
    ClientError(std::string message, bool retryable, int attempts = 1)
        : std::runtime_error(std::move(message)), retryable(retryable), attempts(attempts) {}
    bool retryable;
    int attempts;
};

// The single abstraction over model backends: generation, token scoring,
// and judging. generate/score throw ClientError on backend failure; judge
// reports failure as std::nullopt (unknown), never a default score. Judge
// scores are clamped to [0,1]. Implementations must be safe for concurrent
// calls.
class ModelClient {
  public:
    virtual ~ModelClient() = default;
    virtual GenerationResult generate(const GenerationRequest& req) = 0;
    virtual TokenLogprobs score(const std::string& context, const std::string& continuation) = 0;
    virtual std::optional<double> judge(const JudgeRequest& req) = 0;
    virtual std::string name() const = 0;
};

// Deterministic offline backend: every reply is a pure function of the
// request and the client seed. Understands the episode and task-tagging
// prompt protocols so pipeline runs are reproducible without a server.
class MockClient : public ModelClient {
  public:
    explicit MockClient(uint64_t seed = 0, RubricRegistry rubrics = RubricRegistry::with_defaults());

    GenerationResult generate(const GenerationRequest& req) override;
    TokenLogprobs score(const std::string& context, const std::string& continuation) override;
    std::optional<double> judge(const JudgeRequest& req) override;
    std::string name() const override { return "mock:" + std::to_string(seed_); }

    // Fixture hook: pin judge scores for specific candidates under a rubric.
    void set_rubric_table(const std::string& rubric_id, std::map<std::string, double> table);

    uint64_t seed() const { return seed_; }

  private:
    uint64_t seed_;
    RubricRegistry rubrics_;
    std::map<std::string, std::map<std::string, double>> rubric_tables_;
};

// HTTP reference transport. Endpoints: POST /v1/generate, /v1/score,
// /v1/judge with JSON bodies (schemas in docs/formats.md).
class HttpClient : public ModelClient {
  public:
    explicit HttpClient(std::string base_url,
                        RubricRegistry rubrics = RubricRegistry::with_defaults(),
                        int timeout_seconds = 30);

    GenerationResult generate(const GenerationRequest& req) override;
    TokenLogprobs score(const std::string& context, const std::string& continuation) override;
    std::optional<double> judge(const JudgeRequest& req) override;
    std::string name() const override { return "http:" + base_url_; }

  private:
    std::string post_json(const std::string& path, const std::string& body);

    std::string base_url_;
    RubricRegistry rubrics_;
    int timeout_seconds_;
};

// Retry decorator: up to `attempts` tries with exponential backoff for
// retryable failures, then the error surfaces unchanged (generate/score)
// or stays unknown (judge). Scores are never fabricated.
class RetryingClient : public ModelClient {
  public:
    RetryingClient(std::shared_ptr<ModelClient> inner, int attempts = 3, int backoff_ms = 100);

    GenerationResult generate(const GenerationRequest& req) override;
    TokenLogprobs score(const std::string& context, const std::string& continuation) override;
    std::optional<double> judge(const JudgeRequest& req) override;
    std::string name() const override { return inner_->name(); }

  private:
    void backoff(int attempt) const;

    std::shared_ptr<ModelClient> inner_;
    int attempts_;
    int backoff_ms_;
};

// Test/fixture client: generate pops scripted replies in order, score and
// judge come from tables. Not a pure function of the request; intended for
// scripted policies and error-path fixtures.
class ScriptedClient : public ModelClient {
  public:
    ScriptedClient() = default;

    GenerationResult generate(const GenerationRequest& req) override;
    TokenLogprobs score(const std::string& context, const std::string& continuation) override;
    std::optional<double> judge(const JudgeRequest& req) override;
    std::string name() const override { return "scripted"; }

    void push_generation(GenerationResult r) { generations_.push_back(std::move(r)); }
    void push_generation_text(const std::string& text);
    // A negative score means "reply unknown" for that rubric.
    void set_judge_score(const std::string& rubric_id, double score) { judge_scores_[rubric_id] = score; }
    // Keys are either "context\x1fcontinuation" or bare continuation.
    void set_score_table(std::map<std::string, std::vector<double>> t) { score_table_ = std::move(t); }
    void fail_next_generations(int n) { fail_generations_ = n; }
    void fail_next_scores(int n) { fail_scores_ = n; }

    int calls() const { return calls_; }

  private:
    std::deque<GenerationResult> generations_;
    std::map<std::string, double> judge_scores_;
    std::map<std::string, std::vector<double>> score_table_;
    int fail_generations_ = 0;
    int fail_scores_ = 0;
    int calls_ = 0;
};

// Honors OMNIFORGE_BACKEND_URL: set -> retrying HTTP client, absent -> mock.
std::shared_ptr<ModelClient> make_default_client(uint64_t seed = 0);

// Normalization used by the verifiable exact-match rubric.
std::string normalize_answer(const std::string& text);

}  // namespace omniforge
