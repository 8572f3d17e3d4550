#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "omniforge/corpus.hpp"
#include "omniforge/jsonl.hpp"
#include "omniforge/model_client.hpp"

namespace omniforge {

// exp(-mean(logprobs)); >= 1 for genuine log-probabilities. Throws on empty.
double perplexity(const TokenLogprobs& logprobs);

struct IFDScore {
    double value = 0.0;      // cond_ppl / uncond_ppl
    double cond_ppl = 0.0;   // PPL of the answer given the question
    double uncond_ppl = 0.0; // PPL of the answer alone
};

// Both inputs score the same answer, so they must agree on token count.
IFDScore ifd(const TokenLogprobs& cond, const TokenLogprobs& uncond);

struct PassRate {
    int n_rollouts = 0;
    int n_correct = 0;
    double accuracy = 0.0;

    static PassRate of(int n_correct, int n_rollouts);
};

struct IFDRecord {
    std::string sample_id;
    double ifd_value = 0.0;
    double cond_ppl = 0.0;
    double uncond_ppl = 0.0;

    json to_json() const;
};

struct PassRateRecord {
    std::string question_id;
    int n = 0;
    int correct = 0;
    double accuracy = 0.0;

    json to_json() const;
};

struct IFDFilterResult {
    DatasetManifest manifest;            // survivors: IFD >= threshold (inclusive)
    std::vector<IFDRecord> report;       // every scored sample, survivor or not
    std::vector<std::string> removed;
    std::vector<std::string> rescore;    // scorer failures: neither kept nor dropped
};

// Conditional context is the question, unconditional context is empty; both
// score the sample's answer with the same client.
IFDFilterResult ifd_filter(const DatasetManifest& manifest, const Corpus& corpus,
                           ModelClient& scorer, double threshold);

using Verifier =
    std::function<bool(const std::string& question, const std::string& gold, const std::string& rollout)>;

struct CrossModelResult {
    PassRate rate;                        // pooled over all completed rollouts
    bool partial = false;                 // true when any client failed
    std::vector<std::string> failed_clients;
};

// Pools clients.size() * n_per_client rollouts. A failing client flags the
// result partial; completed rollouts are never extrapolated. Throws if no
// rollout completes at all (no PassRate can be formed), or when fewer than
// two distinct clients are supplied.
CrossModelResult cross_model_pass_rate(const std::string& question, const std::string& gold,
                                       const std::vector<std::shared_ptr<ModelClient>>& clients,
                                       int n_per_client, const Verifier& verifier);

// Retained ids, sorted: low <= accuracy <= high, inclusive both ends.
std::vector<std::string> zpd_filter(const std::map<std::string, PassRate>& rates, double low = 0.25,
                                    double high = 0.75);

struct RolloutFilterResult {
    DatasetManifest manifest;
    std::vector<std::string> removed;
    std::vector<std::string> quarantined;  // rollout or judge failures
    std::vector<PassRateRecord> report;
};

// Stage-3 rejection sampling: n rollouts per sample, survivor iff the pass
// rate lies in [low_keep, high_keep]. Defaults (1/n, 1-1/n) drop exactly the
// all-correct and all-incorrect extremes. Correctness comes from the client's
// own verifiable judge (candidate vs the sample answer).
RolloutFilterResult rejection_sample_s3(const DatasetManifest& manifest, const Corpus& corpus,
                                        ModelClient& client, int n,
                                        std::optional<double> low_keep = std::nullopt,
                                        std::optional<double> high_keep = std::nullopt);

struct ColdstartResult {
    std::vector<Sample> selected;          // pass rate < max_pass_rate (strict)
    std::vector<std::string> removed;
    std::vector<std::string> quarantined;
    std::vector<PassRateRecord> report;
};

// Cold-start QA selection keeps only pairs the model cannot already answer
// reliably; the strict cutoff excludes the top pass-rate bin.
ColdstartResult coldstart_select(const std::vector<Sample>& qa_pairs, ModelClient& client, int n,
                                 double max_pass_rate = 0.875);

struct CoTResponse {
    std::string text;
    size_t reasoning_token_count = 0;
};

// One response per effort level; all three levels must be present.
using CoTTriple = std::map<EffortLevel, CoTResponse>;

struct LengthBands {
    std::map<EffortLevel, std::pair<size_t, size_t>> bands;  // inclusive [min,max]

    static LengthBands defaults();  // non_thinking [0,0], medium [64,512], high [512,4096]
};

// True iff reasoning length strictly increases non_thinking < medium < high
// and every count sits inside its per-level band.
bool progressive_length_check(const CoTTriple& triple, const LengthBands& bands = LengthBands::defaults());

void write_ifd_report(const std::string& path, const std::vector<IFDRecord>& records);
void write_pass_rate_report(const std::string& path, const std::vector<PassRateRecord>& records);

}  // namespace omniforge
