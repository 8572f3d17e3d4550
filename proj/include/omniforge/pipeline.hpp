#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "omniforge/corpus.hpp"
#include "omniforge/curation.hpp"
#include "omniforge/jsonl.hpp"
#include "omniforge/model_client.hpp"
#include "omniforge/reward.hpp"
#include "omniforge/taxonomy.hpp"

namespace omniforge {

enum class StageId { S0, S1, S2, S3 };
enum class TrainableSet { connector_only, all };

const char* to_string(StageId s);
const char* to_string(TrainableSet t);
std::optional<StageId> stage_id_from_string(const std::string& s);
std::optional<TrainableSet> trainable_set_from_string(const std::string& s);

// Declared training plan for one stage; budgets are plan metadata, never
// measured token counts.
struct StagePlan {
    StageId stage = StageId::S0;
    TrainableSet trainable = TrainableSet::connector_only;
    double token_budget = 0.0;  // tokens
    long seq_len = 8192;
    std::map<SampleSource, double> mix;      // sampling weights per source
    std::vector<EffortLevel> effort_levels;  // post-training (S3) plans only

    static StagePlan from_json(const json& j);
    json to_json() const;
};

struct StageDefaults {
    TrainableSet trainable;
    double token_budget;
    long seq_len;
};

// The stage recipe this artifact validates against: S0 trains the audio
// connector alone on ~10e9 tokens at 8192; S1/S2/S3 train all components on
// ~1.5e9 @ 8192, ~1e9 @ 32768, ~0.1e9 @ 65536. "~" budgets accept +/-25%;
// the S2 in_domain:open_domain mix must be 2:1 within 5%.
const std::map<StageId, StageDefaults>& stage_defaults();

inline constexpr double kBudgetTolerance = 0.25;
inline constexpr double kMixRatioTolerance = 0.05;

// Empty vector means the plan is valid; otherwise each violation names the
// offending field and the expected value.
std::vector<std::string> validate_stage_plan(const StagePlan& plan);

// Per-plan checks plus cross-stage rules: stage order, no duplicate stages,
// sequence length non-decreasing across S1 -> S2 -> S3.
std::vector<std::string> validate_recipe(const std::vector<StagePlan>& plans);

struct PackedBatch {
    struct Bin {
        std::vector<std::string> sample_ids;
        long total_tokens = 0;
    };
    std::vector<Bin> bins;
    long max_len = 0;
};

// First-fit-decreasing packing (ties broken by input order). Oversized
// samples raise std::invalid_argument naming every offender.
PackedBatch pack_sequences(const std::vector<std::pair<std::string, long>>& samples, long max_len);

struct EvalResult {
    std::string sample_id;
    std::vector<std::string> task_tags;
    bool correct = false;
};

// Per-L3-task accuracy; tags must resolve to L3 nodes, tasks with no
// samples are omitted, and multi-tagged samples count toward every tag.
std::map<std::string, double> evaluate_by_task(const std::vector<EvalResult>& results,
                                               const TaskTaxonomy& taxonomy);

struct LoopState {
    int iteration = 0;
    std::map<std::string, double> per_task_accuracy;   // in [0,1]
    std::map<std::string, double> sampling_weights;    // non-negative
};

// weight(task) proportional to max(floor, 1 - accuracy(task)), normalized
// to sum 1. Lower accuracy never gets less weight than higher accuracy.
std::map<std::string, double> reweight(const LoopState& state, double floor);

// Weighted sampling without replacement over per-task pools: each draw picks
// a task by weight (among tasks with samples left), then a uniform sample
// from that task's pool; a drawn sample leaves every pool it appears in.
// Deterministic under `seed`; stops at n_out draws or global exhaustion.
DatasetManifest emit_manifest(const DatasetManifest& manifest, const Corpus& corpus,
                              const std::map<std::string, double>& weights, uint64_t seed, int n_out);

struct PipelineConfig {
    std::string corpus_path;
    std::string taxonomy_path = "data/ecommerce_taxonomy.json";
    std::string out_dir = "out";
    uint64_t seed = 0;
    int threads = 1;
    int tag_k = 3;
    double dedup_near_threshold = 0.9;
    double ifd_threshold = 0.5;
    int zpd_n = 8;
    double zpd_low = 0.25;
    double zpd_high = 0.75;
    int group_size = 4;
    int max_turns = 2;
    std::string rubric = "ecommerce";
    RewardWeights reward_weights = RewardWeights::agentic_defaults();
    double eval_threshold = 0.5;
    double loop_floor = 0.01;
    int n_out = 200;

    // OMNIFORGE_SEED in the environment overrides the configured seed.
    static PipelineConfig from_json(const json& j);
    static PipelineConfig load(const std::string& path);
};

struct PipelineResult {
    DatasetManifest final_manifest;
    std::map<std::string, size_t> stage_counts;  // samples surviving each stage
    std::string manifest_path;                   // file the final manifest was written to
};

// The whole closed loop against a model client: ingest -> tag -> dedup ->
// IFD -> ZPD -> grouped rollouts -> rewards & advantages -> per-task eval ->
// reweight -> emit. Deterministic for a given (config, client seed)
// regardless of thread count.
PipelineResult run_pipeline(const PipelineConfig& config, ModelClient& client);

// Convenience: builds the default client (mock unless OMNIFORGE_BACKEND_URL
// is set) seeded from the config.
PipelineResult run_pipeline(const PipelineConfig& config);

// Deterministic synthetic QA corpus for driving the loop end-to-end in
// tests and demos: templated commerce questions with a sprinkle of exact
// and near duplicates, mixed sources, and occasional modality refs.
std::vector<json> synth_corpus(int n, uint64_t seed);
void write_synth_corpus(const std::string& path, int n, uint64_t seed);

// Pass rates from n seeded rollouts per manifest entry, judged against the
// sample answer under `rubric_id` (correct when the judge score >= 0.5).
// Failures land in `quarantined` instead of deciding either way.
std::map<std::string, PassRate> rollout_pass_rates(const DatasetManifest& manifest,
                                                   const Corpus& corpus, ModelClient& client, int n,
                                                   const std::string& rubric_id,
                                                   std::vector<std::string>& quarantined,
                                                   int threads = 1);

}  // namespace omniforge
