#include "omniforge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <set>
#include <stdexcept>

#include "omniforge/episode.hpp"
#include "omniforge/fingerprint.hpp"
#include "omniforge/hashing.hpp"
#include "omniforge/parallel.hpp"
#include "omniforge/search.hpp"

namespace omniforge {

namespace fs = std::filesystem;

namespace {

double next_unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

constexpr long kAllowedSeqLens[] = {8192, 32768, 65536};

bool seq_len_allowed(long v) {
    return std::find(std::begin(kAllowedSeqLens), std::end(kAllowedSeqLens), v) !=
           std::end(kAllowedSeqLens);
}

}  // namespace

const char* to_string(StageId s) {
    switch (s) {
        case StageId::S0: return "S0";
        case StageId::S1: return "S1";
        case StageId::S2: return "S2";
        case StageId::S3: return "S3";
    }
    return "S0";
}

const char* to_string(TrainableSet t) {
    return t == TrainableSet::connector_only ? "connector_only" : "all";
}

std::optional<StageId> stage_id_from_string(const std::string& s) {
    if (s == "S0") return StageId::S0;
    if (s == "S1") return StageId::S1;
    if (s == "S2") return StageId::S2;
    if (s == "S3") return StageId::S3;
    return std::nullopt;
}

std::optional<TrainableSet> trainable_set_from_string(const std::string& s) {
    if (s == "connector_only") return TrainableSet::connector_only;
    if (s == "all") return TrainableSet::all;
    return std::nullopt;
}

const std::map<StageId, StageDefaults>& stage_defaults() {
    static const std::map<StageId, StageDefaults> defaults = {
        {StageId::S0, {TrainableSet::connector_only, 10e9, 8192}},
        {StageId::S1, {TrainableSet::all, 1.5e9, 8192}},
        {StageId::S2, {TrainableSet::all, 1e9, 32768}},
        {StageId::S3, {TrainableSet::all, 0.1e9, 65536}},
    };
    return defaults;
}

StagePlan StagePlan::from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("stage plan must be a JSON object");
    StagePlan p;
    if (!j.contains("stage") || !j["stage"].is_string()) {
        throw std::invalid_argument("stage plan needs a stage id");
    }
    auto stage = stage_id_from_string(j["stage"].get<std::string>());
    if (!stage) throw std::invalid_argument("unknown stage: " + j["stage"].get<std::string>());
    p.stage = *stage;
    if (j.contains("trainable") && j["trainable"].is_string()) {
        auto t = trainable_set_from_string(j["trainable"].get<std::string>());
        if (!t) throw std::invalid_argument("unknown trainable set: " + j["trainable"].get<std::string>());
        p.trainable = *t;
    } else {
        p.trainable = stage_defaults().at(p.stage).trainable;
    }
    p.token_budget = j.value("token_budget", stage_defaults().at(p.stage).token_budget);
    p.seq_len = j.value("seq_len", stage_defaults().at(p.stage).seq_len);
    if (j.contains("mix") && j["mix"].is_object()) {
        for (const auto& [key, value] : j["mix"].items()) {
            auto source = sample_source_from_string(key);
            if (!source || !value.is_number()) {
                throw std::invalid_argument("bad mix entry: " + key);
            }
            p.mix[*source] = value.get<double>();
        }
    }
    if (j.contains("effort_levels") && j["effort_levels"].is_array()) {
        for (const auto& e : j["effort_levels"]) {
            auto level = e.is_string() ? effort_level_from_string(e.get<std::string>()) : std::nullopt;
            if (!level) throw std::invalid_argument("bad effort level in stage plan");
            p.effort_levels.push_back(*level);
        }
    }
    return p;
}

json StagePlan::to_json() const {
    json j;
    j["stage"] = to_string(stage);
    j["trainable"] = to_string(trainable);
    j["token_budget"] = token_budget;
    j["seq_len"] = seq_len;
    json mix_obj = json::object();
    for (const auto& [source, weight] : mix) mix_obj[to_string(source)] = weight;
    j["mix"] = mix_obj;
    json efforts = json::array();
    for (EffortLevel e : effort_levels) efforts.push_back(to_string(e));
    j["effort_levels"] = efforts;
    return j;
}

std::vector<std::string> validate_stage_plan(const StagePlan& plan) {
    std::vector<std::string> violations;
    const StageDefaults& expected = stage_defaults().at(plan.stage);
    const std::string stage = to_string(plan.stage);

    if (plan.trainable != expected.trainable) {
        if (plan.stage == StageId::S0) {
            violations.push_back("trainable: S0 must train the audio connector only");
        } else {
            violations.push_back("trainable: " + stage + " must train all components");
        }
    }
    if (plan.token_budget <= 0.0) {
        violations.push_back("token_budget: must be positive");
    } else if (std::abs(plan.token_budget - expected.token_budget) >
               kBudgetTolerance * expected.token_budget) {
        violations.push_back("token_budget: " + stage + " expects ~" +
                             std::to_string(expected.token_budget) + " tokens (+/-25%)");
    }
    if (!seq_len_allowed(plan.seq_len)) {
        violations.push_back("seq_len: " + std::to_string(plan.seq_len) +
                             " is not one of 8192/32768/65536");
    } else if (plan.seq_len != expected.seq_len) {
        violations.push_back("seq_len: " + stage + " uses " + std::to_string(expected.seq_len));
    }
    for (const auto& [source, weight] : plan.mix) {
        if (weight < 0.0) {
            violations.push_back(std::string("mix: negative weight for ") + to_string(source));
        }
    }
    if (plan.stage == StageId::S2) {
        auto in_it = plan.mix.find(SampleSource::in_domain);
        auto open_it = plan.mix.find(SampleSource::open_domain);
        if (in_it == plan.mix.end() || open_it == plan.mix.end() || open_it->second <= 0.0) {
            violations.push_back("mix: S2 needs in_domain and open_domain weights at 2:1");
        } else {
            double ratio = in_it->second / open_it->second;
            if (std::abs(ratio - 2.0) > 2.0 * kMixRatioTolerance) {
                violations.push_back("mix: S2 in_domain:open_domain must be 2:1 within 5%");
            }
        }
    }
    if (!plan.effort_levels.empty()) {
        if (plan.stage != StageId::S3) {
            violations.push_back("effort_levels: only the post-training stage S3 carries effort levels");
        }
        std::set<EffortLevel> seen(plan.effort_levels.begin(), plan.effort_levels.end());
        if (seen.size() != plan.effort_levels.size()) {
            violations.push_back("effort_levels: duplicate levels");
        }
    }
    return violations;
}

std::vector<std::string> validate_recipe(const std::vector<StagePlan>& plans) {
    std::vector<std::string> violations;
    std::set<StageId> seen;
    for (const auto& plan : plans) {
        for (const auto& v : validate_stage_plan(plan)) {
            violations.push_back(std::string(to_string(plan.stage)) + ": " + v);
        }
        if (!seen.insert(plan.stage).second) {
            violations.push_back(std::string("recipe: duplicate stage ") + to_string(plan.stage));
        }
    }
    for (size_t i = 1; i < plans.size(); ++i) {
        if (static_cast<int>(plans[i].stage) <= static_cast<int>(plans[i - 1].stage)) {
            violations.push_back("recipe: stages out of order");
        }
        bool prev_post_s0 = plans[i - 1].stage != StageId::S0;
        if (prev_post_s0 && plans[i].seq_len < plans[i - 1].seq_len) {
            violations.push_back("recipe: seq_len must be non-decreasing across S1->S3");
        }
    }
    return violations;
}

PackedBatch pack_sequences(const std::vector<std::pair<std::string, long>>& samples, long max_len) {
    if (max_len < 1) throw std::invalid_argument("pack_sequences: max_len must be positive");
    std::string oversized;
    for (const auto& [id, tokens] : samples) {
        if (tokens > max_len) oversized += (oversized.empty() ? "" : ", ") + id;
        if (tokens < 0) throw std::invalid_argument("pack_sequences: negative token count for " + id);
    }
    if (!oversized.empty()) {
        throw std::invalid_argument("pack_sequences: samples exceed max_len: " + oversized);
    }

    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return samples[a].second > samples[b].second;  // decreasing, ties keep input order
    });

    PackedBatch batch;
    batch.max_len = max_len;
    for (size_t idx : order) {
        const auto& [id, tokens] = samples[idx];
        bool placed = false;
        for (auto& bin : batch.bins) {
            if (bin.total_tokens + tokens <= max_len) {
                bin.sample_ids.push_back(id);
                bin.total_tokens += tokens;
                placed = true;
                break;
            }
        }
        if (!placed) {
            batch.bins.push_back({{id}, tokens});
        }
    }
    return batch;
}

std::map<std::string, double> evaluate_by_task(const std::vector<EvalResult>& results,
                                               const TaskTaxonomy& taxonomy) {
    std::map<std::string, std::pair<int, int>> tally;  // task -> (correct, total)
    for (const auto& result : results) {
        std::set<std::string> seen;
        for (const auto& tag : result.task_tags) {
            const AtomicTask* node = taxonomy.find(tag);
            if (!node || node->level != TaskLevel::L3) {
                throw std::invalid_argument("evaluate_by_task: unknown L3 task id: " + tag);
            }
            if (!seen.insert(tag).second) continue;
            auto& [correct, total] = tally[tag];
            ++total;
            if (result.correct) ++correct;
        }
    }
    std::map<std::string, double> accuracy;
    for (const auto& [task, counts] : tally) {
        accuracy[task] = static_cast<double>(counts.first) / static_cast<double>(counts.second);
    }
    return accuracy;
}

std::map<std::string, double> reweight(const LoopState& state, double floor) {
    if (state.per_task_accuracy.empty()) throw std::invalid_argument("reweight: empty state");
    if (floor <= 0.0) throw std::invalid_argument("reweight: floor must be a small positive real");

    std::map<std::string, double> weights;
    double sum = 0.0;
    for (const auto& [task, accuracy] : state.per_task_accuracy) {
        if (accuracy < 0.0 || accuracy > 1.0) {
            throw std::invalid_argument("reweight: accuracy outside [0,1] for " + task);
        }
        double w = std::max(floor, 1.0 - accuracy);
        weights[task] = w;
        sum += w;
    }
    for (auto& [task, w] : weights) w /= sum;
    return weights;
}

DatasetManifest emit_manifest(const DatasetManifest& manifest, const Corpus& corpus,
                              const std::map<std::string, double>& weights, uint64_t seed, int n_out) {
    if (n_out <= 0) throw std::invalid_argument("emit_manifest: n_out must be positive");
    double weight_sum = 0.0;
    for (const auto& [task, w] : weights) {
        if (w < 0.0) throw std::invalid_argument("emit_manifest: negative weight for " + task);
        weight_sum += w;
    }
    if (weights.empty() || weight_sum <= 0.0) {
        throw std::invalid_argument("emit_manifest: weights must include a positive entry");
    }

    // Per-task candidate pools, manifest order preserved inside each pool.
    std::map<std::string, std::vector<std::string>> pools;
    std::map<std::string, std::vector<std::string>> tags_of;  // sample -> weighted tags
    for (const auto& entry : manifest.entries) {
        const Sample& sample = corpus.at(entry.sample_id);
        for (const auto& tag : sample.task_tags) {
            if (!weights.count(tag)) continue;
            auto& owned = tags_of[entry.sample_id];
            if (std::find(owned.begin(), owned.end(), tag) != owned.end()) continue;
            owned.push_back(tag);
            pools[tag].push_back(entry.sample_id);
        }
    }

    DatasetManifest out;
    out.stage_target = manifest.stage_target;
    std::mt19937_64 rng(seed);
    while (static_cast<int>(out.entries.size()) < n_out) {
        double active_total = 0.0;
        for (const auto& [task, pool] : pools) {
            if (!pool.empty()) active_total += weights.at(task);
        }
        if (active_total <= 0.0) break;  // exhausted

        double pick = next_unit(rng) * active_total;
        const std::string* chosen_task = nullptr;
        double cumulative = 0.0;
        for (const auto& [task, pool] : pools) {
            if (pool.empty()) continue;
            cumulative += weights.at(task);
            if (pick < cumulative || &pool == &pools.rbegin()->second) {
                chosen_task = &task;
                if (pick < cumulative) break;
            }
        }
        if (!chosen_task) break;  // defensive; cannot happen with active_total > 0

        auto& pool = pools.at(*chosen_task);
        size_t at = std::min(static_cast<size_t>(next_unit(rng) * static_cast<double>(pool.size())),
                             pool.size() - 1);
        std::string sample_id = pool[at];
        out.entries.push_back({sample_id, 1.0});
        for (const auto& tag : tags_of.at(sample_id)) {
            auto& p = pools.at(tag);
            p.erase(std::find(p.begin(), p.end(), sample_id));
        }
    }
    return out;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("pipeline config must be a JSON object");
    PipelineConfig c;
    if (!j.contains("corpus") || !j["corpus"].is_string()) {
        throw std::invalid_argument("pipeline config needs a corpus path");
    }
    c.corpus_path = j["corpus"].get<std::string>();
    c.taxonomy_path = j.value("taxonomy", c.taxonomy_path);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.tag_k = j.value("tag_k", c.tag_k);
    c.dedup_near_threshold = j.value("dedup_near_threshold", c.dedup_near_threshold);
    c.ifd_threshold = j.value("ifd_threshold", c.ifd_threshold);
    if (j.contains("zpd") && j["zpd"].is_object()) {
        c.zpd_n = j["zpd"].value("n", c.zpd_n);
        c.zpd_low = j["zpd"].value("low", c.zpd_low);
        c.zpd_high = j["zpd"].value("high", c.zpd_high);
    }
    if (j.contains("rollout") && j["rollout"].is_object()) {
        c.group_size = j["rollout"].value("group_size", c.group_size);
        c.max_turns = j["rollout"].value("max_turns", c.max_turns);
    }
    c.rubric = j.value("rubric", c.rubric);
    if (j.contains("reward_weights") && j["reward_weights"].is_object()) {
        c.reward_weights.answer = j["reward_weights"].value("answer", c.reward_weights.answer);
        c.reward_weights.format = j["reward_weights"].value("format", c.reward_weights.format);
        c.reward_weights.length = j["reward_weights"].value("length", c.reward_weights.length);
    }
    c.eval_threshold = j.value("eval_threshold", c.eval_threshold);
    if (j.contains("loop") && j["loop"].is_object()) {
        c.loop_floor = j["loop"].value("floor", c.loop_floor);
        c.n_out = j["loop"].value("n_out", c.n_out);
    }
    if (const char* env_seed = std::getenv("OMNIFORGE_SEED"); env_seed && *env_seed) {
        c.seed = std::strtoull(env_seed, nullptr, 10);
    }
    return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
    json j = json::parse(read_text_file(path), nullptr, false);
    if (j.is_discarded()) throw std::invalid_argument("pipeline config does not parse: " + path);
    return from_json(j);
}

std::vector<json> synth_corpus(int n, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("synth_corpus: n must be positive");
    static const char* kNouns[] = {"headphones", "blender",  "backpack", "smartwatch", "sneakers",
                                   "lamp",       "keyboard", "jacket",   "thermos",    "camera"};
    static const char* kAdjectives[] = {"wireless", "ceramic", "compact", "waterproof",
                                        "vintage",  "foldable", "organic", "ergonomic"};
    static const char* kAspects[] = {"battery life", "material quality", "shipping weight",
                                     "color options", "warranty terms",  "noise level",
                                     "return policy", "size chart"};
    static const char* kVerdicts[] = {"excellent", "average", "poor", "unverified", "inconsistent"};

    std::mt19937_64 rng(seed);
    auto pick = [&](auto& table) {
        size_t count = std::size(table);
        return table[std::min(static_cast<size_t>(next_unit(rng) * count), count - 1)];
    };

    std::vector<json> lines;
    for (int i = 0; i < n; ++i) {
        char id[16];
        std::snprintf(id, sizeof(id), "q%05d", i);
        json record;
        if (i > 0 && i % 37 == 0) {
            record = lines[static_cast<size_t>(i) - 37];  // exact duplicate text, new id
            record["id"] = id;
            lines.push_back(record);
            continue;
        }
        std::string noun = pick(kNouns);
        std::string question = std::string("What does the ") + pick(kAdjectives) + " " + noun +
                               " listing claim about " + pick(kAspects) + "?";
        if (i % 23 == 0) question += " exactly";  // near duplicate of the template family
        std::string answer = std::string("the ") + noun + " listing rates it " + pick(kVerdicts);
        record["id"] = id;
        record["question"] = question;
        record["answer"] = answer;
        record["source"] = next_unit(rng) < 0.5 ? "in_domain" : "open_domain";
        if (i % 11 == 0) {
            record["refs"] =
                json::array({{{"kind", "image"}, {"uri", std::string("img://") + id}, {"size_hint", 2048}}});
        }
        lines.push_back(record);
    }
    return lines;
}

void write_synth_corpus(const std::string& path, int n, uint64_t seed) {
    write_jsonl(path, synth_corpus(n, seed));
}

std::map<std::string, PassRate> rollout_pass_rates(const DatasetManifest& manifest,
                                                   const Corpus& corpus, ModelClient& client, int n,
                                                   const std::string& rubric_id,
                                                   std::vector<std::string>& quarantined,
                                                   int threads) {
    if (n < 1) throw std::invalid_argument("rollout_pass_rates: n must be positive");

    struct Slot {
        bool failed = false;
        int correct = 0;
    };
    std::vector<Slot> slots(manifest.entries.size());
    parallel_for(manifest.entries.size(), threads, [&](size_t i) {
        const Sample& sample = corpus.at(manifest.entries[i].sample_id);
        try {
            int correct = 0;
            for (int r = 0; r < n; ++r) {
                GenerationRequest req;
                req.segments.push_back({ModalityKind::text, sample.question});
                req.seed = r;
                GenerationResult res = client.generate(req);
                JudgeRequest jreq;
                jreq.question = sample.question;
                jreq.candidate = res.text;
                jreq.reference = sample.answer;
                jreq.rubric_id = rubric_id;
                auto score = client.judge(jreq);
                if (!score) throw ClientError("judge unavailable", true);
                if (*score >= 0.5) ++correct;
            }
            slots[i].correct = correct;
        } catch (const ClientError&) {
            slots[i].failed = true;
        }
    });

    std::map<std::string, PassRate> rates;
    for (size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].failed) {
            quarantined.push_back(manifest.entries[i].sample_id);
        } else {
            rates[manifest.entries[i].sample_id] = PassRate::of(slots[i].correct, n);
        }
    }
    return rates;
}

PipelineResult run_pipeline(const PipelineConfig& config, ModelClient& client) {
    fs::create_directories(config.out_dir);
    auto out_path = [&](const std::string& name) { return (fs::path(config.out_dir) / name).string(); };

    PipelineResult result;

    IngestResult ingested = ingest(config.corpus_path);
    Corpus corpus = std::move(ingested.corpus);
    DatasetManifest manifest = std::move(ingested.manifest);
    result.stage_counts["ingest"] = manifest.entries.size();

    TaskTaxonomy taxonomy = TaskTaxonomy::load(config.taxonomy_path);

    // Tagging: parallel over samples, results land in indexed slots.
    std::vector<std::vector<TaskTag>> tag_slots(manifest.entries.size());
    parallel_for(manifest.entries.size(), config.threads, [&](size_t i) {
        tag_slots[i] = map_tasks(corpus.at(manifest.entries[i].sample_id), taxonomy, config.tag_k, client);
    });
    std::vector<json> tag_lines;
    for (size_t i = 0; i < manifest.entries.size(); ++i) {
        Sample* sample = corpus.find(manifest.entries[i].sample_id);
        sample->task_tags.clear();
        json tags = json::array();
        for (const auto& tag : tag_slots[i]) {
            sample->task_tags.push_back(tag.task_id);
            tags.push_back({{"task_id", tag.task_id}, {"confidence", tag.confidence}});
        }
        tag_lines.push_back(json{{"sample_id", manifest.entries[i].sample_id}, {"tags", tags}});
    }
    write_jsonl(out_path("tags.jsonl"), tag_lines);
    result.stage_counts["tag"] = manifest.entries.size();

    DedupResult deduped = dedup(manifest, corpus, config.dedup_near_threshold, config.threads);
    manifest = std::move(deduped.manifest);
    write_dedup_report(out_path("dedup_removals.jsonl"), deduped.removals);
    result.stage_counts["dedup"] = manifest.entries.size();

    IFDFilterResult ifd_result = ifd_filter(manifest, corpus, client, config.ifd_threshold);
    manifest = std::move(ifd_result.manifest);
    write_ifd_report(out_path("ifd_report.jsonl"), ifd_result.report);
    result.stage_counts["ifd"] = manifest.entries.size();

    std::vector<std::string> quarantined;
    auto rates = rollout_pass_rates(manifest, corpus, client, config.zpd_n, config.rubric, quarantined,
                                    config.threads);
    auto retained = zpd_filter(rates, config.zpd_low, config.zpd_high);
    std::set<std::string> retained_set(retained.begin(), retained.end());
    std::vector<json> rate_lines;
    for (const auto& [id, rate] : rates) {
        rate_lines.push_back(
            PassRateRecord{id, rate.n_rollouts, rate.n_correct, rate.accuracy}.to_json());
    }
    write_jsonl(out_path("pass_rates.jsonl"), rate_lines);
    DatasetManifest zpd_manifest;
    zpd_manifest.stage_target = manifest.stage_target;
    for (const auto& entry : manifest.entries) {
        if (retained_set.count(entry.sample_id)) zpd_manifest.entries.push_back(entry);
    }
    manifest = std::move(zpd_manifest);
    result.stage_counts["zpd"] = manifest.entries.size();

    // Offline search environment over the corpus itself.
    std::vector<TextDoc> docs;
    for (const auto& sample : corpus.samples()) {
        docs.push_back({sample.id, sample.question + "\n" + sample.answer});
    }
    SearchIndex index = SearchIndex::build(docs, {});

    std::vector<RolloutGroup> groups(manifest.entries.size());
    parallel_for(manifest.entries.size(), config.threads, [&](size_t i) {
        const Sample& sample = corpus.at(manifest.entries[i].sample_id);
        std::vector<std::string> responses;
        responses.reserve(static_cast<size_t>(config.group_size));
        for (int g = 0; g < config.group_size; ++g) {
            int64_t episode_seed = static_cast<int64_t>(
                splitmix64(config.seed ^ fnv1a64(sample.id) ^ (0x9e3779b97f4a7c15ULL * (g + 1))));
            EpisodeResult episode =
                run_episode(sample.question, client, index, config.max_turns, episode_seed);
            responses.push_back(episode.status == EpisodeStatus::complete
                                    ? serialize(episode.trajectory)
                                    : episode.raw_text);
        }
        groups[i] = score_group(sample.id, sample.question, sample.answer, config.rubric, responses,
                                client, config.reward_weights);
    });
    write_advantage_export(out_path("advantages.jsonl"), groups);
    size_t viable = 0;
    for (const auto& g : groups) viable += g.viable() ? 1 : 0;
    result.stage_counts["rollout_groups"] = viable;

    std::vector<EvalResult> eval_results;
    std::vector<json> eval_lines;
    for (size_t i = 0; i < manifest.entries.size(); ++i) {
        const Sample& sample = corpus.at(manifest.entries[i].sample_id);
        double mean_reward = 0.0;
        for (const auto& rollout : groups[i].rollouts) mean_reward += rollout.reward.total;
        if (!groups[i].rollouts.empty()) mean_reward /= static_cast<double>(groups[i].rollouts.size());
        bool correct = !groups[i].rollouts.empty() && mean_reward >= config.eval_threshold;
        eval_results.push_back({sample.id, sample.task_tags, correct});
        eval_lines.push_back(
            json{{"sample_id", sample.id}, {"mean_reward", mean_reward}, {"correct", correct}});
    }
    auto accuracy = evaluate_by_task(eval_results, taxonomy);
    json eval_summary = json::object();
    for (const auto& [task, acc] : accuracy) eval_summary[task] = acc;
    eval_lines.push_back(json{{"per_task_accuracy", eval_summary}});
    write_jsonl(out_path("eval.jsonl"), eval_lines);

    std::map<std::string, double> weights;
    if (!accuracy.empty()) {
        weights = reweight(LoopState{0, accuracy, {}}, config.loop_floor);
    } else {
        // Nothing evaluable survived; fall back to uniform over observed tags.
        for (const auto& entry : manifest.entries) {
            for (const auto& tag : corpus.at(entry.sample_id).task_tags) weights[tag] = 1.0;
        }
    }
    json weights_obj = json::object();
    for (const auto& [task, w] : weights) weights_obj[task] = w;
    write_jsonl(out_path("weights.jsonl"), {weights_obj});

    result.manifest_path = out_path("next_manifest.jsonl");
    if (manifest.entries.empty() || weights.empty()) {
        result.final_manifest = manifest;
    } else {
        result.final_manifest = emit_manifest(manifest, corpus, weights, config.seed, config.n_out);
    }
    write_manifest(result.manifest_path, result.final_manifest);
    result.stage_counts["emit"] = result.final_manifest.entries.size();
    return result;
}

PipelineResult run_pipeline(const PipelineConfig& config) {
    auto client = make_default_client(config.seed);
    return run_pipeline(config, *client);
}

}  // namespace omniforge
