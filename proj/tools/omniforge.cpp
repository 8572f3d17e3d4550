// omniforge: data curation, agentic rollout, reward/advantage, fusion math,
// and the closed-loop pipeline driver. Every output is JSON-lines.
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "omniforge/corpus.hpp"
#include "omniforge/curation.hpp"
#include "omniforge/episode.hpp"
#include "omniforge/fingerprint.hpp"
#include "omniforge/fusion.hpp"
#include "omniforge/hashing.hpp"
#include "omniforge/jsonl.hpp"
#include "omniforge/model_client.hpp"
#include "omniforge/pipeline.hpp"
#include "omniforge/reward.hpp"
#include "omniforge/search.hpp"
#include "omniforge/taxonomy.hpp"
#include "omniforge/trajectory.hpp"

namespace of = omniforge;
using of::json;

namespace {

void emit_lines(const std::string& path, const std::vector<json>& lines) {
    if (path.empty() || path == "-") {
        for (const auto& line : lines) std::cout << line.dump() << "\n";
    } else {
        of::write_jsonl(path, lines);
    }
}

of::DatasetManifest manifest_or_identity(const std::string& path, const of::Corpus& corpus) {
    if (!path.empty()) return of::read_manifest(path);
    of::DatasetManifest m;
    for (const auto& sample : corpus.samples()) m.entries.push_back({sample.id, 1.0});
    return m;
}

std::vector<json> manifest_lines(const of::DatasetManifest& m) {
    std::vector<json> lines;
    for (size_t i = 0; i < m.entries.size(); ++i) lines.push_back(m.entry_to_json(i));
    return lines;
}

std::vector<json> id_lines(const std::vector<std::string>& ids, const std::string& key) {
    std::vector<json> lines;
    for (const auto& id : ids) lines.push_back(json{{key, id}});
    return lines;
}

std::vector<json> pass_rate_lines(const std::vector<of::PassRateRecord>& records) {
    std::vector<json> lines;
    for (const auto& r : records) lines.push_back(r.to_json());
    return lines;
}

// Reads {question_id, n, correct, accuracy} lines back into rate form.
std::map<std::string, of::PassRate> read_rates(const std::string& path) {
    std::map<std::string, of::PassRate> rates;
    for (const auto& [line_no, j] : of::read_jsonl(path).records) {
        if (!j.is_object() || !j.contains("question_id") || !j.contains("n") || !j.contains("correct")) {
            throw std::invalid_argument("bad pass-rate record at line " + std::to_string(line_no));
        }
        rates[j["question_id"].get<std::string>()] =
            of::PassRate::of(j["correct"].get<int>(), j["n"].get<int>());
    }
    return rates;
}

struct CommonOpts {
    uint64_t seed = 0;
    int threads = 1;
    std::string out = "-";
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"omniforge: desk-scale data curation, rollout, reward, and loop pipeline"};
    app.require_subcommand(1);
    int exit_code = 0;

    // ---------------------------------------------------------------- ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "Validate a corpus and emit its manifest");
    {
        auto opts = std::make_shared<CommonOpts>();
        auto corpus_path = std::make_shared<std::string>();
        auto format = std::make_shared<std::string>("jsonl");
        auto rejects_out = std::make_shared<std::string>();
        ingest_cmd->add_option("--corpus", *corpus_path, "corpus JSONL")->required();
        ingest_cmd->add_option("--format", *format, "input format (jsonl)");
        ingest_cmd->add_option("--out", opts->out, "manifest output path or - for stdout");
        ingest_cmd->add_option("--rejects-out", *rejects_out, "rejected-record report path");
        ingest_cmd->callback([=] {
            of::IngestResult result = of::ingest(*corpus_path, *format);
            emit_lines(opts->out, manifest_lines(result.manifest));
            if (!rejects_out->empty()) {
                std::vector<json> lines;
                for (const auto& r : result.rejections) {
                    lines.push_back(json{{"line", r.line_no}, {"id", r.id}, {"reason", r.reason}});
                }
                of::write_jsonl(*rejects_out, lines);
            }
            std::cerr << "ingested " << result.manifest.entries.size() << " samples, rejected "
                      << result.rejections.size() << "\n";
        });
    }

    // ------------------------------------------------------------------- tag
    auto* tag_cmd = app.add_subcommand("tag", "Tag samples with taxonomy tasks");
    {
        auto opts = std::make_shared<CommonOpts>();
        auto corpus_path = std::make_shared<std::string>();
        auto taxonomy_path = std::make_shared<std::string>("data/ecommerce_taxonomy.json");
        auto k = std::make_shared<int>(3);
        auto coverage_out = std::make_shared<std::string>();
        tag_cmd->add_option("--corpus", *corpus_path, "corpus JSONL")->required();
        tag_cmd->add_option("--taxonomy", *taxonomy_path, "taxonomy JSON");
        tag_cmd->add_option("--k", *k, "top-k tags per sample");
        tag_cmd->add_option("--seed", opts->seed, "client seed");
        tag_cmd->add_option("--out", opts->out, "tags output path or -");
        tag_cmd->add_option("--coverage-out", *coverage_out, "coverage report path");
        tag_cmd->callback([=] {
            of::IngestResult ingested = of::ingest(*corpus_path);
            of::TaskTaxonomy taxonomy = of::TaskTaxonomy::load(*taxonomy_path);
            auto client = of::make_default_client(opts->seed);
            std::vector<json> lines;
            for (auto& sample : ingested.corpus.samples()) {
                auto tags = of::map_tasks(sample, taxonomy, *k, *client);
                sample.task_tags.clear();
                json arr = json::array();
                for (const auto& t : tags) {
                    sample.task_tags.push_back(t.task_id);
                    arr.push_back({{"task_id", t.task_id}, {"confidence", t.confidence}});
                }
                lines.push_back(json{{"sample_id", sample.id}, {"tags", arr}});
            }
            emit_lines(opts->out, lines);
            if (!coverage_out->empty()) {
                auto report = of::coverage_report(ingested.manifest, ingested.corpus, taxonomy);
                of::write_jsonl(*coverage_out, {report.to_json()});
            }
        });
    }

    // ---------------------------------------------------------------- filter
    auto* filter_cmd = app.add_subcommand("filter", "Corpus filters");
    filter_cmd->require_subcommand(1);
    {
        auto* dd = filter_cmd->add_subcommand("dedup", "Exact + near-duplicate removal");
        auto opts = std::make_shared<CommonOpts>();
        auto corpus_path = std::make_shared<std::string>();
        auto manifest_path = std::make_shared<std::string>();
        auto threshold = std::make_shared<double>(0.9);
        auto report_out = std::make_shared<std::string>();
        dd->add_option("--corpus", *corpus_path, "corpus JSONL")->required();
        dd->add_option("--manifest", *manifest_path, "input manifest (defaults to whole corpus)");
        dd->add_option("--near-threshold", *threshold, "estimated-Jaccard threshold; >1 disables");
        dd->add_option("--threads", opts->threads, "worker threads");
        dd->add_option("--out", opts->out, "surviving manifest path or -");
        dd->add_option("--report-out", *report_out, "removal report path");
        dd->callback([=] {
            of::IngestResult ingested = of::ingest(*corpus_path);
            auto manifest = manifest_or_identity(*manifest_path, ingested.corpus);
            of::DedupResult result = of::dedup(manifest, ingested.corpus, *threshold, opts->threads);
            emit_lines(opts->out, manifest_lines(result.manifest));
            if (!report_out->empty()) of::write_dedup_report(*report_out, result.removals);
            std::cerr << "kept " << result.manifest.entries.size() << ", removed "
                      << result.removals.size() << "\n";
        });
    }
    {
        auto* lf = filter_cmd->add_subcommand("length", "Token-count band filter");
        auto opts = std::make_shared<CommonOpts>();
        auto corpus_path = std::make_shared<std::string>();
        auto manifest_path = std::make_shared<std::string>();
        auto min_tokens = std::make_shared<uint64_t>(0);
        auto max_tokens = std::make_shared<uint64_t>(UINT64_MAX);
        lf->add_option("--corpus", *corpus_path, "corpus JSONL")->required();
        lf->add_option("--manifest", *manifest_path, "input manifest");
        lf->add_option("--min", *min_tokens, "minimum token count, inclusive");
        lf->add_option("--max", *max_tokens, "maximum token count, inclusive");
        lf->add_option("--out", opts->out, "surviving manifest path or -");
        lf->callback([=] {
            of::IngestResult ingested = of::ingest(*corpus_path);
            auto manifest = manifest_or_identity(*manifest_path, ingested.corpus);
            auto result = of::length_filter(manifest, ingested.corpus, *min_tokens, *max_tokens);
            emit_lines(opts->out, manifest_lines(result));
        });
    }
    {
        auto* fi = filter_cmd->add_subcommand("ifd", "Instruction-following-difficulty filter");
        auto opts = std::make_shared<CommonOpts>();
        auto corpus_path = std::make_shared<std::string>();
        auto manifest_path = std::make_shared<std::string>();
        auto threshold = std::make_shared<double>(0.5);
        auto report_out = std::make_shared<std::string>();
        fi->add_option("--corpus", *corpus_path, "corpus JSONL")->required();
        fi->add_option("--manifest", *manifest_path, "input manifest");
        fi->add_option("--threshold", *threshold, "keep IFD >= threshold");
        fi->add_option("--seed", opts->seed, "client seed");
        fi->add_option("--out", opts->out, "surviving manifest path or -");
        fi->add_option("--report-out", *report_out, "per-sample score report path");
        fi->callback([=] {
            of::IngestResult ingested = of::ingest(*corpus_path);
            auto manifest = manifest_or_identity(*manifest_path, ingested.corpus);
            auto client = of::make_default_client(opts->seed);
            auto result = of::ifd_filter(manifest, ingested.corpus, *client, *threshold);
            emit_lines(opts->out, manifest_lines(result.manifest));
            if (!report_out->empty()) of::write_ifd_report(*report_out, result.report);
            std::cerr << "kept " << result.manifest.entries.size() << ", removed "
                      << result.removed.size() << ", rescore " << result.rescore.size() << "\n";
        });
    }
    {
        auto* zf = filter_cmd->add_subcommand("zpd", "Pass-rate band filter");
        auto opts = std::make_shared<CommonOpts>();
        auto corpus_path = std::make_shared<std::string>();
        auto manifest_path = std::make_shared<std::string>();
        auto rates_path = std::make_shared<std::string>();
        auto n = std::make_shared<int>(8);
        auto low = std::make_shared<double>(0.25);
        auto high = std::make_shared<double>(0.75);
        auto rubric = std::make_shared<std::string>("ecommerce");
        auto rates_out = std::make_shared<std::string>();
        zf->add_option("--corpus", *corpus_path, "corpus JSONL")->required();
        zf->add_option("--manifest", *manifest_path, "input manifest");
        zf->add_option("--rates", *rates_path, "precomputed pass-rate JSONL (skips rollouts)");
        zf->add_option("--n", *n, "rollouts per question when computing rates");
        zf->add_option("--low", *low, "lower accuracy bound, inclusive");
        zf->add_option("--high", *high, "upper accuracy bound, inclusive");
        zf->add_option("--rubric", *rubric, "judge rubric for computed rates");
        zf->add_option("--seed", opts->seed, "client seed");
        zf->add_option("--threads", opts->threads, "worker threads");
        zf->add_option("--out", opts->out, "surviving manifest path or -");
        zf->add_option("--rates-out", *rates_out, "computed pass-rate report path");
        zf->callback([=] {
            of::IngestResult ingested = of::ingest(*corpus_path);
            auto manifest = manifest_or_identity(*manifest_path, ingested.corpus);
            std::map<std::string, of::PassRate> rates;
            std::vector<std::string> quarantined;
            if (!rates_path->empty()) {
                rates = read_rates(*rates_path);
            } else {
                auto client = of::make_default_client(opts->seed);
                rates = of::rollout_pass_rates(manifest, ingested.corpus, *client, *n, *rubric,
                                               quarantined, opts->threads);
            }
            auto retained = of::zpd_filter(rates, *low, *high);
            std::set<std::string> keep(retained.begin(), retained.end());
            of::DatasetManifest out;
            out.stage_target = manifest.stage_target;
            for (const auto& e : manifest.entries) {
                if (keep.count(e.sample_id)) out.entries.push_back(e);
            }
            emit_lines(opts->out, manifest_lines(out));
            if (!rates_out->empty()) {
                std::vector<json> lines;
                for (const auto& [id, rate] : rates) {
                    lines.push_back(
                        of::PassRateRecord{id, rate.n_rollouts, rate.n_correct, rate.accuracy}.to_json());
                }
                of::write_jsonl(*rates_out, lines);
            }
            std::cerr << "kept " << out.entries.size() << ", quarantined " << quarantined.size() << "\n";
        });
    }
    {
        auto* s3 = filter_cmd->add_subcommand("s3", "Rejection sampling for the post-training stage");
        auto opts = std::make_shared<CommonOpts>();
        auto corpus_path = std::make_shared<std::string>();
        auto manifest_path = std::make_shared<std::string>();
        auto n = std::make_shared<int>(8);
        auto low = std::make_shared<double>(-1.0);
        auto high = std::make_shared<double>(-1.0);
        auto report_out = std::make_shared<std::string>();
        s3->add_option("--corpus", *corpus_path, "corpus JSONL")->required();
        s3->add_option("--manifest", *manifest_path, "input manifest");
        s3->add_option("--n", *n, "rollouts per question");
        s3->add_option("--low", *low, "keep-band lower bound (default 1/n)");
        s3->add_option("--high", *high, "keep-band upper bound (default 1-1/n)");
        s3->add_option("--seed", opts->seed, "client seed");
        s3->add_option("--out", opts->out, "surviving manifest path or -");
        s3->add_option("--report-out", *report_out, "pass-rate report path");
        s3->callback([=] {
            of::IngestResult ingested = of::ingest(*corpus_path);
            auto manifest = manifest_or_identity(*manifest_path, ingested.corpus);
            auto client = of::make_default_client(opts->seed);
            std::optional<double> low_keep, high_keep;
            if (*low >= 0.0) low_keep = *low;
            if (*high >= 0.0) high_keep = *high;
            auto result =
                of::rejection_sample_s3(manifest, ingested.corpus, *client, *n, low_keep, high_keep);
            emit_lines(opts->out, manifest_lines(result.manifest));
            if (!report_out->empty()) of::write_pass_rate_report(*report_out, result.report);
            std::cerr << "kept " << result.manifest.entries.size() << ", removed "
                      << result.removed.size() << ", quarantined " << result.quarantined.size() << "\n";
        });
    }
    {
        auto* cs = filter_cmd->add_subcommand("coldstart", "Cold-start selection of hard examples");
        auto opts = std::make_shared<CommonOpts>();
        auto corpus_path = std::make_shared<std::string>();
        auto n = std::make_shared<int>(8);
        auto max_rate = std::make_shared<double>(0.875);
        auto report_out = std::make_shared<std::string>();
        cs->add_option("--corpus", *corpus_path, "candidate QA pairs, corpus schema")->required();
        cs->add_option("--n", *n, "rollouts per question");
        cs->add_option("--max-pass-rate", *max_rate, "keep pass rate strictly below this");
        cs->add_option("--seed", opts->seed, "client seed");
        cs->add_option("--out", opts->out, "selected samples (corpus schema) or -");
        cs->add_option("--report-out", *report_out, "pass-rate report path");
        cs->callback([=] {
            of::IngestResult ingested = of::ingest(*corpus_path);
            auto client = of::make_default_client(opts->seed);
            auto result = of::coldstart_select(ingested.corpus.samples(), *client, *n, *max_rate);
            std::vector<json> lines;
            for (const auto& sample : result.selected) lines.push_back(sample.to_json());
            emit_lines(opts->out, lines);
            if (!report_out->empty()) of::write_pass_rate_report(*report_out, result.report);
            std::cerr << "selected " << result.selected.size() << ", removed " << result.removed.size()
                      << ", quarantined " << result.quarantined.size() << "\n";
        });
    }

    // --------------------------------------------------------------- rollout
    auto* rollout_cmd = app.add_subcommand("rollout", "Run agentic search episodes");
    {
        auto opts = std::make_shared<CommonOpts>();
        auto questions_path = std::make_shared<std::string>();
        auto index_dir = std::make_shared<std::string>();
        auto max_turns = std::make_shared<int>(2);
        auto group_size = std::make_shared<int>(1);
        auto effort = std::make_shared<std::string>("non_thinking");
        rollout_cmd->add_option("--questions", *questions_path, "questions, corpus schema")->required();
        rollout_cmd->add_option("--index", *index_dir,
                                "index directory holding docs.jsonl and optional vectors.jsonl")
            ->required();
        rollout_cmd->add_option("--max-turns", *max_turns, "search turns before a forced answer");
        rollout_cmd->add_option("--seed", opts->seed, "base episode seed");
        rollout_cmd->add_option("--group-size", *group_size, "episodes per question");
        rollout_cmd->add_option("--effort", *effort, "reasoning effort level");
        rollout_cmd->add_option("--out", opts->out, "trajectory output path or -");
        rollout_cmd->callback([=] {
            auto level = of::effort_level_from_string(*effort);
            if (!level) throw std::invalid_argument("unknown effort level: " + *effort);
            of::IngestResult ingested = of::ingest(*questions_path);
            std::string docs = *index_dir + "/docs.jsonl";
            std::string vectors = *index_dir + "/vectors.jsonl";
            if (!std::ifstream(vectors).good()) vectors.clear();
            of::SearchIndex index = of::SearchIndex::load(docs, vectors);
            auto client = of::make_default_client(opts->seed);
            std::vector<json> lines;
            for (const auto& sample : ingested.corpus.samples()) {
                for (int g = 0; g < *group_size; ++g) {
                    int64_t seed = static_cast<int64_t>(of::splitmix64(
                        opts->seed ^ of::fnv1a64(sample.id) ^ (0x9e3779b97f4a7c15ULL * (g + 1))));
                    auto episode = of::run_episode(sample.question, *client, index, *max_turns, seed,
                                                   *level);
                    json line{{"question_id", sample.id},
                              {"rollout_index", g},
                              {"status", of::to_string(episode.status)},
                              {"turns", episode.turns()},
                              {"text", episode.status == of::EpisodeStatus::complete
                                           ? of::serialize(episode.trajectory)
                                           : episode.raw_text}};
                    if (episode.status == of::EpisodeStatus::malformed && episode.error) {
                        line["error"] = episode.error->message;
                    }
                    if (episode.status == of::EpisodeStatus::policy_error) {
                        line["error"] = episode.error_message;
                    }
                    lines.push_back(line);
                }
            }
            emit_lines(opts->out, lines);
        });
    }

    // ---------------------------------------------------------------- reward
    auto* reward_cmd = app.add_subcommand("reward", "Score trajectories into reward breakdowns");
    {
        auto opts = std::make_shared<CommonOpts>();
        auto trajectories_path = std::make_shared<std::string>();
        auto gold_path = std::make_shared<std::string>();
        auto rubric = std::make_shared<std::string>("verifiable");
        auto weights = std::make_shared<std::vector<double>>();
        auto effort = std::make_shared<std::string>("non_thinking");
        reward_cmd->add_option("--trajectories", *trajectories_path, "rollout output JSONL")->required();
        reward_cmd->add_option("--gold", *gold_path, "gold answers, corpus schema")->required();
        reward_cmd->add_option("--rubric", *rubric, "judge rubric id");
        reward_cmd->add_option("--weights", *weights, "answer format length weights")->expected(3);
        reward_cmd->add_option("--effort", *effort, "effort level for the length band");
        reward_cmd->add_option("--seed", opts->seed, "client seed");
        reward_cmd->add_option("--out", opts->out, "reward output path or -");
        reward_cmd->callback([=] {
            auto level = of::effort_level_from_string(*effort);
            if (!level) throw std::invalid_argument("unknown effort level: " + *effort);
            of::RewardWeights w = of::RewardWeights::agentic_defaults();
            if (!weights->empty()) w = {(*weights)[0], (*weights)[1], (*weights)[2]};
            of::IngestResult gold = of::ingest(*gold_path);
            auto client = of::make_default_client(opts->seed);
            std::vector<json> lines;
            for (const auto& [line_no, j] : of::read_jsonl(*trajectories_path).records) {
                if (!j.is_object() || !j.contains("question_id") || !j.contains("text")) {
                    throw std::invalid_argument("bad trajectory record at line " +
                                                std::to_string(line_no));
                }
                std::string qid = j["question_id"].get<std::string>();
                std::string text = j["text"].get<std::string>();
                int index = j.value("rollout_index", 0);
                const of::Sample& sample = gold.corpus.at(qid);
                auto answer = of::answer_reward(sample.question, text, sample.answer, *rubric, *client);
                json line{{"question_id", qid}, {"rollout_index", index}};
                if (!answer) {
                    line["excluded"] = true;
                } else {
                    int format = of::format_reward(text);
                    double length =
                        of::length_reward(of::trajectory_reasoning_tokens(text), *level);
                    auto breakdown = of::combine(*answer, format, length, w);
                    line["reward_breakdown"] = breakdown.to_json();
                }
                lines.push_back(line);
            }
            emit_lines(opts->out, lines);
        });
    }

    // ------------------------------------------------------------- advantage
    auto* adv_cmd = app.add_subcommand("advantage", "Group-relative advantages from rewards");
    {
        auto opts = std::make_shared<CommonOpts>();
        auto rewards_path = std::make_shared<std::string>();
        auto group_size = std::make_shared<int>(0);
        auto epsilon = std::make_shared<double>(1e-6);
        adv_cmd->add_option("--rewards", *rewards_path, "reward output JSONL")->required();
        adv_cmd->add_option("--group-size", *group_size,
                            "expected rollouts per question (0 accepts any)");
        adv_cmd->add_option("--epsilon", *epsilon, "advantage denominator epsilon");
        adv_cmd->add_option("--out", opts->out, "advantage export path or -");
        adv_cmd->callback([=] {
            struct Row {
                int index;
                bool excluded;
                json breakdown;
                double total;
            };
            std::vector<std::pair<std::string, std::vector<Row>>> groups;  // contiguous by id
            for (const auto& [line_no, j] : of::read_jsonl(*rewards_path).records) {
                if (!j.is_object() || !j.contains("question_id")) {
                    throw std::invalid_argument("bad reward record at line " + std::to_string(line_no));
                }
                std::string qid = j["question_id"].get<std::string>();
                if (groups.empty() || groups.back().first != qid) groups.push_back({qid, {}});
                Row row;
                row.index = j.value("rollout_index", 0);
                row.excluded = j.value("excluded", false);
                if (!row.excluded) {
                    if (!j.contains("reward_breakdown") || !j["reward_breakdown"].contains("total")) {
                        throw std::invalid_argument("reward record without a breakdown at line " +
                                                    std::to_string(line_no));
                    }
                    row.breakdown = j["reward_breakdown"];
                    row.total = row.breakdown["total"].get<double>();
                }
                groups.back().second.push_back(row);
            }
            std::vector<json> lines;
            for (const auto& [qid, rows] : groups) {
                if (*group_size > 0 && static_cast<int>(rows.size()) != *group_size) {
                    throw std::invalid_argument("question " + qid + " has " +
                                                std::to_string(rows.size()) + " rollouts, expected " +
                                                std::to_string(*group_size));
                }
                std::vector<const Row*> kept;
                for (const auto& row : rows) {
                    if (!row.excluded) kept.push_back(&row);
                }
                if (kept.size() < 2) continue;  // not a viable group
                std::vector<double> totals;
                for (const Row* row : kept) totals.push_back(row->total);
                auto advantages = of::grpo_advantages(totals, *epsilon);
                for (size_t i = 0; i < kept.size(); ++i) {
                    lines.push_back(json{{"question_id", qid},
                                         {"rollout_index", kept[i]->index},
                                         {"reward_breakdown", kept[i]->breakdown},
                                         {"advantage", advantages[i]}});
                }
            }
            emit_lines(opts->out, lines);
        });
    }

    // ------------------------------------------------------------------ eval
    auto* eval_cmd = app.add_subcommand("eval", "Per-task accuracy from tagged results");
    {
        auto opts = std::make_shared<CommonOpts>();
        auto results_path = std::make_shared<std::string>();
        auto taxonomy_path = std::make_shared<std::string>("data/ecommerce_taxonomy.json");
        eval_cmd->add_option("--results", *results_path,
                             "JSONL {sample_id, task_tags, correct}")->required();
        eval_cmd->add_option("--taxonomy", *taxonomy_path, "taxonomy JSON");
        eval_cmd->add_option("--out", opts->out, "accuracy output path or -");
        eval_cmd->callback([=] {
            of::TaskTaxonomy taxonomy = of::TaskTaxonomy::load(*taxonomy_path);
            std::vector<of::EvalResult> results;
            for (const auto& [line_no, j] : of::read_jsonl(*results_path).records) {
                if (!j.is_object() || !j.contains("sample_id") || !j.contains("correct")) {
                    throw std::invalid_argument("bad eval record at line " + std::to_string(line_no));
                }
                of::EvalResult r;
                r.sample_id = j["sample_id"].get<std::string>();
                r.correct = j["correct"].get<bool>();
                for (const auto& t : j.value("task_tags", json::array())) {
                    r.task_tags.push_back(t.get<std::string>());
                }
                results.push_back(r);
            }
            auto accuracy = of::evaluate_by_task(results, taxonomy);
            std::vector<json> lines;
            for (const auto& [task, acc] : accuracy) {
                lines.push_back(json{{"task_id", task}, {"accuracy", acc}});
            }
            emit_lines(opts->out, lines);
        });
    }

    // ------------------------------------------------------------------ loop
    auto* loop_cmd = app.add_subcommand("loop", "Closed-loop pipeline steps");
    loop_cmd->require_subcommand(1);
    {
        auto* run = loop_cmd->add_subcommand("run", "Run the whole pipeline from a config file");
        auto config_path = std::make_shared<std::string>();
        run->add_option("--config", *config_path, "pipeline config JSON")->required();
        run->callback([=] {
            of::PipelineConfig config = of::PipelineConfig::load(*config_path);
            of::PipelineResult result = of::run_pipeline(config);
            json counts = json::object();
            for (const auto& [stage, count] : result.stage_counts) counts[stage] = count;
            std::cout << json{{"stage_counts", counts}, {"manifest", result.manifest_path}}.dump()
                      << "\n";
        });
    }
    {
        auto* rw = loop_cmd->add_subcommand("reweight", "Sampling weights from per-task accuracy");
        auto opts = std::make_shared<CommonOpts>();
        auto eval_path = std::make_shared<std::string>();
        auto floor = std::make_shared<double>(0.01);
        rw->add_option("--eval", *eval_path, "eval output JSONL {task_id, accuracy}")->required();
        rw->add_option("--floor", *floor, "minimum unnormalized weight");
        rw->add_option("--out", opts->out, "weights output path or -");
        rw->callback([=] {
            of::LoopState state;
            for (const auto& [line_no, j] : of::read_jsonl(*eval_path).records) {
                if (!j.is_object() || !j.contains("task_id") || !j.contains("accuracy")) {
                    throw std::invalid_argument("bad accuracy record at line " + std::to_string(line_no));
                }
                state.per_task_accuracy[j["task_id"].get<std::string>()] = j["accuracy"].get<double>();
            }
            auto weights = of::reweight(state, *floor);
            std::vector<json> lines;
            for (const auto& [task, weight] : weights) {
                lines.push_back(json{{"task_id", task}, {"weight", weight}});
            }
            emit_lines(opts->out, lines);
        });
    }
    {
        auto* em = loop_cmd->add_subcommand("emit", "Emit the next manifest from weights");
        auto opts = std::make_shared<CommonOpts>();
        auto corpus_path = std::make_shared<std::string>();
        auto manifest_path = std::make_shared<std::string>();
        auto tags_path = std::make_shared<std::string>();
        auto weights_path = std::make_shared<std::string>();
        auto n_out = std::make_shared<int>(200);
        em->add_option("--corpus", *corpus_path, "corpus JSONL")->required();
        em->add_option("--manifest", *manifest_path, "candidate manifest");
        em->add_option("--tags", *tags_path, "tag output JSONL to attach to samples");
        em->add_option("--weights", *weights_path, "weights JSONL {task_id, weight}")->required();
        em->add_option("--seed", opts->seed, "draw seed");
        em->add_option("--n", *n_out, "samples to draw");
        em->add_option("--out", opts->out, "manifest output path or -");
        em->callback([=] {
            of::IngestResult ingested = of::ingest(*corpus_path);
            auto manifest = manifest_or_identity(*manifest_path, ingested.corpus);
            if (!tags_path->empty()) {
                for (const auto& [line_no, j] : of::read_jsonl(*tags_path).records) {
                    if (!j.is_object() || !j.contains("sample_id")) continue;
                    of::Sample* sample = ingested.corpus.find(j["sample_id"].get<std::string>());
                    if (!sample) continue;
                    sample->task_tags.clear();
                    for (const auto& t : j.value("tags", json::array())) {
                        sample->task_tags.push_back(t["task_id"].get<std::string>());
                    }
                }
            }
            std::map<std::string, double> weights;
            for (const auto& [line_no, j] : of::read_jsonl(*weights_path).records) {
                if (!j.is_object() || !j.contains("task_id") || !j.contains("weight")) {
                    throw std::invalid_argument("bad weight record at line " + std::to_string(line_no));
                }
                weights[j["task_id"].get<std::string>()] = j["weight"].get<double>();
            }
            auto result = of::emit_manifest(manifest, ingested.corpus, weights, opts->seed, *n_out);
            emit_lines(opts->out, manifest_lines(result));
        });
    }
    {
        auto* sy = loop_cmd->add_subcommand("synth", "Generate a synthetic benchmark corpus");
        auto opts = std::make_shared<CommonOpts>();
        auto n = std::make_shared<int>(500);
        sy->add_option("--n", *n, "samples to generate");
        sy->add_option("--seed", opts->seed, "generator seed");
        sy->add_option("--out", opts->out, "corpus output path or -");
        sy->callback([=] { emit_lines(opts->out, of::synth_corpus(*n, opts->seed)); });
    }

    // ------------------------------------------------------------------ plan
    auto* plan_cmd = app.add_subcommand("plan", "Stage-plan checks");
    plan_cmd->require_subcommand(1);
    {
        auto* pv = plan_cmd->add_subcommand("validate", "Validate stage plans against the recipe");
        auto file = std::make_shared<std::string>();
        pv->add_option("--file", *file, "stage plan JSON: one object or an array")->required();
        pv->callback([=, &exit_code] {
            json j = json::parse(of::read_text_file(*file));
            std::vector<of::StagePlan> plans;
            if (j.is_array()) {
                for (const auto& item : j) plans.push_back(of::StagePlan::from_json(item));
            } else {
                plans.push_back(of::StagePlan::from_json(j));
            }
            auto violations =
                j.is_array() ? of::validate_recipe(plans) : of::validate_stage_plan(plans[0]);
            std::vector<json> lines;
            for (const auto& v : violations) lines.push_back(json{{"violation", v}});
            emit_lines("-", lines);
            if (!violations.empty()) {
                std::cerr << violations.size() << " violation(s)\n";
                exit_code = 1;
            } else {
                std::cerr << "ok\n";
            }
        });
    }

    // ------------------------------------------------------------------ pack
    auto* pack_cmd = app.add_subcommand("pack", "First-fit-decreasing sequence packing");
    {
        auto opts = std::make_shared<CommonOpts>();
        auto lengths_path = std::make_shared<std::string>();
        auto max_len = std::make_shared<long>(8192);
        pack_cmd->add_option("--lengths", *lengths_path, "JSONL {id, tokens}")->required();
        pack_cmd->add_option("--max-len", *max_len, "bin capacity in tokens");
        pack_cmd->add_option("--out", opts->out, "bin output path or -");
        pack_cmd->callback([=] {
            std::vector<std::pair<std::string, long>> samples;
            for (const auto& [line_no, j] : of::read_jsonl(*lengths_path).records) {
                if (!j.is_object() || !j.contains("id") || !j.contains("tokens")) {
                    throw std::invalid_argument("bad length record at line " + std::to_string(line_no));
                }
                samples.push_back({j["id"].get<std::string>(), j["tokens"].get<long>()});
            }
            auto batch = of::pack_sequences(samples, *max_len);
            std::vector<json> lines;
            for (size_t i = 0; i < batch.bins.size(); ++i) {
                lines.push_back(json{{"bin", i},
                                     {"sample_ids", batch.bins[i].sample_ids},
                                     {"total_tokens", batch.bins[i].total_tokens}});
            }
            emit_lines(opts->out, lines);
        });
    }

    // ---------------------------------------------------------------- fusion
    auto* fusion_cmd = app.add_subcommand("fusion", "Audio-connector reference math");
    fusion_cmd->require_subcommand(1);
    {
        auto* fc = fusion_cmd->add_subcommand("check", "Forward-shape check at full dims");
        auto dims = std::make_shared<std::string>("8B");
        auto tokens = std::make_shared<int>(4);
        auto seed = std::make_shared<uint64_t>(0);
        fc->add_option("--dims", *dims, "model size: 8B or 32B");
        fc->add_option("--tokens", *tokens, "input frames T");
        fc->add_option("--seed", *seed, "parameter seed");
        fc->callback([=] {
            auto hidden = of::hidden_size_for_model(*dims);
            if (!hidden) throw std::invalid_argument("unknown model size: " + *dims);
            auto params = of::ConnectorParams::random(of::kConnectorInputDim, of::kConnectorHiddenDim,
                                                      *hidden, *seed);
            of::Matrix input = of::Matrix::Zero(*tokens, of::kConnectorInputDim);
            std::mt19937_64 rng(*seed + 1);
            for (int r = 0; r < input.rows(); ++r) {
                for (int c = 0; c < input.cols(); ++c) {
                    input(r, c) = (static_cast<double>(rng() >> 11) * 0x1.0p-53) * 2.0 - 1.0;
                }
            }
            of::Matrix out = of::connector_forward(input, params);
            std::cout << json{{"dims", *dims},
                              {"input_shape", {input.rows(), input.cols()}},
                              {"output_shape", {out.rows(), out.cols()}},
                              {"output_mean", out.mean()},
                              {"output_abs_max", out.cwiseAbs().maxCoeff()}}
                             .dump()
                      << "\n";
        });
    }
    {
        auto* fg = fusion_cmd->add_subcommand("gradcheck", "Finite-difference gradient check");
        auto seed = std::make_shared<uint64_t>(0);
        auto tokens = std::make_shared<int>(3);
        auto step = std::make_shared<double>(1e-5);
        auto tol = std::make_shared<double>(1e-4);
        fg->add_option("--seed", *seed, "parameter seed");
        fg->add_option("--tokens", *tokens, "input frames T");
        fg->add_option("--h", *step, "finite-difference step");
        fg->add_option("--tol", *tol, "max relative error accepted");
        fg->callback([=, &exit_code] {
            const int in = 6, hidden = 8, out = 5;  // small dims keep FD tractable
            auto params = of::ConnectorParams::random(in, hidden, out, *seed);
            std::mt19937_64 rng(*seed + 1);
            auto unit = [&] { return (static_cast<double>(rng() >> 11) * 0x1.0p-53) * 2.0 - 1.0; };
            of::Matrix input(*tokens, in), upstream(*tokens, out);
            for (int r = 0; r < *tokens; ++r) {
                for (int c = 0; c < in; ++c) input(r, c) = unit();
                for (int c = 0; c < out; ++c) upstream(r, c) = unit();
            }
            auto loss = [&](const of::ConnectorParams& p, const of::Matrix& x) {
                return (of::connector_forward(x, p).cwiseProduct(upstream)).sum();
            };
            auto grads = of::connector_grad(params, input, upstream);
            double max_rel = 0.0;
            auto check = [&](double analytic, auto&& bump) {
                auto p_hi = params;
                auto p_lo = params;
                of::Matrix x_hi = input, x_lo = input;
                bump(p_hi, x_hi, *step);
                bump(p_lo, x_lo, -*step);
                double fd = (loss(p_hi, x_hi) - loss(p_lo, x_lo)) / (2.0 * *step);
                double rel = std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
                max_rel = std::max(max_rel, rel);
            };
            for (int i = 0; i < in; ++i) {
                check(grads.dw1(i, i % hidden), [&](of::ConnectorParams& p, of::Matrix&, double h) {
                    p.w1(i, i % hidden) += h;
                });
            }
            for (int i = 0; i < hidden; ++i) {
                check(grads.db2(i),
                      [&](of::ConnectorParams& p, of::Matrix&, double h) { p.b2(i) += h; });
            }
            for (int i = 0; i < out; ++i) {
                check(grads.dgamma(i),
                      [&](of::ConnectorParams& p, of::Matrix&, double h) { p.gamma(i) += h; });
                check(grads.dbeta(i),
                      [&](of::ConnectorParams& p, of::Matrix&, double h) { p.beta(i) += h; });
            }
            for (int r = 0; r < *tokens; ++r) {
                check(grads.dinput(r, r % in),
                      [&](of::ConnectorParams&, of::Matrix& x, double h) { x(r, r % in) += h; });
            }
            bool pass = max_rel <= *tol;
            std::cout << json{{"max_rel_error", max_rel}, {"tol", *tol}, {"pass", pass}}.dump() << "\n";
            if (!pass) exit_code = 1;
        });
    }
    {
        auto* fl = fusion_cmd->add_subcommand("layout", "Unified sequence layout and positions");
        auto audio = std::make_shared<int>(0);
        auto text = std::make_shared<int>(0);
        auto grid = std::make_shared<std::vector<int>>();
        fl->add_option("--audio", *audio, "audio token count");
        fl->add_option("--text", *text, "text token count");
        fl->add_option("--grid", *grid, "vision grid: T H W")->expected(3);
        fl->callback([=] {
            of::VisionGrid g;
            if (!grid->empty()) g = {(*grid)[0], (*grid)[1], (*grid)[2]};
            auto seq = of::assign_positions(of::layout_sequence(*audio, g, *text));
            std::cout << seq.to_json().dump() << "\n";
        });
    }

    try {
        CLI11_PARSE(app, argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return exit_code;
}
