#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "omniforge/corpus.hpp"
#include "omniforge/jsonl.hpp"
#include "omniforge/model_client.hpp"

namespace omniforge {

enum class TaskLevel { L1, L2, L3, L4 };

const char* to_string(TaskLevel level);
std::optional<TaskLevel> task_level_from_string(const std::string& s);

struct AtomicTask {
    std::string id;
    TaskLevel level = TaskLevel::L3;
    std::optional<std::string> parent_id;  // absent only for L1
    std::string name;
    std::string description;
};

// Structural violation found while loading; names every offending node.
class TaxonomyError : public std::runtime_error {
  public:
    TaxonomyError(std::string message, std::vector<std::string> node_ids)
        : std::runtime_error(std::move(message)), node_ids(std::move(node_ids)) {}
    std::vector<std::string> node_ids;
};

// Immutable after load. Parent links must form a forest rooted at L1 nodes
// with strict level steps (L2 under L1, L3 under L2, L4 under L3).
class TaskTaxonomy {
  public:
    static TaskTaxonomy from_json(const json& array);
    static TaskTaxonomy load(const std::string& path);

    bool has(const std::string& id) const { return nodes_.count(id) > 0; }
    const AtomicTask* find(const std::string& id) const;
    const AtomicTask& at(const std::string& id) const;
    size_t size() const { return nodes_.size(); }
    const std::map<std::string, AtomicTask>& nodes() const { return nodes_; }
    const std::vector<std::string>& roots() const { return roots_; }

    // Ids at one level, lexicographically sorted.
    std::vector<std::string> level_ids(TaskLevel level) const;
    // Parent chain from `id` (exclusive) up to its root, nearest first.
    std::vector<std::string> ancestors(const std::string& id) const;

  private:
    void validate() const;

    std::map<std::string, AtomicTask> nodes_;
    std::vector<std::string> roots_;
};

struct TaskTag {
    std::string task_id;
    double confidence = 0.0;  // in [0,1]
};

// Model-assisted top-k tagging against the taxonomy's L3 set. Output is
// sorted by confidence descending, ties by task id; never more than k tags
// and never a tag outside L3. Tagger failure propagates as ClientError —
// the sample stays untagged rather than getting fabricated tags.
std::vector<TaskTag> map_tasks(const Sample& sample, const TaskTaxonomy& taxonomy, int k,
                               ModelClient& tagger);

enum class ConsistencyStatus { consistent, inconsistent, unknown };

const char* to_string(ConsistencyStatus s);

struct ConsistencyResult {
    ConsistencyStatus status = ConsistencyStatus::unknown;
    std::vector<std::string> reasons;  // failing or unknown sub-checks
};

// Two independent judge calls (task fit, evidence fit) conjoined. A judge
// failure yields `unknown`, never a silent pass. Callers decide what to do
// with inconsistent samples; nothing is deleted here.
ConsistencyResult check_consistency(const Sample& sample, const std::vector<TaskTag>& tags,
                                    ModelClient& checker);

struct CoverageReport {
    // (task id, sample count) for every L3 task, sorted count descending,
    // ties by task id ascending.
    std::vector<std::pair<std::string, size_t>> counts;
    size_t untagged = 0;

    json to_json() const;
};

CoverageReport coverage_report(const DatasetManifest& manifest, const Corpus& corpus,
                               const TaskTaxonomy& taxonomy);

}  // namespace omniforge
