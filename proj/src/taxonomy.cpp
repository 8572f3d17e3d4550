#include "omniforge/taxonomy.hpp"

#include <algorithm>
#include <set>

namespace omniforge {

namespace {

std::string single_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\r', ' ');
    return s;
}

int level_rank(TaskLevel l) { return static_cast<int>(l); }

}  // namespace

const char* to_string(TaskLevel level) {
    switch (level) {
        case TaskLevel::L1: return "L1";
        case TaskLevel::L2: return "L2";
        case TaskLevel::L3: return "L3";
        case TaskLevel::L4: return "L4";
    }
    return "L3";
}

std::optional<TaskLevel> task_level_from_string(const std::string& s) {
    if (s == "L1") return TaskLevel::L1;
    if (s == "L2") return TaskLevel::L2;
    if (s == "L3") return TaskLevel::L3;
    if (s == "L4") return TaskLevel::L4;
    return std::nullopt;
}

const char* to_string(ConsistencyStatus s) {
    switch (s) {
        case ConsistencyStatus::consistent: return "consistent";
        case ConsistencyStatus::inconsistent: return "inconsistent";
        case ConsistencyStatus::unknown: return "unknown";
    }
    return "unknown";
}

TaskTaxonomy TaskTaxonomy::from_json(const json& array) {
    if (!array.is_array()) throw TaxonomyError("taxonomy file must be a JSON array", {});
    TaskTaxonomy t;
    for (const auto& node : array) {
        if (!node.is_object() || !node.contains("id") || !node["id"].is_string() ||
            !node.contains("level") || !node["level"].is_string() || !node.contains("name") ||
            !node["name"].is_string()) {
            throw TaxonomyError("malformed taxonomy node: " + node.dump(), {});
        }
        AtomicTask task;
        task.id = node["id"].get<std::string>();
        auto level = task_level_from_string(node["level"].get<std::string>());
        if (!level) throw TaxonomyError("bad level on node", {task.id});
        task.level = *level;
        if (node.contains("parent_id") && node["parent_id"].is_string()) {
            task.parent_id = node["parent_id"].get<std::string>();
        }
        task.name = node["name"].get<std::string>();
        if (node.contains("description") && node["description"].is_string()) {
            task.description = node["description"].get<std::string>();
        }
        if (task.name.empty()) throw TaxonomyError("empty name", {task.id});
        if (t.nodes_.count(task.id)) throw TaxonomyError("duplicate task id", {task.id});
        t.nodes_[task.id] = std::move(task);
    }
    for (const auto& [id, task] : t.nodes_) {
        if (task.level == TaskLevel::L1) t.roots_.push_back(id);
    }
    t.validate();
    return t;
}

TaskTaxonomy TaskTaxonomy::load(const std::string& path) {
    json j = json::parse(read_text_file(path), nullptr, false);
    if (j.is_discarded()) throw TaxonomyError("taxonomy file does not parse: " + path, {});
    return from_json(j);
}

void TaskTaxonomy::validate() const {
    std::vector<std::string> bad;

    for (const auto& [id, task] : nodes_) {
        if (task.level == TaskLevel::L1) {
            if (task.parent_id) bad.push_back(id);
            continue;
        }
        if (!task.parent_id) {
            bad.push_back(id);
            continue;
        }
        auto parent = nodes_.find(*task.parent_id);
        if (parent == nodes_.end()) {
            bad.push_back(id);  // dangling parent
            continue;
        }
        if (level_rank(parent->second.level) != level_rank(task.level) - 1) {
            bad.push_back(id);  // level/parent mismatch
        }
    }
    if (!bad.empty()) throw TaxonomyError("invalid parent links", bad);

    // Walk each parent chain; chains longer than the node count mean a cycle.
    for (const auto& [id, task] : nodes_) {
        const AtomicTask* cur = &task;
        size_t steps = 0;
        while (cur->parent_id) {
            cur = &nodes_.at(*cur->parent_id);
            if (++steps > nodes_.size()) throw TaxonomyError("cycle in parent links", {id});
        }
        if (cur->level != TaskLevel::L1) throw TaxonomyError("node not rooted at L1", {id});
    }
}

const AtomicTask* TaskTaxonomy::find(const std::string& id) const {
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : &it->second;
}

const AtomicTask& TaskTaxonomy::at(const std::string& id) const {
    auto p = find(id);
    if (!p) throw std::out_of_range("unknown task id: " + id);
    return *p;
}

std::vector<std::string> TaskTaxonomy::level_ids(TaskLevel level) const {
    std::vector<std::string> out;
    for (const auto& [id, task] : nodes_) {
        if (task.level == level) out.push_back(id);
    }
    return out;  // map iteration is already sorted
}

std::vector<std::string> TaskTaxonomy::ancestors(const std::string& id) const {
    std::vector<std::string> chain;
    const AtomicTask* cur = &at(id);
    while (cur->parent_id) {
        chain.push_back(*cur->parent_id);
        cur = &at(*cur->parent_id);
    }
    return chain;
}

std::vector<TaskTag> map_tasks(const Sample& sample, const TaskTaxonomy& taxonomy, int k,
                               ModelClient& tagger) {
    if (k < 1) throw std::invalid_argument("map_tasks: k must be positive");

    auto l3 = taxonomy.level_ids(TaskLevel::L3);
    if (l3.empty()) return {};

    std::string task_list;
    for (size_t i = 0; i < l3.size(); ++i) {
        if (i) task_list += ',';
        task_list += l3[i];
    }
    GenerationRequest req;
    req.segments.push_back({ModalityKind::text,
                            "task_tagging\nquestion: " + single_line(sample.question) +
                                "\nanswer: " + single_line(sample.answer) + "\ntasks: " + task_list});
    req.max_tokens = 4096;

    GenerationResult res = tagger.generate(req);
    json scores = json::parse(res.text, nullptr, false);
    if (scores.is_discarded() || !scores.is_object()) {
        throw ClientError("tagger reply is not a JSON score object", /*retryable=*/false);
    }

    std::vector<TaskTag> tags;
    for (const auto& [task_id, value] : scores.items()) {
        if (!value.is_number()) continue;
        const AtomicTask* node = taxonomy.find(task_id);
        if (!node || node->level != TaskLevel::L3) continue;  // only atomic units are stored
        double conf = std::min(1.0, std::max(0.0, value.get<double>()));
        tags.push_back({task_id, conf});
    }
    std::sort(tags.begin(), tags.end(), [](const TaskTag& a, const TaskTag& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.task_id < b.task_id;
    });
    if (tags.size() > static_cast<size_t>(k)) tags.resize(static_cast<size_t>(k));
    return tags;
}

ConsistencyResult check_consistency(const Sample& sample, const std::vector<TaskTag>& tags,
                                    ModelClient& checker) {
    if (tags.empty()) throw std::invalid_argument("check_consistency: tags must be non-empty");

    std::string tag_list;
    for (size_t i = 0; i < tags.size(); ++i) {
        if (i) tag_list += ',';
        tag_list += tags[i].task_id;
    }

    JudgeRequest task_req;
    task_req.question = sample.question + "\ntasks: " + tag_list;
    task_req.candidate = sample.answer;
    task_req.rubric_id = "task_consistency";

    JudgeRequest evidence_req;
    evidence_req.question = sample.question;
    evidence_req.candidate = sample.answer;
    evidence_req.rubric_id = "evidence_consistency";

    auto task_score = checker.judge(task_req);
    auto evidence_score = checker.judge(evidence_req);

    ConsistencyResult result;
    if (!task_score || !evidence_score) {
        result.status = ConsistencyStatus::unknown;
        if (!task_score) result.reasons.push_back("task:unknown");
        if (!evidence_score) result.reasons.push_back("evidence:unknown");
        return result;
    }
    bool task_ok = *task_score > 0.5;
    bool evidence_ok = *evidence_score > 0.5;
    if (task_ok && evidence_ok) {
        result.status = ConsistencyStatus::consistent;
    } else {
        result.status = ConsistencyStatus::inconsistent;
        if (!task_ok) result.reasons.push_back("task");
        if (!evidence_ok) result.reasons.push_back("evidence");
    }
    return result;
}

CoverageReport coverage_report(const DatasetManifest& manifest, const Corpus& corpus,
                               const TaskTaxonomy& taxonomy) {
    std::map<std::string, size_t> counts;
    for (const auto& id : taxonomy.level_ids(TaskLevel::L3)) counts[id] = 0;

    CoverageReport report;
    for (const auto& entry : manifest.entries) {
        const Sample& sample = corpus.at(entry.sample_id);
        std::set<std::string> seen;
        for (const auto& tag : sample.task_tags) {
            const AtomicTask* node = taxonomy.find(tag);
            if (!node || node->level != TaskLevel::L3) continue;
            if (seen.insert(tag).second) ++counts[tag];
        }
        if (seen.empty()) ++report.untagged;
    }

    report.counts.assign(counts.begin(), counts.end());
    std::sort(report.counts.begin(), report.counts.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return report;
}

json CoverageReport::to_json() const {
    json counts_obj = json::object();
    for (const auto& [id, n] : counts) counts_obj[id] = n;
    return json{{"counts", counts_obj}, {"untagged", untagged}};
}

}  // namespace omniforge
