#include "omniforge/corpus.hpp"

#include <cctype>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "omniforge/jsonl.hpp"

namespace omniforge {

const char* to_string(ModalityKind k) {
    switch (k) {
        case ModalityKind::text: return "text";
        case ModalityKind::image: return "image";
        case ModalityKind::audio: return "audio";
        case ModalityKind::video: return "video";
    }
    return "text";
}

std::optional<ModalityKind> modality_kind_from_string(const std::string& s) {
    if (s == "text") return ModalityKind::text;
    if (s == "image") return ModalityKind::image;
    if (s == "audio") return ModalityKind::audio;
    if (s == "video") return ModalityKind::video;
    return std::nullopt;
}

const char* to_string(SampleSource s) {
    return s == SampleSource::in_domain ? "in_domain" : "open_domain";
}

std::optional<SampleSource> sample_source_from_string(const std::string& s) {
    if (s == "in_domain") return SampleSource::in_domain;
    if (s == "open_domain") return SampleSource::open_domain;
    return std::nullopt;
}

json Sample::to_json() const {
    json j;
    j["id"] = id;
    j["question"] = question;
    j["answer"] = answer;
    if (!refs.empty()) {
        json arr = json::array();
        for (const auto& r : refs) {
            arr.push_back({{"kind", to_string(r.kind)}, {"uri", r.uri}, {"size_hint", r.size_hint}});
        }
        j["refs"] = std::move(arr);
    }
    j["source"] = to_string(source);
    if (!task_tags.empty()) j["task_tags"] = task_tags;
    j["token_count"] = token_count;
    return j;
}

void DatasetManifest::validate() const {
    std::unordered_set<std::string> seen;
    double sum = 0.0;
    bool any_positive = false;
    for (const auto& e : entries) {
        if (!seen.insert(e.sample_id).second) {
            throw std::invalid_argument("manifest: duplicate sample_id " + e.sample_id);
        }
        if (!(e.weight >= 0.0) || !std::isfinite(e.weight)) {
            throw std::invalid_argument("manifest: negative or non-finite weight for " + e.sample_id);
        }
        if (e.weight > 0.0) any_positive = true;
        sum += e.weight;
    }
    if (any_positive && !(sum > 0.0 && std::isfinite(sum))) {
        throw std::invalid_argument("manifest: weights are not normalizable");
    }
}

json DatasetManifest::entry_to_json(size_t i) const {
    const auto& e = entries.at(i);
    return json{{"sample_id", e.sample_id}, {"weight", e.weight}};
}

Corpus::Corpus(std::vector<Sample> samples) : samples_(std::move(samples)) {
    rebuild_index();
}

void Corpus::rebuild_index() {
    by_id_.clear();
    by_id_.reserve(samples_.size());
    for (size_t i = 0; i < samples_.size(); ++i) {
        by_id_.emplace(samples_[i].id, i);
    }
}

const Sample* Corpus::find(const std::string& id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &samples_[it->second];
}

Sample* Corpus::find(const std::string& id) {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &samples_[it->second];
}

const Sample& Corpus::at(const std::string& id) const {
    const Sample* s = find(id);
    if (!s) throw std::invalid_argument("unresolvable sample id: " + id);
    return *s;
}

DuplicateIdError::DuplicateIdError(std::vector<std::string> offenders)
    : std::runtime_error([&offenders] {
          std::ostringstream os;
          os << "duplicate sample ids:";
          for (const auto& id : offenders) os << ' ' << id;
          return os.str();
      }()),
      offenders_(std::move(offenders)) {}

uint64_t estimate_token_count(const std::string& question, const std::string& answer) {
    uint64_t n = 0;
    bool in_tok = false;
    auto scan = [&](const std::string& s) {
        for (unsigned char c : s) {
            if (std::isspace(c)) {
                in_tok = false;
            } else if (!in_tok) {
                in_tok = true;
                ++n;
            }
        }
        in_tok = false;
    };
    scan(question);
    scan(answer);
    return n;
}

namespace {

// Returns nullopt and fills `reason` when the record is malformed.
std::optional<Sample> parse_record(const json& j, std::string& reason) {
    if (!j.is_object()) {
        reason = "record is not a JSON object";
        return std::nullopt;
    }
    Sample s;
    for (const char* field : {"id", "question", "answer"}) {
        if (!j.contains(field) || !j[field].is_string()) {
            reason = std::string("missing or non-string field `") + field + "`";
            return std::nullopt;
        }
    }
    s.id = j["id"].get<std::string>();
    if (s.id.empty()) {
        reason = "empty id";
        return std::nullopt;
    }
    s.question = j["question"].get<std::string>();
    s.answer = j["answer"].get<std::string>();

    if (j.contains("refs")) {
        if (!j["refs"].is_array()) {
            reason = "`refs` is not an array";
            return std::nullopt;
        }
        for (const auto& rj : j["refs"]) {
            if (!rj.is_object() || !rj.contains("kind") || !rj["kind"].is_string() ||
                !rj.contains("uri") || !rj["uri"].is_string()) {
                reason = "malformed ref entry";
                return std::nullopt;
            }
            auto kind = modality_kind_from_string(rj["kind"].get<std::string>());
            if (!kind) {
                reason = "unknown ref kind `" + rj["kind"].get<std::string>() + "`";
                return std::nullopt;
            }
            ModalityRef ref;
            ref.kind = *kind;
            ref.uri = rj["uri"].get<std::string>();
            if (ref.uri.empty()) {
                reason = "empty ref uri";
                return std::nullopt;
            }
            if (rj.contains("size_hint")) {
                if (!rj["size_hint"].is_number_unsigned()) {
                    reason = "ref size_hint must be a non-negative integer";
                    return std::nullopt;
                }
                ref.size_hint = rj["size_hint"].get<uint64_t>();
            }
            s.refs.push_back(std::move(ref));
        }
    }
    if (j.contains("source")) {
        if (!j["source"].is_string()) {
            reason = "`source` is not a string";
            return std::nullopt;
        }
        auto src = sample_source_from_string(j["source"].get<std::string>());
        if (!src) {
            reason = "unknown source `" + j["source"].get<std::string>() + "`";
            return std::nullopt;
        }
        s.source = *src;
    }
    if (j.contains("task_tags")) {
        if (!j["task_tags"].is_array()) {
            reason = "`task_tags` is not an array";
            return std::nullopt;
        }
        for (const auto& t : j["task_tags"]) {
            if (!t.is_string()) {
                reason = "task_tags entries must be strings";
                return std::nullopt;
            }
            s.task_tags.push_back(t.get<std::string>());
        }
    }
    if (j.contains("token_count")) {
        if (!j["token_count"].is_number_unsigned()) {
            reason = "token_count must be a non-negative integer";
            return std::nullopt;
        }
        s.token_count = j["token_count"].get<uint64_t>();
    } else {
        s.token_count = estimate_token_count(s.question, s.answer);
    }
    return s;
}

}  // namespace

IngestResult ingest(const std::string& path, const std::string& format) {
    if (format != "jsonl") {
        throw std::invalid_argument("unknown corpus format: " + format);
    }
    JsonlFile file = read_jsonl(path);

    IngestResult out;
    for (const auto& err : file.errors) {
        out.rejections.push_back({err.line_no, "", err.message});
    }

    std::vector<Sample> samples;
    std::unordered_map<std::string, int> id_count;
    for (const auto& rec : file.records) {
        std::string reason;
        auto s = parse_record(rec.value, reason);
        if (!s) {
            std::string id;
            if (rec.value.is_object() && rec.value.contains("id") && rec.value["id"].is_string()) {
                id = rec.value["id"].get<std::string>();
            }
            out.rejections.push_back({rec.line_no, id, reason});
            continue;
        }
        ++id_count[s->id];
        samples.push_back(std::move(*s));
    }

    std::vector<std::string> dups;
    for (const auto& s : samples) {
        if (id_count[s.id] > 1) {
            dups.push_back(s.id);
            id_count[s.id] = 0;  // report each offender once
        }
    }
    if (!dups.empty()) throw DuplicateIdError(std::move(dups));

    for (const auto& s : samples) {
        out.manifest.entries.push_back({s.id, 1.0});
    }
    out.corpus = Corpus(std::move(samples));
    return out;
}

void write_corpus(const std::string& path, const Corpus& corpus) {
    std::vector<json> items;
    items.reserve(corpus.size());
    for (const auto& s : corpus.samples()) items.push_back(s.to_json());
    write_jsonl(path, items);
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
    std::vector<json> items;
    items.reserve(manifest.entries.size());
    for (size_t i = 0; i < manifest.entries.size(); ++i) items.push_back(manifest.entry_to_json(i));
    write_jsonl(path, items);
}

DatasetManifest read_manifest(const std::string& path) {
    JsonlFile file = read_jsonl(path);
    if (!file.errors.empty()) {
        throw std::runtime_error("manifest parse error at line " +
                                 std::to_string(file.errors.front().line_no));
    }
    DatasetManifest m;
    for (const auto& rec : file.records) {
        const json& j = rec.value;
        if (!j.is_object() || !j.contains("sample_id") || !j["sample_id"].is_string() ||
            !j.contains("weight") || !j["weight"].is_number()) {
            throw std::runtime_error("malformed manifest entry at line " + std::to_string(rec.line_no));
        }
        m.entries.push_back({j["sample_id"].get<std::string>(), j["weight"].get<double>()});
    }
    m.validate();
    return m;
}

DatasetManifest length_filter(const DatasetManifest& manifest, const Corpus& corpus,
                              uint64_t min_tokens, uint64_t max_tokens) {
    if (min_tokens > max_tokens) {
        throw std::invalid_argument("length_filter: min_tokens > max_tokens");
    }
    DatasetManifest out;
    out.stage_target = manifest.stage_target;
    for (const auto& e : manifest.entries) {
        const Sample& s = corpus.at(e.sample_id);
        if (s.token_count >= min_tokens && s.token_count <= max_tokens) {
            out.entries.push_back(e);
        }
    }
    return out;
}

}  // namespace omniforge
