#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace omniforge {

enum class ModalityKind { text, image, audio, video };

const char* to_string(ModalityKind k);
std::optional<ModalityKind> modality_kind_from_string(const std::string& s);

// Opaque reference to modality content. size_hint is bytes, or milliseconds
// for audio/video.
struct ModalityRef {
    ModalityKind kind = ModalityKind::text;
    std::string uri;
    uint64_t size_hint = 0;
};

enum class SampleSource { in_domain, open_domain };

const char* to_string(SampleSource s);
std::optional<SampleSource> sample_source_from_string(const std::string& s);

// One multimodal training record.
struct Sample {
    std::string id;
    std::vector<ModalityRef> refs;
    std::string question;
    std::string answer;
    std::vector<std::string> task_tags;
    SampleSource source = SampleSource::open_domain;
    uint64_t token_count = 0;

    nlohmann::json to_json() const;
};

struct ManifestEntry {
    std::string sample_id;
    double weight = 1.0;
};

// Weighted list of sample references defining one iteration's data
// distribution.
struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::optional<std::string> stage_target;

    // Throws std::invalid_argument on duplicate ids, negative weights, or
    // weights that cannot be normalized.
    void validate() const;

    nlohmann::json entry_to_json(size_t i) const;
};

// Sample store with id lookup.
class Corpus {
  public:
    Corpus() = default;
    explicit Corpus(std::vector<Sample> samples);

    const std::vector<Sample>& samples() const { return samples_; }
    std::vector<Sample>& samples() { return samples_; }
    size_t size() const { return samples_.size(); }

    const Sample* find(const std::string& id) const;
    Sample* find(const std::string& id);
    // Throws std::invalid_argument if the id is unknown.
    const Sample& at(const std::string& id) const;

    void rebuild_index();

  private:
    std::vector<Sample> samples_;
    std::unordered_map<std::string, size_t> by_id_;
};

struct RejectedRecord {
    size_t line_no = 0;
    std::string id;  // empty when the record had no usable id
    std::string reason;
};

struct IngestResult {
    DatasetManifest manifest;
    Corpus corpus;
    std::vector<RejectedRecord> rejections;
};

// Whole-ingest failure: the same id appeared on more than one record.
class DuplicateIdError : public std::runtime_error {
  public:
    explicit DuplicateIdError(std::vector<std::string> offenders);
    const std::vector<std::string>& offenders() const { return offenders_; }

  private:
    std::vector<std::string> offenders_;
};

// Whitespace-delimited token estimate, used when no tokenizer service is
// configured.
uint64_t estimate_token_count(const std::string& question, const std::string& answer);

// Ingests a JSON-lines corpus. Valid records become Samples with manifest
// weight 1.0; malformed records are reported with line numbers. The only
// supported format is "jsonl"; anything else throws. Duplicate ids reject
// the whole ingest via DuplicateIdError.
IngestResult ingest(const std::string& path, const std::string& format = "jsonl");

// Writes samples back out in the ingest schema (round-trip safe).
void write_corpus(const std::string& path, const Corpus& corpus);
void write_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::string& path);

// Keeps entries whose sample token_count lies in [min_tokens, max_tokens],
// inclusive on both ends. Throws if min > max or an id is unresolvable.
DatasetManifest length_filter(const DatasetManifest& manifest, const Corpus& corpus,
                              uint64_t min_tokens, uint64_t max_tokens);

}  // namespace omniforge
