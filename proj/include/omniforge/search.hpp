#pragma once

#include <map>
#include <string>
#include <vector>

#include "omniforge/jsonl.hpp"
#include "omniforge/trajectory.hpp"

namespace omniforge {

struct TextDoc {
    std::string id;
    std::string text;
};

struct VectorEntry {
    std::string id;
    std::vector<double> values;  // finite, non-zero; stored unit-normalized
    std::string modality;
};

// BM25 parameters pinned for the t2t mode.
inline constexpr double kBm25K1 = 1.2;
inline constexpr double kBm25B = 0.75;
inline constexpr size_t kSnippetLimit = 512;

// Immutable offline search engine over a text corpus (BM25) and a vector
// corpus (cosine). All three retrieval modes take the query as a string:
// t2t treats it as text, t2i maps it through the configured text-vector
// table, i2i treats it as the locator of an indexed vector.
class SearchIndex {
  public:
    static SearchIndex build(const std::vector<TextDoc>& docs, const std::vector<VectorEntry>& vectors);
    // Either path may be empty to skip that corpus. Docs: JSONL {id, text};
    // vectors: JSONL {id, values, modality}.
    static SearchIndex load(const std::string& docs_path, const std::string& vectors_path);

    // t2i mapping: query text -> embedding, either inline {"text","values"}
    // or by reference {"text","vector_id"} to an indexed vector.
    void set_text_vector(const std::string& text, std::vector<double> values);
    void load_text_vector_table(const std::string& path);

    std::vector<Hit> search(SearchMode mode, const std::string& query, int k) const;
    // Direct-vector overload for i2i.
    std::vector<Hit> search_vector(const std::vector<double>& query, int k) const;

    size_t doc_count() const { return docs_.size(); }
    size_t vector_count() const { return vectors_.size(); }
    double mean_doc_length() const { return mean_doc_length_; }

    static std::vector<std::string> tokenize(const std::string& text);

  private:
    struct StoredDoc {
        std::string id;
        std::string text;
        std::map<std::string, int> term_freq;
        size_t length = 0;
    };

    std::vector<Hit> bm25(const std::string& query, int k) const;
    std::vector<Hit> cosine_top_k(const std::vector<double>& unit_query, int k) const;

    std::vector<StoredDoc> docs_;
    std::map<std::string, int> doc_freq_;  // term -> number of docs containing it
    double mean_doc_length_ = 0.0;

    std::vector<VectorEntry> vectors_;  // values unit-normalized
    std::map<std::string, size_t> vector_by_id_;
    std::map<std::string, std::vector<double>> text_vectors_;  // unit-normalized
};

}  // namespace omniforge
