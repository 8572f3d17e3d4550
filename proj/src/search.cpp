#include "omniforge/search.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "omniforge/fingerprint.hpp"

namespace omniforge {

namespace {

std::vector<double> unit_normalize(const std::vector<double>& values, const std::string& what) {
    double norm_sq = 0.0;
    for (double v : values) {
        if (!std::isfinite(v)) throw std::invalid_argument(what + ": non-finite vector component");
        norm_sq += v * v;
    }
    if (values.empty() || norm_sq == 0.0) throw std::invalid_argument(what + ": zero vector");
    double inv = 1.0 / std::sqrt(norm_sq);
    std::vector<double> out(values.size());
    for (size_t i = 0; i < values.size(); ++i) out[i] = values[i] * inv;
    return out;
}

void sort_and_truncate(std::vector<Hit>& hits, int k) {
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    if (hits.size() > static_cast<size_t>(k)) hits.resize(static_cast<size_t>(k));
}

std::string snippet_of(const std::string& text) {
    return text.size() <= kSnippetLimit ? text : text.substr(0, kSnippetLimit);
}

}  // namespace

std::vector<std::string> SearchIndex::tokenize(const std::string& text) {
    return canonical_tokens(text);
}

SearchIndex SearchIndex::build(const std::vector<TextDoc>& docs, const std::vector<VectorEntry>& vectors) {
    SearchIndex idx;
    std::set<std::string> seen;
    size_t total_length = 0;
    for (const auto& doc : docs) {
        if (!seen.insert(doc.id).second) throw std::invalid_argument("duplicate doc id: " + doc.id);
        StoredDoc stored;
        stored.id = doc.id;
        stored.text = doc.text;
        for (const auto& tok : tokenize(doc.text)) {
            ++stored.term_freq[tok];
            ++stored.length;
        }
        total_length += stored.length;
        idx.docs_.push_back(std::move(stored));
    }
    for (const auto& doc : idx.docs_) {
        for (const auto& [term, _] : doc.term_freq) ++idx.doc_freq_[term];
    }
    idx.mean_doc_length_ =
        idx.docs_.empty() ? 0.0 : static_cast<double>(total_length) / static_cast<double>(idx.docs_.size());

    std::set<std::string> seen_vec;
    for (const auto& entry : vectors) {
        if (!seen_vec.insert(entry.id).second) {
            throw std::invalid_argument("duplicate vector id: " + entry.id);
        }
        VectorEntry stored = entry;
        stored.values = unit_normalize(entry.values, "vector " + entry.id);
        idx.vector_by_id_[stored.id] = idx.vectors_.size();
        idx.vectors_.push_back(std::move(stored));
    }
    return idx;
}

SearchIndex SearchIndex::load(const std::string& docs_path, const std::string& vectors_path) {
    std::vector<TextDoc> docs;
    std::vector<VectorEntry> vectors;
    if (!docs_path.empty()) {
        JsonlFile file = read_jsonl(docs_path);
        if (!file.errors.empty()) {
            throw std::invalid_argument("docs file line " + std::to_string(file.errors[0].line_no) +
                                        ": " + file.errors[0].message);
        }
        for (const auto& rec : file.records) {
            if (!rec.value.is_object() || !rec.value.contains("id") || !rec.value["id"].is_string() ||
                !rec.value.contains("text") || !rec.value["text"].is_string()) {
                throw std::invalid_argument("docs file line " + std::to_string(rec.line_no) +
                                            ": need {id, text}");
            }
            docs.push_back({rec.value["id"].get<std::string>(), rec.value["text"].get<std::string>()});
        }
    }
    if (!vectors_path.empty()) {
        JsonlFile file = read_jsonl(vectors_path);
        if (!file.errors.empty()) {
            throw std::invalid_argument("vectors file line " + std::to_string(file.errors[0].line_no) +
                                        ": " + file.errors[0].message);
        }
        for (const auto& rec : file.records) {
            if (!rec.value.is_object() || !rec.value.contains("id") || !rec.value["id"].is_string() ||
                !rec.value.contains("values") || !rec.value["values"].is_array()) {
                throw std::invalid_argument("vectors file line " + std::to_string(rec.line_no) +
                                            ": need {id, values, modality}");
            }
            VectorEntry entry;
            entry.id = rec.value["id"].get<std::string>();
            for (const auto& v : rec.value["values"]) {
                if (!v.is_number()) {
                    throw std::invalid_argument("vectors file line " + std::to_string(rec.line_no) +
                                                ": non-numeric component");
                }
                entry.values.push_back(v.get<double>());
            }
            if (rec.value.contains("modality") && rec.value["modality"].is_string()) {
                entry.modality = rec.value["modality"].get<std::string>();
            }
            vectors.push_back(std::move(entry));
        }
    }
    return build(docs, vectors);
}

void SearchIndex::set_text_vector(const std::string& text, std::vector<double> values) {
    text_vectors_[canonicalize_text(text)] = unit_normalize(values, "text vector");
}

void SearchIndex::load_text_vector_table(const std::string& path) {
    JsonlFile file = read_jsonl(path);
    if (!file.errors.empty()) {
        throw std::invalid_argument("text-vector table line " + std::to_string(file.errors[0].line_no) +
                                    ": " + file.errors[0].message);
    }
    for (const auto& rec : file.records) {
        if (!rec.value.is_object() || !rec.value.contains("text") || !rec.value["text"].is_string()) {
            throw std::invalid_argument("text-vector table line " + std::to_string(rec.line_no) +
                                        ": need {text, values|vector_id}");
        }
        std::string text = rec.value["text"].get<std::string>();
        if (rec.value.contains("values") && rec.value["values"].is_array()) {
            std::vector<double> values;
            for (const auto& v : rec.value["values"]) values.push_back(v.get<double>());
            set_text_vector(text, std::move(values));
        } else if (rec.value.contains("vector_id") && rec.value["vector_id"].is_string()) {
            auto it = vector_by_id_.find(rec.value["vector_id"].get<std::string>());
            if (it == vector_by_id_.end()) {
                throw std::invalid_argument("text-vector table line " + std::to_string(rec.line_no) +
                                            ": unknown vector_id");
            }
            text_vectors_[canonicalize_text(text)] = vectors_[it->second].values;
        } else {
            throw std::invalid_argument("text-vector table line " + std::to_string(rec.line_no) +
                                        ": need values or vector_id");
        }
    }
}

std::vector<Hit> SearchIndex::bm25(const std::string& query, int k) const {
    std::vector<std::string> raw_terms = tokenize(query);
    std::set<std::string> terms(raw_terms.begin(), raw_terms.end());  // unique query terms
    if (terms.empty() || docs_.empty()) return {};

    double n = static_cast<double>(docs_.size());
    std::vector<Hit> hits;
    for (const auto& doc : docs_) {
        double score = 0.0;
        bool matched = false;
        for (const auto& term : terms) {
            auto tf_it = doc.term_freq.find(term);
            if (tf_it == doc.term_freq.end()) continue;
            matched = true;
            double df = static_cast<double>(doc_freq_.at(term));
            double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
            double tf = static_cast<double>(tf_it->second);
            double len_norm =
                1.0 - kBm25B + kBm25B * static_cast<double>(doc.length) / mean_doc_length_;
            score += idf * tf * (kBm25K1 + 1.0) / (tf + kBm25K1 * len_norm);
        }
        if (matched) hits.push_back({doc.id, score, snippet_of(doc.text)});
    }
    sort_and_truncate(hits, k);
    return hits;
}

std::vector<Hit> SearchIndex::cosine_top_k(const std::vector<double>& unit_query, int k) const {
    std::vector<Hit> hits;
    for (const auto& entry : vectors_) {
        if (entry.values.size() != unit_query.size()) continue;  // incomparable dimensionality
        double dot = 0.0;
        for (size_t i = 0; i < unit_query.size(); ++i) dot += entry.values[i] * unit_query[i];
        hits.push_back({entry.id, dot, entry.id});
    }
    sort_and_truncate(hits, k);
    return hits;
}

std::vector<Hit> SearchIndex::search_vector(const std::vector<double>& query, int k) const {
    if (k < 1) throw std::invalid_argument("search: k must be >= 1");
    return cosine_top_k(unit_normalize(query, "query"), k);
}

std::vector<Hit> SearchIndex::search(SearchMode mode, const std::string& query, int k) const {
    if (k < 1) throw std::invalid_argument("search: k must be >= 1");
    switch (mode) {
        case SearchMode::t2t: return bm25(query, k);
        case SearchMode::t2i: {
            auto it = text_vectors_.find(canonicalize_text(query));
            if (it == text_vectors_.end()) {
                throw std::invalid_argument("t2i: no vector mapping for query text");
            }
            return cosine_top_k(it->second, k);
        }
        case SearchMode::i2i: {
            auto it = vector_by_id_.find(query);
            if (it == vector_by_id_.end()) {
                throw std::invalid_argument("i2i: query is not a known vector locator");
            }
            return cosine_top_k(vectors_[it->second].values, k);
        }
    }
    return {};
}

}  // namespace omniforge
