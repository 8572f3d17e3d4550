#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "omniforge/corpus.hpp"

namespace omniforge {

inline constexpr size_t kMinhashSignatureLen = 128;
inline constexpr int kShingleSize = 3;

// Content identity of a sample's question+answer text: an exact SHA-256
// over the canonical form plus a MinHash signature over token 3-gram
// shingles of the same text.
struct ContentFingerprint {
    std::array<uint8_t, 32> exact_hash{};
    std::vector<uint64_t> minhash;  // kMinhashSignatureLen slots

    std::string exact_hash_hex() const;
};

// NFC-normalizes, case-folds, and collapses Unicode whitespace runs to a
// single ASCII space (leading/trailing trimmed). Invalid UTF-8 bytes are
// replaced, never dropped silently.
std::string canonicalize_text(const std::string& text);

// Whitespace tokens of the canonical form.
std::vector<std::string> canonical_tokens(const std::string& canonical);

// Token 3-gram shingles; texts shorter than 3 tokens collapse to a single
// whole-text shingle, empty text to none.
std::vector<std::string> shingles(const std::vector<std::string>& tokens);

ContentFingerprint fingerprint(const Sample& sample);
ContentFingerprint fingerprint_text(const std::string& question, const std::string& answer);

// Fraction of matching signature slots; estimates shingle-set Jaccard.
double estimated_jaccard(const ContentFingerprint& a, const ContentFingerprint& b);

struct DedupRemoval {
    std::string removed_id;
    std::string kept_id;
    std::string reason;  // "exact" or "near"
    double estimated_jaccard = 1.0;
};

struct DedupResult {
    DatasetManifest manifest;
    std::vector<DedupRemoval> removals;
};

// Removes duplicates from the manifest, first-seen wins. Exact-hash classes
// keep one representative; among those survivors any pair with estimated
// Jaccard >= near_threshold keeps the first-seen. near_threshold > 1
// disables near-dedup.
DedupResult dedup(const DatasetManifest& manifest, const Corpus& corpus,
                  double near_threshold = 0.9, int threads = 1);

void write_dedup_report(const std::string& path, const std::vector<DedupRemoval>& removals);

}  // namespace omniforge
