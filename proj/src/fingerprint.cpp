#include "omniforge/fingerprint.hpp"

#include <openssl/evp.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <random>
#include <stdexcept>

#include "omniforge/jsonl.hpp"
#include "omniforge/parallel.hpp"

namespace omniforge {

namespace {

constexpr uint64_t kMersenne61 = (1ULL << 61) - 1;
constexpr uint64_t kPermutationSeed = 0x0f1e2d3c4b5a6978ULL;
// Empty text gets a dedicated signature so two empties compare equal.
constexpr uint64_t kEmptySentinel = ~0ULL;

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// (a*x + b) mod (2^61 - 1) via 128-bit intermediate.
uint64_t perm_hash(uint64_t a, uint64_t b, uint64_t x) {
    unsigned __int128 v = static_cast<unsigned __int128>(a) * (x % kMersenne61) + b;
    uint64_t r = static_cast<uint64_t>(v % kMersenne61);
    return r;
}

struct Permutations {
    std::vector<uint64_t> a, b;
    Permutations() {
        std::mt19937_64 rng(kPermutationSeed);
        a.resize(kMinhashSignatureLen);
        b.resize(kMinhashSignatureLen);
        for (size_t i = 0; i < kMinhashSignatureLen; ++i) {
            a[i] = rng() % (kMersenne61 - 1) + 1;  // a != 0
            b[i] = rng() % kMersenne61;
        }
    }
};

const Permutations& permutations() {
    static const Permutations p;
    return p;
}

std::array<uint8_t, 32> sha256(const std::string& data) {
    std::array<uint8_t, 32> digest{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1 ||
        len != digest.size()) {
        throw std::runtime_error("sha256 digest failed");
    }
    return digest;
}

}  // namespace

std::string ContentFingerprint::exact_hash_hex() const {
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (uint8_t b : exact_hash) {
        out.push_back(hex[b >> 4]);
        out.push_back(hex[b & 0xf]);
    }
    return out;
}

std::string canonicalize_text(const std::string& text) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) throw std::runtime_error("ICU NFC instance unavailable");

    icu::UnicodeString u = icu::UnicodeString::fromUTF8(text);
    icu::UnicodeString normalized = nfc->normalize(u, status);
    if (U_FAILURE(status)) throw std::runtime_error("ICU normalization failed");
    normalized.foldCase();

    // Collapse whitespace runs and trim.
    icu::UnicodeString collapsed;
    bool pending_space = false;
    bool seen_char = false;
    for (int32_t i = 0; i < normalized.length();) {
        UChar32 c = normalized.char32At(i);
        i += U16_LENGTH(c);
        if (u_isUWhiteSpace(c)) {
            pending_space = seen_char;
        } else {
            if (pending_space) collapsed.append(static_cast<UChar32>(' '));
            collapsed.append(c);
            pending_space = false;
            seen_char = true;
        }
    }
    std::string out;
    collapsed.toUTF8String(out);
    return out;
}

std::vector<std::string> canonical_tokens(const std::string& canonical) {
    std::vector<std::string> tokens;
    size_t start = 0;
    while (start < canonical.size()) {
        size_t end = canonical.find(' ', start);
        if (end == std::string::npos) end = canonical.size();
        if (end > start) tokens.push_back(canonical.substr(start, end - start));
        start = end + 1;
    }
    return tokens;
}

std::vector<std::string> shingles(const std::vector<std::string>& tokens) {
    std::vector<std::string> out;
    if (tokens.empty()) return out;
    if (tokens.size() < static_cast<size_t>(kShingleSize)) {
        std::string s = tokens[0];
        for (size_t i = 1; i < tokens.size(); ++i) s += '\x1f' + tokens[i];
        out.push_back(std::move(s));
        return out;
    }
    out.reserve(tokens.size() - kShingleSize + 1);
    for (size_t i = 0; i + kShingleSize <= tokens.size(); ++i) {
        out.push_back(tokens[i] + '\x1f' + tokens[i + 1] + '\x1f' + tokens[i + 2]);
    }
    return out;
}

ContentFingerprint fingerprint_text(const std::string& question, const std::string& answer) {
    std::string canonical = canonicalize_text(question + "\n" + answer);

    ContentFingerprint fp;
    fp.exact_hash = sha256(canonical);
    fp.minhash.assign(kMinhashSignatureLen, kEmptySentinel);

    auto sh = shingles(canonical_tokens(canonical));
    if (sh.empty()) return fp;

    std::vector<uint64_t> hashes;
    hashes.reserve(sh.size());
    for (const auto& s : sh) hashes.push_back(fnv1a64(s));

    const Permutations& p = permutations();
    for (size_t i = 0; i < kMinhashSignatureLen; ++i) {
        uint64_t best = kEmptySentinel;
        for (uint64_t x : hashes) {
            uint64_t h = perm_hash(p.a[i], p.b[i], x);
            if (h < best) best = h;
        }
        fp.minhash[i] = best;
    }
    return fp;
}

ContentFingerprint fingerprint(const Sample& sample) {
    return fingerprint_text(sample.question, sample.answer);
}

double estimated_jaccard(const ContentFingerprint& a, const ContentFingerprint& b) {
    if (a.minhash.size() != b.minhash.size() || a.minhash.empty()) {
        throw std::invalid_argument("signature length mismatch");
    }
    size_t matches = 0;
    for (size_t i = 0; i < a.minhash.size(); ++i) {
        if (a.minhash[i] == b.minhash[i]) ++matches;
    }
    return static_cast<double>(matches) / static_cast<double>(a.minhash.size());
}

DedupResult dedup(const DatasetManifest& manifest, const Corpus& corpus,
                  double near_threshold, int threads) {
    const size_t n = manifest.entries.size();
    std::vector<ContentFingerprint> fps(n);
    parallel_for(n, threads, [&](size_t i) {
        fps[i] = fingerprint(corpus.at(manifest.entries[i].sample_id));
    });

    DedupResult out;
    out.manifest.stage_target = manifest.stage_target;

    // Exact classes, first-seen representative.
    std::unordered_map<std::string, size_t> first_by_hash;
    std::vector<size_t> survivors;
    for (size_t i = 0; i < n; ++i) {
        std::string key = fps[i].exact_hash_hex();
        auto [it, inserted] = first_by_hash.emplace(std::move(key), i);
        if (inserted) {
            survivors.push_back(i);
        } else {
            out.removals.push_back({manifest.entries[i].sample_id,
                                    manifest.entries[it->second].sample_id, "exact", 1.0});
        }
    }

    // Near-duplicates among exact survivors, first-seen wins.
    std::vector<bool> removed(survivors.size(), false);
    if (near_threshold <= 1.0) {
        for (size_t j = 1; j < survivors.size(); ++j) {
            for (size_t i = 0; i < j; ++i) {
                if (removed[i]) continue;
                double est = estimated_jaccard(fps[survivors[i]], fps[survivors[j]]);
                if (est >= near_threshold) {
                    removed[j] = true;
                    out.removals.push_back({manifest.entries[survivors[j]].sample_id,
                                            manifest.entries[survivors[i]].sample_id, "near", est});
                    break;
                }
            }
        }
    }
    for (size_t j = 0; j < survivors.size(); ++j) {
        if (!removed[j]) out.manifest.entries.push_back(manifest.entries[survivors[j]]);
    }
    return out;
}

void write_dedup_report(const std::string& path, const std::vector<DedupRemoval>& removals) {
    std::vector<json> items;
    items.reserve(removals.size());
    for (const auto& r : removals) {
        items.push_back({{"removed_id", r.removed_id},
                         {"kept_id", r.kept_id},
                         {"reason", r.reason},
                         {"estimated_jaccard", r.estimated_jaccard}});
    }
    write_jsonl(path, items);
}

}  // namespace omniforge
