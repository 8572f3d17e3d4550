#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "omniforge/corpus.hpp"
#include "omniforge/fingerprint.hpp"
#include "omniforge/hashing.hpp"
#include "omniforge/jsonl.hpp"

using namespace omniforge;
using testutil::TempDir;

namespace {

// Exact Jaccard of the two shingle sets, the quantity MinHash estimates.
double exact_jaccard(const std::string& qa1, const std::string& qa2) {
    auto sh = [](const std::string& text) {
        auto toks = canonical_tokens(canonicalize_text(text));
        auto v = shingles(toks);
        return std::set<std::string>(v.begin(), v.end());
    };
    std::set<std::string> a = sh(qa1), b = sh(qa2);
    if (a.empty() && b.empty()) return 1.0;
    size_t inter = 0;
    for (const auto& s : a) inter += b.count(s);
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

std::string random_words(std::mt19937_64& rng, int n) {
    static const char* kWords[] = {"alpha", "bravo", "charlie", "delta", "echo",  "foxtrot",
                                   "golf",  "hotel", "india",   "julia", "kilo",  "lima",
                                   "mike",  "nancy", "oscar",   "papa",  "quebec", "romeo"};
    std::string out;
    for (int i = 0; i < n; ++i) {
        if (i) out += ' ';
        out += kWords[rng() % std::size(kWords)];
    }
    return out;
}

}  // namespace

TEST_CASE("jsonl round trip skips blanks and collects bad lines") {
    TempDir tmp;
    testutil::write_file(tmp.file("a.jsonl"), "{\"x\":1}\n\n   \nnot json\n{\"y\":2}\n");
    JsonlFile f = read_jsonl(tmp.file("a.jsonl"));
    REQUIRE(f.records.size() == 2);
    CHECK(f.records[0].line_no == 1);
    CHECK(f.records[1].line_no == 5);
    REQUIRE(f.errors.size() == 1);
    CHECK(f.errors[0].line_no == 4);

    write_jsonl(tmp.file("b.jsonl"), {json{{"k", "v"}}});
    JsonlFile g = read_jsonl(tmp.file("b.jsonl"));
    REQUIRE(g.records.size() == 1);
    CHECK(g.records[0].value["k"] == "v");
    CHECK_THROWS(read_jsonl(tmp.file("missing.jsonl")));
}

TEST_CASE("hash helpers are stable and unit_double stays in [0,1)") {
    CHECK(fnv1a64("abc") == fnv1a64("abc"));
    CHECK(fnv1a64("abc") != fnv1a64("abd"));
    std::mt19937_64 rng(7);
    for (int i = 0; i < 1000; ++i) {
        double u = unit_double(splitmix64(rng()));
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("ingest accepts valid records and reports malformed ones by line") {
    TempDir tmp;
    std::string corpus =
        R"({"id":"a","question":"what color","answer":"red","source":"in_domain"})" "\n"
        R"({"id":"b","question":"how many","answer":"three","refs":[{"kind":"image","uri":"img://1","size_hint":9}]})" "\n"
        R"({"question":"no id","answer":"x"})" "\n"
        R"({"id":"c","question":"q","answer":"a","refs":[{"kind":"hologram","uri":"u"}]})" "\n"
        R"({"id":"d","question":"q","answer":"a","source":"martian"})" "\n"
        R"({"id":"e","question":"tokens here now","answer":"and two"})" "\n";
    testutil::write_file(tmp.file("c.jsonl"), corpus);
    IngestResult r = ingest(tmp.file("c.jsonl"));
    REQUIRE(r.manifest.entries.size() == 3);
    CHECK(r.manifest.entries[0].sample_id == "a");
    CHECK(r.manifest.entries[0].weight == 1.0);
    REQUIRE(r.rejections.size() == 3);
    CHECK(r.rejections[0].line_no == 3);
    CHECK(r.rejections[1].line_no == 4);
    CHECK(r.rejections[2].line_no == 5);
    CHECK(r.corpus.at("a").source == SampleSource::in_domain);
    CHECK(r.corpus.at("b").refs.size() == 1);
    CHECK(r.corpus.at("b").refs[0].kind == ModalityKind::image);
    // token estimate = whitespace tokens over question + answer
    CHECK(r.corpus.at("e").token_count == 5);
    CHECK(estimate_token_count("  a  b ", "c") == 3);
    CHECK(estimate_token_count("", "") == 0);
    CHECK(r.corpus.find("zzz") == nullptr);
    CHECK_THROWS_AS(r.corpus.at("zzz"), std::invalid_argument);
}

TEST_CASE("duplicate ids reject the whole ingest") {
    TempDir tmp;
    testutil::write_file(tmp.file("dup.jsonl"),
                         R"({"id":"a","question":"q","answer":"x"})" "\n"
                         R"({"id":"a","question":"q2","answer":"y"})" "\n");
    CHECK_THROWS_AS(ingest(tmp.file("dup.jsonl")), DuplicateIdError);
    try {
        ingest(tmp.file("dup.jsonl"));
    } catch (const DuplicateIdError& e) {
        REQUIRE(e.offenders().size() == 1);
        CHECK(e.offenders()[0] == "a");
    }
    CHECK_THROWS_AS(ingest(tmp.file("dup.jsonl"), "parquet"), std::invalid_argument);
}

TEST_CASE("manifest validation and round trip") {
    DatasetManifest m;
    m.entries = {{"a", 1.0}, {"b", 0.5}};
    CHECK_NOTHROW(m.validate());
    m.entries.push_back({"a", 1.0});
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    m.entries = {{"a", -0.25}};
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);

    TempDir tmp;
    DatasetManifest good;
    good.entries = {{"x", 1.0}, {"y", 2.5}};
    write_manifest(tmp.file("m.jsonl"), good);
    DatasetManifest back = read_manifest(tmp.file("m.jsonl"));
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[1].sample_id == "y");
    CHECK(back.entries[1].weight == doctest::Approx(2.5));
}

TEST_CASE("length filter keeps the inclusive token band") {
    std::vector<Sample> samples;
    for (uint64_t t : {2, 5, 9}) {
        Sample s;
        s.id = "s" + std::to_string(t);
        s.token_count = t;
        samples.push_back(s);
    }
    Corpus corpus(samples);
    DatasetManifest m;
    for (const auto& s : samples) m.entries.push_back({s.id, 1.0});

    auto kept = length_filter(m, corpus, 2, 5);
    REQUIRE(kept.entries.size() == 2);
    CHECK(kept.entries[0].sample_id == "s2");
    CHECK(kept.entries[1].sample_id == "s5");
    CHECK_THROWS_AS(length_filter(m, corpus, 6, 5), std::invalid_argument);
    DatasetManifest bad;
    bad.entries = {{"ghost", 1.0}};
    CHECK_THROWS_AS(length_filter(bad, corpus, 0, 10), std::invalid_argument);
}

TEST_CASE("canonicalization folds case, normalizes unicode, collapses whitespace") {
    CHECK(canonicalize_text("HeLLo WORLD") == "hello world");
    CHECK(canonicalize_text("  a\t\tb \n c  ") == "a b c");
    CHECK(canonicalize_text("") == "");
    // NFC: e + combining acute equals precomposed e-acute after normalization
    CHECK(canonicalize_text("caf\x65\xcc\x81") == canonicalize_text("caf\xc3\xa9"));
    // invalid UTF-8 is replaced, not silently dropped
    CHECK(canonicalize_text("a\xffz") != canonicalize_text("az"));
    // full-width characters fold like their case pairs
    CHECK(canonicalize_text("Stra\xc3\x9f""e") == canonicalize_text("STRASSE"));
}

TEST_CASE("shingles") {
    CHECK(shingles({}).empty());
    CHECK(shingles({"a"}) == std::vector<std::string>{"a"});
    CHECK(shingles({"a", "b"}) == std::vector<std::string>{"a\x1f" "b"});
    auto sh = shingles({"a", "b", "c", "d"});
    CHECK(sh == std::vector<std::string>{"a\x1f" "b\x1f" "c", "b\x1f" "c\x1f" "d"});
}

TEST_CASE("fingerprints: exact hash keys canonical content") {
    Sample a, b, c;
    a.id = "a"; a.question = "What IS  this"; a.answer = "A Thing";
    b.id = "b"; b.question = "what is this";  b.answer = "a thing";
    c.id = "c"; c.question = "what is this";  c.answer = "another thing";
    auto fa = fingerprint(a), fb = fingerprint(b), fc = fingerprint(c);
    CHECK(fa.exact_hash == fb.exact_hash);
    CHECK(fa.exact_hash != fc.exact_hash);
    CHECK(fa.minhash.size() == kMinhashSignatureLen);
    CHECK(fa.exact_hash_hex().size() == 64);
    CHECK(estimated_jaccard(fa, fb) == doctest::Approx(1.0));
}

TEST_CASE("minhash estimates shingle jaccard within 0.15 on structured pairs") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        std::string base = random_words(rng, 30);
        std::string other = base + " " + random_words(rng, 1 + static_cast<int>(rng() % 20));
        double est = estimated_jaccard(fingerprint_text(base, ""), fingerprint_text(other, ""));
        double exact = exact_jaccard(base + "\n", other + "\n");
        CHECK(std::abs(est - exact) <= 0.15);
    }
}

TEST_CASE("dedup removes exact duplicates first-seen wins") {
    std::vector<Sample> samples(3);
    samples[0] = {.id = "first", .question = "same question here", .answer = "same answer"};
    samples[1] = {.id = "second", .question = "Same   QUESTION here", .answer = "same ANSWER"};
    samples[2] = {.id = "third", .question = "entirely different words", .answer = "no overlap at all"};
    Corpus corpus(samples);
    DatasetManifest m;
    for (const auto& s : samples) m.entries.push_back({s.id, 1.0});

    DedupResult r = dedup(m, corpus, 2.0, 1);  // threshold > 1 disables near-dedup
    REQUIRE(r.manifest.entries.size() == 2);
    CHECK(r.manifest.entries[0].sample_id == "first");
    CHECK(r.manifest.entries[1].sample_id == "third");
    REQUIRE(r.removals.size() == 1);
    CHECK(r.removals[0].removed_id == "second");
    CHECK(r.removals[0].kept_id == "first");
    CHECK(r.removals[0].reason == "exact");
}

TEST_CASE("dedup near-duplicates respect the threshold and thread count") {
    std::mt19937_64 rng(5);
    std::string base = random_words(rng, 60);
    std::vector<Sample> samples(3);
    samples[0] = {.id = "orig", .question = base, .answer = "x"};
    samples[1] = {.id = "near", .question = base + " extra", .answer = "x"};
    samples[2] = {.id = "far", .question = random_words(rng, 60), .answer = "x"};
    Corpus corpus(samples);
    DatasetManifest m;
    for (const auto& s : samples) m.entries.push_back({s.id, 1.0});

    DedupResult strict = dedup(m, corpus, 0.8, 1);
    REQUIRE(strict.manifest.entries.size() == 2);
    CHECK(strict.removals[0].removed_id == "near");
    CHECK(strict.removals[0].reason == "near");
    CHECK(strict.removals[0].estimated_jaccard >= 0.8);

    DedupResult off = dedup(m, corpus, 1.01, 1);
    CHECK(off.manifest.entries.size() == 3);

    // thread-count invariance
    DedupResult threaded = dedup(m, corpus, 0.8, 4);
    REQUIRE(threaded.manifest.entries.size() == strict.manifest.entries.size());
    for (size_t i = 0; i < threaded.manifest.entries.size(); ++i) {
        CHECK(threaded.manifest.entries[i].sample_id == strict.manifest.entries[i].sample_id);
    }
}

TEST_CASE("dedup is idempotent on random corpora") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Sample> samples;
        int n = 5 + static_cast<int>(rng() % 20);
        for (int i = 0; i < n; ++i) {
            Sample s;
            s.id = "s" + std::to_string(i);
            s.question = random_words(rng, 2 + static_cast<int>(rng() % 8));
            s.answer = random_words(rng, 1 + static_cast<int>(rng() % 3));
            samples.push_back(s);
        }
        Corpus corpus(samples);
        DatasetManifest m;
        for (const auto& s : samples) m.entries.push_back({s.id, 1.0});

        DedupResult once = dedup(m, corpus, 0.85, 1);
        DedupResult twice = dedup(once.manifest, corpus, 0.85, 1);
        CHECK(twice.removals.empty());
        REQUIRE(twice.manifest.entries.size() == once.manifest.entries.size());
        for (size_t i = 0; i < once.manifest.entries.size(); ++i) {
            CHECK(twice.manifest.entries[i].sample_id == once.manifest.entries[i].sample_id);
        }
    }
}

TEST_CASE("dedup report file round trip") {
    TempDir tmp;
    std::vector<DedupRemoval> removals = {{"b", "a", "exact", 1.0}, {"c", "a", "near", 0.93}};
    write_dedup_report(tmp.file("d.jsonl"), removals);
    JsonlFile f = read_jsonl(tmp.file("d.jsonl"));
    REQUIRE(f.records.size() == 2);
    CHECK(f.records[0].value["removed_id"] == "b");
    CHECK(f.records[1].value["reason"] == "near");
}
