#include "omniforge/curation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace omniforge {

namespace {

// n rollouts of `question` with per-rollout seeds; correctness via the
// client's verifiable judge against `gold`. Throws ClientError on any
// generation or judge failure so callers can quarantine.
PassRate rollout_pass_rate(ModelClient& client, const std::string& question, const std::string& gold,
                           int n) {
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        GenerationRequest req;
        req.segments.push_back({ModalityKind::text, question});
        req.seed = i;
        GenerationResult res = client.generate(req);
        JudgeRequest jreq;
        jreq.question = question;
        jreq.candidate = res.text;
        jreq.reference = gold;
        jreq.rubric_id = "verifiable";
        auto score = client.judge(jreq);
        if (!score) throw ClientError("verifier unavailable", /*retryable=*/true);
        if (*score >= 0.5) ++correct;
    }
    return PassRate::of(correct, n);
}

}  // namespace

double perplexity(const TokenLogprobs& logprobs) {
    if (logprobs.values.empty()) throw std::invalid_argument("perplexity: empty logprobs");
    double sum = 0.0;
    for (double v : logprobs.values) sum += v;
    return std::exp(-sum / static_cast<double>(logprobs.values.size()));
}

IFDScore ifd(const TokenLogprobs& cond, const TokenLogprobs& uncond) {
    if (cond.values.empty() || uncond.values.empty()) throw std::invalid_argument("ifd: empty logprobs");
    if (cond.values.size() != uncond.values.size()) {
        throw std::invalid_argument("ifd: conditional and unconditional token counts differ");
    }
    IFDScore s;
    s.cond_ppl = perplexity(cond);
    s.uncond_ppl = perplexity(uncond);
    s.value = s.cond_ppl / s.uncond_ppl;
    return s;
}

PassRate PassRate::of(int n_correct, int n_rollouts) {
    if (n_rollouts < 1) throw std::invalid_argument("PassRate: n_rollouts must be positive");
    if (n_correct < 0 || n_correct > n_rollouts) throw std::invalid_argument("PassRate: bad n_correct");
    return PassRate{n_rollouts, n_correct,
                    static_cast<double>(n_correct) / static_cast<double>(n_rollouts)};
}

json IFDRecord::to_json() const {
    return json{{"sample_id", sample_id}, {"ifd", ifd_value}, {"cond_ppl", cond_ppl},
                {"uncond_ppl", uncond_ppl}};
}

json PassRateRecord::to_json() const {
    return json{{"question_id", question_id}, {"n", n}, {"correct", correct}, {"accuracy", accuracy}};
}

IFDFilterResult ifd_filter(const DatasetManifest& manifest, const Corpus& corpus,
                           ModelClient& scorer, double threshold) {
    if (threshold < 0.0) throw std::invalid_argument("ifd_filter: threshold must be positive");

    IFDFilterResult result;
    result.manifest.stage_target = manifest.stage_target;
    for (const auto& entry : manifest.entries) {
        const Sample& sample = corpus.at(entry.sample_id);
        IFDScore score;
        try {
            TokenLogprobs cond = scorer.score(sample.question, sample.answer);
            TokenLogprobs uncond = scorer.score("", sample.answer);
            score = ifd(cond, uncond);
        } catch (const ClientError&) {
            result.rescore.push_back(entry.sample_id);
            continue;
        } catch (const std::invalid_argument&) {
            result.rescore.push_back(entry.sample_id);  // unscoreable answer
            continue;
        }
        result.report.push_back({entry.sample_id, score.value, score.cond_ppl, score.uncond_ppl});
        if (score.value >= threshold) {
            result.manifest.entries.push_back(entry);
        } else {
            result.removed.push_back(entry.sample_id);
        }
    }
    return result;
}

CrossModelResult cross_model_pass_rate(const std::string& question, const std::string& gold,
                                       const std::vector<std::shared_ptr<ModelClient>>& clients,
                                       int n_per_client, const Verifier& verifier) {
    if (clients.size() < 2) throw std::invalid_argument("cross_model_pass_rate: need >= 2 clients");
    if (n_per_client < 1) throw std::invalid_argument("cross_model_pass_rate: n_per_client must be positive");
    if (!verifier) throw std::invalid_argument("cross_model_pass_rate: verifier required");
    std::set<std::string> names;
    for (const auto& c : clients) {
        if (!c) throw std::invalid_argument("cross_model_pass_rate: null client");
        if (!names.insert(c->name()).second) {
            throw std::invalid_argument("cross_model_pass_rate: clients must be distinct");
        }
    }

    CrossModelResult result;
    int completed = 0, correct = 0;
    for (const auto& client : clients) {
        try {
            for (int i = 0; i < n_per_client; ++i) {
                GenerationRequest req;
                req.segments.push_back({ModalityKind::text, question});
                req.seed = i;
                GenerationResult res = client->generate(req);
                ++completed;
                if (verifier(question, gold, res.text)) ++correct;
            }
        } catch (const ClientError&) {
            result.partial = true;
            result.failed_clients.push_back(client->name());
        }
    }
    if (completed == 0) throw ClientError("cross_model_pass_rate: no rollout completed", true);
    result.rate = PassRate::of(correct, completed);
    return result;
}

std::vector<std::string> zpd_filter(const std::map<std::string, PassRate>& rates, double low,
                                    double high) {
    if (low > high || low < 0.0 || high > 1.0) {
        throw std::invalid_argument("zpd_filter: need 0 <= low <= high <= 1");
    }
    std::vector<std::string> retained;
    for (const auto& [id, rate] : rates) {
        if (rate.accuracy >= low && rate.accuracy <= high) retained.push_back(id);
    }
    return retained;
}

RolloutFilterResult rejection_sample_s3(const DatasetManifest& manifest, const Corpus& corpus,
                                        ModelClient& client, int n, std::optional<double> low_keep,
                                        std::optional<double> high_keep) {
    if (n < 2) throw std::invalid_argument("rejection_sample_s3: n must be >= 2");
    double low = low_keep.value_or(1.0 / n);
    double high = high_keep.value_or(1.0 - 1.0 / n);
    if (low > high) throw std::invalid_argument("rejection_sample_s3: low_keep > high_keep");

    RolloutFilterResult result;
    result.manifest.stage_target = manifest.stage_target;
    for (const auto& entry : manifest.entries) {
        const Sample& sample = corpus.at(entry.sample_id);
        PassRate rate;
        try {
            rate = rollout_pass_rate(client, sample.question, sample.answer, n);
        } catch (const ClientError&) {
            result.quarantined.push_back(entry.sample_id);
            continue;
        }
        result.report.push_back({entry.sample_id, rate.n_rollouts, rate.n_correct, rate.accuracy});
        if (rate.accuracy >= low && rate.accuracy <= high) {
            result.manifest.entries.push_back(entry);
        } else {
            result.removed.push_back(entry.sample_id);
        }
    }
    return result;
}

ColdstartResult coldstart_select(const std::vector<Sample>& qa_pairs, ModelClient& client, int n,
                                 double max_pass_rate) {
    if (n < 1) throw std::invalid_argument("coldstart_select: n must be >= 1");

    ColdstartResult result;
    for (const Sample& pair : qa_pairs) {
        PassRate rate;
        try {
            rate = rollout_pass_rate(client, pair.question, pair.answer, n);
        } catch (const ClientError&) {
            result.quarantined.push_back(pair.id);
            continue;
        }
        result.report.push_back({pair.id, rate.n_rollouts, rate.n_correct, rate.accuracy});
        if (rate.accuracy < max_pass_rate) {
            result.selected.push_back(pair);
        } else {
            result.removed.push_back(pair.id);
        }
    }
    return result;
}

LengthBands LengthBands::defaults() {
    LengthBands b;
    b.bands[EffortLevel::non_thinking] = {0, 0};
    b.bands[EffortLevel::medium] = {64, 512};
    b.bands[EffortLevel::high] = {512, 4096};
    return b;
}

bool progressive_length_check(const CoTTriple& triple, const LengthBands& bands) {
    for (EffortLevel level : {EffortLevel::non_thinking, EffortLevel::medium, EffortLevel::high}) {
        if (!triple.count(level)) {
            throw std::invalid_argument(std::string("progressive_length_check: missing level ") +
                                        to_string(level));
        }
    }
    size_t nt = triple.at(EffortLevel::non_thinking).reasoning_token_count;
    size_t md = triple.at(EffortLevel::medium).reasoning_token_count;
    size_t hi = triple.at(EffortLevel::high).reasoning_token_count;
    if (!(nt < md && md < hi)) return false;
    for (EffortLevel level : {EffortLevel::non_thinking, EffortLevel::medium, EffortLevel::high}) {
        auto it = bands.bands.find(level);
        if (it == bands.bands.end()) throw std::invalid_argument("progressive_length_check: missing band");
        size_t count = triple.at(level).reasoning_token_count;
        if (count < it->second.first || count > it->second.second) return false;
    }
    return true;
}

void write_ifd_report(const std::string& path, const std::vector<IFDRecord>& records) {
    std::vector<json> lines;
    lines.reserve(records.size());
    for (const auto& r : records) lines.push_back(r.to_json());
    write_jsonl(path, lines);
}

void write_pass_rate_report(const std::string& path, const std::vector<PassRateRecord>& records) {
    std::vector<json> lines;
    lines.reserve(records.size());
    for (const auto& r : records) lines.push_back(r.to_json());
    write_jsonl(path, lines);
}

}  // namespace omniforge
