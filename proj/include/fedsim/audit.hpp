#pragma once

// Memorization measurement: log-perplexity of a continuation given a prefix,
// Random-Sampling rank against uniformly random references, and Beam-Search
// extraction from a prefix.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsim/canary.hpp"
#include "fedsim/corpus.hpp"
#include "fedsim/model.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

struct ReferenceSet {
    std::vector<std::vector<TokenId>> sequences;
    std::uint64_t seed = 0;

    std::size_t size() const { return sequences.size(); }
};

// |R| random sequences of the given length, each token uniform over the real
// vocabulary (OOV sentinel excluded).
inline ReferenceSet make_reference_set(const Vocabulary& vocab, std::size_t count,
                                       std::size_t length, std::uint64_t seed) {
    if (length < 1) throw std::invalid_argument("reference length must be >= 1");
    ReferenceSet refs;
    refs.seed = seed;
    Rng rng = make_rng(derive_seed(seed, "refs"));
    refs.sequences.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<TokenId> s(length);
        for (auto& t : s) t = static_cast<TokenId>(1 + uniform_index(rng, vocab.size() - 1));
        refs.sequences.push_back(std::move(s));
    }
    return refs;
}

// Summed negative log-probability of the continuation tokens, conditioning on
// the prefix (may be empty) and all prior continuation tokens; initial hidden
// state is zeros.
inline double log_perplexity(const ParamVector& params, const ModelConfig& cfg,
                             const std::vector<TokenId>& prefix,
                             const std::vector<TokenId>& continuation) {
    if (continuation.empty()) throw std::invalid_argument("continuation must be nonempty");
    LstmState state = LstmState::zero(cfg);
    detail::StepCache cache;
    double nll = 0.0;
    // run the prefix without scoring; the last prefix token (or, with an empty
    // prefix, the first continuation token) conditions the first scored token
    std::vector<TokenId> all;
    all.reserve(prefix.size() + continuation.size());
    all.insert(all.end(), prefix.begin(), prefix.end());
    all.insert(all.end(), continuation.begin(), continuation.end());
    const std::size_t first_scored = prefix.empty() ? 1 : prefix.size();
    for (std::size_t t = 0; t + 1 < all.size(); ++t) {
        detail::cifg_step(params, cfg, state, all[t], cache, /*want_logits=*/t + 1 >= first_scored);
        if (t + 1 >= first_scored) nll -= cache.log_probs[all[t + 1]];
        state = detail::cache_state(cache);
    }
    return nll;
}

struct RankResult {
    std::string canary_id;
    double log_perplexity = 0.0;
    std::size_t rank = 0;
    std::size_t reference_size = 0;
    bool memorized = false;  // rank == 1
};

// Scores every reference continuation once; reusable across canaries that
// share a prefix and length.
inline std::vector<double> score_references(const ParamVector& params, const ModelConfig& cfg,
                                            const std::vector<TokenId>& prefix,
                                            const ReferenceSet& refs) {
    std::vector<double> scores;
    scores.reserve(refs.size());
    for (const auto& r : refs.sequences)
        scores.push_back(log_perplexity(params, cfg, prefix, r));
    return scores;
}

// Rank over R union {canary}: 1 + |{r' : P(r'|p) <= P(canary|p)}|, so ties
// count against memorization and a strictly-best canary has rank 1.
inline RankResult rs_rank(const ParamVector& params, const ModelConfig& cfg,
                          const CanarySpec& canary, const ReferenceSet& refs,
                          std::size_t prefix_len,
                          const std::vector<double>* cached_ref_scores = nullptr) {
    if (prefix_len >= canary.token_ids.size())
        throw std::invalid_argument("prefix_len must be < canary length");
    const std::vector<TokenId> prefix(canary.token_ids.begin(),
                                      canary.token_ids.begin() + prefix_len);
    const std::vector<TokenId> continuation(canary.token_ids.begin() + prefix_len,
                                            canary.token_ids.end());
    for (const auto& r : refs.sequences)
        if (r.size() != continuation.size())
            throw std::invalid_argument("reference length does not match canary continuation");

    RankResult res;
    res.canary_id = canary.canary_id;
    res.reference_size = refs.size();
    res.log_perplexity = log_perplexity(params, cfg, prefix, continuation);

    std::vector<double> scores;
    const std::vector<double>* ref_scores = cached_ref_scores;
    if (!ref_scores) {
        scores = score_references(params, cfg, prefix, refs);
        ref_scores = &scores;
    }
    std::size_t not_worse = 0;
    for (double s : *ref_scores)
        if (s <= res.log_perplexity) ++not_worse;
    res.rank = 1 + not_worse;
    res.memorized = res.rank == 1;
    return res;
}

struct BeamResult {
    std::string canary_id;
    std::size_t prefix_len = 0;
    std::size_t width = 0;
    std::vector<TokenId> extracted;
    double score = 0.0;  // summed log-probability of the extracted continuation
    bool memorized = false;
};

// Width-limited search for the most likely continuation of the prefix.
// Ties break by token index, then by beam order, so results are
// deterministic. Returns the single best completed sequence.
inline BeamResult beam_search(const ParamVector& params, const ModelConfig& cfg,
                              const std::vector<TokenId>& prefix, std::size_t total_len,
                              std::size_t width) {
    if (width < 1) throw std::invalid_argument("beam width must be >= 1");
    if (prefix.empty() || total_len <= prefix.size())
        throw std::invalid_argument("total_len must exceed prefix length");

    struct Beam {
        std::vector<TokenId> tokens;  // continuation so far
        LstmState state;
        double score = 0.0;
    };

    // run the prefix
    LstmState state = LstmState::zero(cfg);
    detail::StepCache cache;
    for (std::size_t t = 0; t + 1 < prefix.size(); ++t) {
        detail::cifg_step(params, cfg, state, prefix[t], cache, false);
        state = detail::cache_state(cache);
    }

    std::vector<Beam> beams{{{}, std::move(state), 0.0}};
    const std::size_t steps = total_len - prefix.size();
    for (std::size_t step = 0; step < steps; ++step) {
        struct Candidate {
            std::size_t beam;
            TokenId token;
            double score;
        };
        std::vector<Candidate> candidates;
        std::vector<LstmState> next_states(beams.size());
        for (std::size_t b = 0; b < beams.size(); ++b) {
            const TokenId input = beams[b].tokens.empty()
                                      ? prefix.back()
                                      : beams[b].tokens.back();
            detail::cifg_step(params, cfg, beams[b].state, input, cache, true);
            next_states[b] = detail::cache_state(cache);
            for (std::size_t v = 0; v < cfg.vocab_size; ++v)
                candidates.push_back({b, static_cast<TokenId>(v),
                                      beams[b].score + cache.log_probs[v]});
        }
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const Candidate& a, const Candidate& b) {
                             if (a.score != b.score) return a.score > b.score;
                             if (a.token != b.token) return a.token < b.token;
                             return a.beam < b.beam;
                         });
        const std::size_t keep = std::min(width, candidates.size());
        std::vector<Beam> next;
        next.reserve(keep);
        for (std::size_t i = 0; i < keep; ++i) {
            const Candidate& c = candidates[i];
            Beam nb;
            nb.tokens = beams[c.beam].tokens;
            nb.tokens.push_back(c.token);
            nb.state = next_states[c.beam];
            nb.score = c.score;
            next.push_back(std::move(nb));
        }
        beams = std::move(next);
    }

    BeamResult res;
    res.prefix_len = prefix.size();
    res.width = width;
    res.extracted = beams.front().tokens;
    res.score = beams.front().score;
    return res;
}

struct AuditConfig {
    std::size_t reference_size = 10000;
    std::size_t prefix_len = 1;
    std::size_t beam_width = 5;
    std::uint64_t reference_seed = 0;
};

struct AuditReport {
    std::vector<RankResult> ranks;
    std::vector<BeamResult> beams;
    std::vector<CanarySpec> specs;
    std::size_t rs_memorized = 0;
    std::size_t bs_memorized = 0;
    // lowest memorized configuration by expected insertion frequency, then by
    // expected sharer count; empty when nothing is memorized
    bool has_rs_lowest = false, has_bs_lowest = false;
    double rs_lowest_p_u = 0.0, rs_lowest_p_e = 0.0;
    double bs_lowest_p_u = 0.0, bs_lowest_p_e = 0.0;
    UtilityMetrics utility;
    bool has_utility = false;
};

// Audits every canary with both methods against one checkpoint. Reference
// scores are cached per (prefix, continuation-length) across canaries.
inline AuditReport audit_checkpoint(const ParamVector& params, const ModelConfig& cfg,
                                    const CanaryLedger& ledger,
                                    const std::vector<CanarySpec>& specs,
                                    const AuditConfig& audit_cfg,
                                    const FederatedCorpus* eval_corpus = nullptr) {
    if (specs.empty()) throw std::invalid_argument("audit_checkpoint: no canaries");
    AuditReport report;
    report.specs = specs;

    struct CacheEntry {
        std::vector<TokenId> prefix;
        std::size_t cont_len;
        ReferenceSet refs;
        std::vector<double> scores;
    };
    std::vector<CacheEntry> cache;

    auto expected_freq = [&](const CanarySpec& s) {
        return ledger.record(s.canary_id).expected_insertions;
    };
    auto expected_sharers = [&](const CanarySpec& s) {
        return ledger.record(s.canary_id).expected_sharers;
    };

    for (const auto& spec : specs) {
        const std::vector<TokenId> prefix(spec.token_ids.begin(),
                                          spec.token_ids.begin() + audit_cfg.prefix_len);
        const std::size_t cont_len = spec.token_ids.size() - audit_cfg.prefix_len;

        CacheEntry* entry = nullptr;
        for (auto& e : cache)
            if (e.prefix == prefix && e.cont_len == cont_len) entry = &e;
        if (!entry) {
            CacheEntry e;
            e.prefix = prefix;
            e.cont_len = cont_len;
            e.refs = make_reference_set(Vocabulary{std::vector<std::string>(cfg.vocab_size)},
                                        audit_cfg.reference_size, cont_len,
                                        audit_cfg.reference_seed);
            e.scores = score_references(params, cfg, prefix, e.refs);
            cache.push_back(std::move(e));
            entry = &cache.back();
        }

        RankResult rank = rs_rank(params, cfg, spec, entry->refs, audit_cfg.prefix_len,
                                  &entry->scores);
        BeamResult beam = beam_search(params, cfg, prefix, spec.token_ids.size(),
                                      audit_cfg.beam_width);
        beam.canary_id = spec.canary_id;
        beam.memorized = std::equal(beam.extracted.begin(), beam.extracted.end(),
                                    spec.token_ids.begin() + audit_cfg.prefix_len,
                                    spec.token_ids.end());

        if (rank.memorized) ++report.rs_memorized;
        if (beam.memorized) ++report.bs_memorized;
        report.ranks.push_back(std::move(rank));
        report.beams.push_back(std::move(beam));
    }

    // lowest memorized configuration per method
    auto find_lowest = [&](auto memorized_at) -> std::pair<bool, std::pair<double, double>> {
        bool found = false;
        std::pair<double, double> best{0, 0};
        double best_freq = 0, best_sharers = 0;
        for (std::size_t i = 0; i < specs.size(); ++i) {
            if (!memorized_at(i)) continue;
            const double f = expected_freq(specs[i]);
            const double s = expected_sharers(specs[i]);
            if (!found || f < best_freq || (f == best_freq && s < best_sharers)) {
                found = true;
                best_freq = f;
                best_sharers = s;
                best = {specs[i].p_u, specs[i].p_e};
            }
        }
        return {found, best};
    };
    auto [rs_found, rs_cfg] = find_lowest([&](std::size_t i) { return report.ranks[i].memorized; });
    report.has_rs_lowest = rs_found;
    report.rs_lowest_p_u = rs_cfg.first;
    report.rs_lowest_p_e = rs_cfg.second;
    auto [bs_found, bs_cfg] = find_lowest([&](std::size_t i) { return report.beams[i].memorized; });
    report.has_bs_lowest = bs_found;
    report.bs_lowest_p_u = bs_cfg.first;
    report.bs_lowest_p_e = bs_cfg.second;

    if (eval_corpus) {
        report.utility = evaluate_utility(params, cfg, *eval_corpus);
        report.has_utility = true;
    }
    return report;
}

// AuditReport CSV: one row per canary plus a trailing summary block.
inline void save_audit_csv(const AuditReport& report, const CanaryLedger& ledger,
                           std::ostream& os) {
    os << "canary_id,p_u,p_e,expected_freq,realized_insertions,rank,reference_size,"
          "rs_memorized,bs_extracted,bs_memorized\n";
    for (std::size_t i = 0; i < report.specs.size(); ++i) {
        const auto& spec = report.specs[i];
        const auto& rec = ledger.record(spec.canary_id);
        os << spec.canary_id << ',' << spec.p_u << ',' << spec.p_e << ','
           << rec.expected_insertions << ',' << rec.n_insertions() << ','
           << report.ranks[i].rank << ',' << report.ranks[i].reference_size << ','
           << (report.ranks[i].memorized ? 1 : 0) << ',';
        for (std::size_t t = 0; t < report.beams[i].extracted.size(); ++t)
            os << (t ? " " : "") << report.beams[i].extracted[t];
        os << ',' << (report.beams[i].memorized ? 1 : 0) << '\n';
    }
    os << "summary,rs_memorized," << report.rs_memorized << ",bs_memorized,"
       << report.bs_memorized << ",,,,,\n";
}

}  // namespace fedsim
