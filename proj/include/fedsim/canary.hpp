#pragma once

// Canary sampling and insertion. A canary is a random out-of-distribution
// phrase parameterized by a user-selection probability p_u and an
// example-replacement probability p_e. Insertion replaces whole examples in
// Poisson-sampled secret-sharer users and records every replacement in a
// ledger.

#include <cstdint>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsim/corpus.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

struct CanarySpec {
    std::string canary_id;
    std::vector<TokenId> token_ids;
    double p_u = 0.0;
    double p_e = 0.0;

    void validate() const {
        if (token_ids.size() < 2)
            throw std::invalid_argument("canary needs length >= 2 (prefix + continuation)");
        if (p_u < 0.0 || p_u > 1.0 || p_e < 0.0 || p_e > 1.0)
            throw std::invalid_argument("p_u and p_e must be in [0,1]");
    }
};

struct CanaryInsertion {
    std::string user_id;
    std::size_t example_index;
};

struct CanaryRecord {
    CanarySpec spec;
    std::vector<std::string> secret_sharers;
    std::vector<CanaryInsertion> insertions;
    double expected_insertions = 0.0;  // N * p_u * examples_per_user * p_e
    double expected_sharers = 0.0;     // N * p_u
    std::size_t resample_attempts = 0;

    std::size_t n_secret_sharers() const { return secret_sharers.size(); }
    std::size_t n_insertions() const { return insertions.size(); }
};

struct CanaryLedger {
    std::vector<CanaryRecord> records;

    std::size_t n_insertions() const {
        std::size_t n = 0;
        for (const auto& r : records) n += r.insertions.size();
        return n;
    }

    const CanaryRecord& record(const std::string& canary_id) const {
        for (const auto& r : records)
            if (r.spec.canary_id == canary_id) return r;
        throw std::out_of_range("unknown canary_id: " + canary_id);
    }
};

// Each token uniform over the real vocabulary (the OOV sentinel at index 0 is
// excluded). p_u/p_e are left at zero for the caller to fill in.
inline CanarySpec sample_canary(const Vocabulary& vocab, std::size_t length,
                                std::uint64_t seed) {
    if (length < 2) throw std::invalid_argument("canary length must be >= 2");
    if (vocab.size() < 2) throw std::invalid_argument("vocabulary too small");
    Rng rng = make_rng(derive_seed(seed, "canary/sample"));
    CanarySpec spec;
    spec.token_ids.reserve(length);
    for (std::size_t i = 0; i < length; ++i)
        spec.token_ids.push_back(
            static_cast<TokenId>(1 + uniform_index(rng, vocab.size() - 1)));
    return spec;
}

// Cross-product canary grid: |p_u_set| * |p_e_set| * per_config specs,
// each with a fresh random phrase. Defaults reproduce the 90-canary grid
// (p_u in {1/5K, 3/50K, 1/50K}, p_e in {1%, 10%, 100%}, 10 per config).
inline std::vector<CanarySpec> canary_grid(const Vocabulary& vocab,
                                           const std::vector<double>& p_u_set,
                                           const std::vector<double>& p_e_set,
                                           std::size_t per_config,
                                           std::uint64_t seed,
                                           std::size_t length = 5) {
    if (p_u_set.empty() || p_e_set.empty())
        throw std::invalid_argument("canary_grid: probability sets must be nonempty");
    std::vector<CanarySpec> specs;
    std::size_t serial = 0;
    for (double pu : p_u_set)
        for (double pe : p_e_set)
            for (std::size_t k = 0; k < per_config; ++k) {
                CanarySpec s = sample_canary(vocab, length, derive_seed(seed, "grid", serial));
                s.canary_id = "c" + std::to_string(serial++);
                s.p_u = pu;
                s.p_e = pe;
                s.validate();
                specs.push_back(std::move(s));
            }
    return specs;
}

inline std::vector<double> default_p_u_set() { return {1.0 / 5000, 3.0 / 50000, 1.0 / 50000}; }
inline std::vector<double> default_p_e_set() { return {0.01, 0.10, 1.00}; }

struct InsertionResult {
    FederatedCorpus corpus;
    CanaryLedger ledger;
};

// Poisson sampling for both user selection and example replacement. Specs are
// processed in declaration order; an example already replaced by an earlier
// canary is ineligible for later ones. The input corpus is left untouched.
// With resample_if_empty, a spec with p_u > 0 that realizes zero secret
// sharers is redrawn from a fresh stream (bounded attempts, count recorded).
inline InsertionResult insert_canaries(const FederatedCorpus& corpus,
                                       const std::vector<CanarySpec>& specs,
                                       std::uint64_t seed,
                                       bool resample_if_empty = true) {
    InsertionResult result;
    result.corpus = corpus;
    const std::size_t N = corpus.users.size();

    double mean_examples = 0.0;
    if (N > 0) mean_examples = static_cast<double>(corpus.example_count()) / static_cast<double>(N);

    std::vector<std::vector<bool>> taken(N);
    for (std::size_t u = 0; u < N; ++u) taken[u].assign(corpus.users[u].examples.size(), false);

    for (std::size_t s = 0; s < specs.size(); ++s) {
        const CanarySpec& spec = specs[s];
        spec.validate();
        for (TokenId t : spec.token_ids)
            if (t >= corpus.vocabulary.size())
                throw std::invalid_argument("canary token exceeds vocabulary: " + spec.canary_id);

        CanaryRecord rec;
        rec.spec = spec;
        rec.expected_sharers = static_cast<double>(N) * spec.p_u;
        rec.expected_insertions = rec.expected_sharers * mean_examples * spec.p_e;

        constexpr std::size_t kMaxResamples = 1000;
        for (std::size_t attempt = 0;; ++attempt) {
            Rng rng = make_rng(derive_seed(seed, "canary/insert", s * kMaxResamples + attempt));
            std::vector<std::size_t> sharers;
            for (std::size_t u = 0; u < N; ++u)
                if (uniform_real(rng) < spec.p_u) sharers.push_back(u);
            if (sharers.empty() && resample_if_empty && spec.p_u > 0.0 && N > 0 &&
                attempt + 1 < kMaxResamples) {
                ++rec.resample_attempts;
                continue;
            }
            for (std::size_t u : sharers) {
                rec.secret_sharers.push_back(corpus.users[u].user_id);
                auto& user = result.corpus.users[u];
                for (std::size_t e = 0; e < user.examples.size(); ++e) {
                    const bool replace = uniform_real(rng) < spec.p_e;
                    if (!replace || taken[u][e]) continue;
                    taken[u][e] = true;
                    user.examples[e].token_ids = spec.token_ids;
                    rec.insertions.push_back({user.user_id, e});
                }
            }
            break;
        }
        result.ledger.records.push_back(std::move(rec));
    }
    return result;
}

// CSV: one row per replacement plus a summary row per canary.
inline void save_ledger_csv(const CanaryLedger& ledger, std::ostream& os) {
    os << "canary_id,p_u,p_e,user_id,example_index,n_sharers,n_insertions,"
          "expected_sharers,expected_insertions\n";
    for (const auto& r : ledger.records) {
        for (const auto& ins : r.insertions)
            os << r.spec.canary_id << ',' << r.spec.p_u << ',' << r.spec.p_e << ','
               << ins.user_id << ',' << ins.example_index << ",,,,\n";
        os << r.spec.canary_id << ',' << r.spec.p_u << ',' << r.spec.p_e << ",summary,,"
           << r.n_secret_sharers() << ',' << r.n_insertions() << ','
           << r.expected_sharers << ',' << r.expected_insertions << '\n';
    }
}

}  // namespace fedsim
