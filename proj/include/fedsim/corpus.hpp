#pragma once

// User-partitioned token corpora: vocabulary, balancing, IID reshuffling,
// a synthetic corpus generator, and the on-disk text format.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsim/rng.hpp"

namespace fedsim {

using TokenId = std::uint32_t;

// Index 0 is the out-of-vocabulary sentinel.
struct Vocabulary {
    std::vector<std::string> tokens;

    static constexpr TokenId kOov = 0;

    std::size_t size() const { return tokens.size(); }

    const std::string& word(TokenId id) const { return tokens.at(id); }

    TokenId id_of(const std::string& w) const {
        for (std::size_t i = 0; i < tokens.size(); ++i)
            if (tokens[i] == w) return static_cast<TokenId>(i);
        return kOov;
    }

    // Builds a vocabulary from word frequencies: OOV sentinel at 0, then the
    // max_size-1 most frequent words (ties broken lexicographically).
    static Vocabulary from_counts(const std::map<std::string, std::size_t>& counts,
                                  std::size_t max_size) {
        if (max_size < 2) throw std::invalid_argument("vocabulary size must be >= 2");
        std::vector<std::pair<std::string, std::size_t>> by_freq(counts.begin(), counts.end());
        std::stable_sort(by_freq.begin(), by_freq.end(),
                         [](const auto& a, const auto& b) {
                             if (a.second != b.second) return a.second > b.second;
                             return a.first < b.first;
                         });
        Vocabulary v;
        v.tokens.push_back("<oov>");
        for (const auto& [w, c] : by_freq) {
            if (v.tokens.size() >= max_size) break;
            v.tokens.push_back(w);
        }
        return v;
    }

    // A synthetic vocabulary "w001".."wNNN" plus the sentinel.
    static Vocabulary synthetic(std::size_t n_real_tokens) {
        Vocabulary v;
        v.tokens.push_back("<oov>");
        for (std::size_t i = 1; i <= n_real_tokens; ++i)
            v.tokens.push_back("w" + std::to_string(i));
        return v;
    }
};

struct Example {
    std::vector<TokenId> token_ids;

    std::size_t word_count() const { return token_ids.size(); }
    bool operator==(const Example&) const = default;
};

struct UserDataset {
    std::string user_id;
    std::vector<Example> examples;

    std::size_t word_count() const {
        std::size_t n = 0;
        for (const auto& e : examples) n += e.word_count();
        return n;
    }
    std::size_t example_count() const { return examples.size(); }
};

struct FederatedCorpus {
    std::vector<UserDataset> users;
    Vocabulary vocabulary;
    bool is_iid = false;

    std::size_t user_count() const { return users.size(); }

    std::size_t example_count() const {
        std::size_t n = 0;
        for (const auto& u : users) n += u.examples.size();
        return n;
    }

    std::size_t word_count() const {
        std::size_t n = 0;
        for (const auto& u : users) n += u.word_count();
        return n;
    }

    void validate() const {
        for (const auto& u : users)
            for (const auto& e : u.examples) {
                if (e.token_ids.empty()) throw std::runtime_error("empty example");
                for (TokenId t : e.token_ids)
                    if (t >= vocabulary.size())
                        throw std::runtime_error("token id out of vocabulary range");
            }
    }
};

// Splits every raw user into balanced users carrying exactly words_per_user
// words. A balanced user closes at the first example whose inclusion makes the
// cumulative count reach words_per_user; that example's trailing tokens are
// trimmed so the count is exact. Raw users with fewer than words_per_user
// words are discarded, as is each user's remainder.
inline FederatedCorpus build_balanced_users(const FederatedCorpus& raw,
                                            std::size_t words_per_user) {
    if (words_per_user < 1) throw std::invalid_argument("words_per_user must be >= 1");
    FederatedCorpus out;
    out.vocabulary = raw.vocabulary;
    out.is_iid = raw.is_iid;
    std::size_t serial = 0;
    for (const auto& user : raw.users) {
        UserDataset current;
        std::size_t words = 0;
        for (const auto& ex : user.examples) {
            Example e = ex;
            if (words + e.word_count() >= words_per_user) {
                e.token_ids.resize(words_per_user - words);
                if (!e.token_ids.empty()) current.examples.push_back(std::move(e));
                current.user_id = user.user_id + "/b" + std::to_string(serial++);
                out.users.push_back(std::move(current));
                current = UserDataset{};
                words = 0;
            } else {
                words += e.word_count();
                current.examples.push_back(std::move(e));
            }
        }
        // remainder (words < words_per_user) is discarded
    }
    return out;
}

// Pools all examples, shuffles them, and assigns them sequentially into
// synthetic users holding >= words_per_user words each. The trailing partial
// user is discarded.
inline FederatedCorpus make_iid(const FederatedCorpus& corpus,
                                std::size_t words_per_user,
                                std::uint64_t seed) {
    if (corpus.users.empty()) throw std::invalid_argument("make_iid: empty corpus");
    std::vector<Example> pool;
    for (const auto& u : corpus.users)
        for (const auto& e : u.examples) pool.push_back(e);
    Rng rng = make_rng(derive_seed(seed, "make_iid"));
    shuffle(rng, pool);

    FederatedCorpus out;
    out.vocabulary = corpus.vocabulary;
    out.is_iid = true;
    UserDataset current;
    std::size_t words = 0;
    std::size_t serial = 0;
    for (auto& e : pool) {
        words += e.word_count();
        current.examples.push_back(std::move(e));
        if (words >= words_per_user) {
            current.user_id = "iid/" + std::to_string(serial++);
            out.users.push_back(std::move(current));
            current = UserDataset{};
            words = 0;
        }
    }
    return out;
}

// Desk-scale synthetic corpus. Each user samples tokens from a user-specific
// unigram distribution: a shared base distribution blended with a per-user
// slice of the vocabulary. heterogeneity=0 gives every user the shared
// distribution; heterogeneity=1 restricts each user to its own slice, so
// distinct users have disjoint supports when the vocabulary is large enough.
inline FederatedCorpus generate_synthetic_corpus(std::size_t vocab_size,
                                                 std::size_t n_users,
                                                 std::size_t examples_per_user,
                                                 std::size_t example_len,
                                                 std::uint64_t seed,
                                                 double heterogeneity = 0.0) {
    if (vocab_size < 1 || n_users < 1 || examples_per_user < 1 || example_len < 1)
        throw std::invalid_argument("generate_synthetic_corpus: all counts must be >= 1");
    if (heterogeneity < 0.0 || heterogeneity > 1.0)
        throw std::invalid_argument("heterogeneity must be in [0,1]");

    FederatedCorpus corpus;
    corpus.vocabulary = Vocabulary::synthetic(vocab_size);
    corpus.is_iid = false;

    // Shared base: Zipf-ish weights over the real tokens (ids 1..vocab_size).
    std::vector<double> base(vocab_size);
    for (std::size_t i = 0; i < vocab_size; ++i) base[i] = 1.0 / static_cast<double>(i + 1);

    for (std::size_t u = 0; u < n_users; ++u) {
        Rng rng = make_rng(derive_seed(seed, "synthetic/user", u));
        // User slice: a contiguous block of the vocabulary.
        const std::size_t slice = std::max<std::size_t>(1, vocab_size / n_users);
        const std::size_t lo = (u * slice) % vocab_size;
        std::vector<double> weights(vocab_size);
        double total = 0.0;
        for (std::size_t i = 0; i < vocab_size; ++i) {
            const bool in_slice = i >= lo && i < std::min(lo + slice, vocab_size);
            const double own = in_slice ? 1.0 : 0.0;
            weights[i] = (1.0 - heterogeneity) * base[i] + heterogeneity * own;
            total += weights[i];
        }
        // Cumulative table for inverse-CDF sampling.
        std::vector<double> cdf(vocab_size);
        double acc = 0.0;
        for (std::size_t i = 0; i < vocab_size; ++i) {
            acc += weights[i] / total;
            cdf[i] = acc;
        }
        cdf.back() = 1.0;

        UserDataset user;
        user.user_id = "u" + std::to_string(u);
        for (std::size_t e = 0; e < examples_per_user; ++e) {
            Example ex;
            ex.token_ids.reserve(example_len);
            for (std::size_t t = 0; t < example_len; ++t) {
                const double r = uniform_real(rng);
                const auto it = std::lower_bound(cdf.begin(), cdf.end(), r);
                const std::size_t idx = static_cast<std::size_t>(it - cdf.begin());
                ex.token_ids.push_back(static_cast<TokenId>(idx + 1));  // skip OOV
            }
            user.examples.push_back(std::move(ex));
        }
        corpus.users.push_back(std::move(user));
    }
    return corpus;
}

// Text format: one example per line (space-separated words), a blank line
// closes a user. save/load are inverse functions on the partition structure.
inline void save_corpus_text(const FederatedCorpus& corpus, std::ostream& os) {
    for (std::size_t u = 0; u < corpus.users.size(); ++u) {
        for (const auto& e : corpus.users[u].examples) {
            for (std::size_t i = 0; i < e.token_ids.size(); ++i) {
                if (i) os << ' ';
                os << corpus.vocabulary.word(e.token_ids[i]);
            }
            os << '\n';
        }
        os << '\n';
    }
}

inline void save_corpus_text(const FederatedCorpus& corpus, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    save_corpus_text(corpus, os);
}

// Loads a corpus, building the vocabulary from corpus frequency (capped at
// max_vocab, OOV sentinel at index 0).
inline FederatedCorpus load_corpus_text(std::istream& is, std::size_t max_vocab = 10000) {
    std::vector<std::vector<std::vector<std::string>>> users;
    std::vector<std::vector<std::string>> current;
    std::map<std::string, std::size_t> counts;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) {
            if (!current.empty()) users.push_back(std::move(current));
            current.clear();
            continue;
        }
        std::istringstream ls(line);
        std::vector<std::string> words;
        std::string w;
        while (ls >> w) {
            ++counts[w];
            words.push_back(std::move(w));
        }
        if (!words.empty()) current.push_back(std::move(words));
    }
    if (!current.empty()) users.push_back(std::move(current));

    FederatedCorpus corpus;
    corpus.vocabulary = Vocabulary::from_counts(counts, max_vocab);
    std::map<std::string, TokenId> index;
    for (std::size_t i = 0; i < corpus.vocabulary.tokens.size(); ++i)
        index[corpus.vocabulary.tokens[i]] = static_cast<TokenId>(i);

    std::size_t serial = 0;
    for (auto& u : users) {
        UserDataset user;
        user.user_id = "u" + std::to_string(serial++);
        for (auto& words : u) {
            Example e;
            for (auto& w : words) {
                auto it = index.find(w);
                e.token_ids.push_back(it == index.end() ? Vocabulary::kOov : it->second);
            }
            user.examples.push_back(std::move(e));
        }
        corpus.users.push_back(std::move(user));
    }
    return corpus;
}

inline FederatedCorpus load_corpus_text(const std::string& path, std::size_t max_vocab = 10000) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + path);
    return load_corpus_text(is, max_vocab);
}

}  // namespace fedsim
