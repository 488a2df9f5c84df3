#pragma once

// Federated Averaging with fixed-size rounds, per-user update clipping,
// Gaussian noising of the aggregate, and an optional server-side Adam step
// driven by the noised aggregate as a pseudo-gradient.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsim/corpus.hpp"
#include "fedsim/model.hpp"
#include "fedsim/optim.hpp"
#include "fedsim/privacy.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class ServerOptimizer { kAverage, kAdam };
enum class ClientSampling { kWithoutReplacement, kWithReplacement };

struct FedTrainConfig {
    std::size_t users_per_round = 0;  // b_u
    std::size_t local_epochs = 1;     // E
    std::size_t local_batch = 0;      // B; 0 means full user data per batch
    double local_lr = 0.1;            // eta
    double clip_norm = std::numeric_limits<double>::infinity();  // S
    double noise_multiplier = 0.0;    // z
    ServerOptimizer server_optimizer = ServerOptimizer::kAverage;
    double server_adam_lr = 1e-3;
    std::size_t rounds = 0;           // T
    ClientSampling sampling = ClientSampling::kWithoutReplacement;
    std::uint64_t seed = 0;

    void validate(std::size_t population) const {
        if (users_per_round < 1) throw std::invalid_argument("users_per_round must be >= 1");
        if (sampling == ClientSampling::kWithoutReplacement && users_per_round > population)
            throw std::invalid_argument(
                "users_per_round exceeds population under sampling without replacement");
        if (local_lr <= 0.0) throw std::invalid_argument("local_lr must be positive");
        if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
        if (noise_multiplier < 0.0) throw std::invalid_argument("noise_multiplier must be >= 0");
        if (noise_multiplier > 0.0 && !std::isfinite(clip_norm))
            throw std::invalid_argument("noise requires a finite clip norm");
    }

    double participation_fraction(std::size_t population) const {
        return static_cast<double>(users_per_round) / static_cast<double>(population);
    }

    // sigma = z S / (q N) = z S / b_u, with unit per-user weights.
    double noise_stddev(std::size_t population) const {
        if (noise_multiplier == 0.0) return 0.0;
        return noise_multiplier * clip_norm /
               (participation_fraction(population) * static_cast<double>(population));
    }
};

inline double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Local training pass: E epochs of minibatch SGD from theta0, then the delta
// clipped to L2 norm S. Batches walk the user's examples in order; the last
// batch may be short.
inline std::vector<double> user_update(const ParamVector& theta0, const ModelConfig& model_cfg,
                                       const UserDataset& user, std::size_t local_epochs,
                                       std::size_t local_batch, double local_lr,
                                       double clip_norm, double* pre_clip_norm = nullptr) {
    std::vector<const Example*> data;
    for (const auto& e : user.examples)
        if (e.token_ids.size() >= 2) data.push_back(&e);
    if (data.empty())
        throw std::invalid_argument("user_update: no trainable examples for " + user.user_id);
    const std::size_t batch = local_batch == 0 ? data.size() : local_batch;

    ParamVector theta = theta0;
    ParamVector grad(theta.size());
    for (std::size_t epoch = 0; epoch < local_epochs; ++epoch) {
        for (std::size_t start = 0; start < data.size(); start += batch) {
            const std::size_t end = std::min(start + batch, data.size());
            std::fill(grad.begin(), grad.end(), 0.0);
            const double w = 1.0 / static_cast<double>(end - start);
            double loss = 0.0;
            for (std::size_t i = start; i < end; ++i)
                loss += w * accumulate_sequence_grad(theta, model_cfg, *data[i], grad, w);
            if (!std::isfinite(loss))
                throw std::runtime_error("user_update: non-finite loss for " + user.user_id);
            for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= local_lr * grad[i];
        }
    }

    std::vector<double> delta(theta.size());
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = theta[i] - theta0[i];
    const double norm = l2_norm(delta);
    if (pre_clip_norm) *pre_clip_norm = norm;
    if (std::isfinite(clip_norm) && norm > clip_norm) {
        const double scale = clip_norm / norm;
        for (double& d : delta) d *= scale;
    }
    return delta;
}

struct RoundStats {
    std::size_t round = 0;
    double mean_pre_clip_norm = 0.0;
    double max_pre_clip_norm = 0.0;
    double max_post_clip_norm = 0.0;
    double clipped_fraction = 0.0;
    std::uint64_t noise_seed = 0;
    std::vector<std::size_t> client_indices;
};

struct ServerState {
    OptimizerState adam;
};

// One DP-FedAvg round: sample b_u users, run local updates in a canonical
// order, average by 1/(qN) = 1/b_u, add N(0, sigma^2 I), then apply the
// server step (plain addition, or Adam on the noised pseudo-gradient).
inline RoundStats dp_fedavg_round(ParamVector& theta, const ModelConfig& model_cfg,
                                  const FederatedCorpus& corpus, const FedTrainConfig& cfg,
                                  std::size_t round, ServerState& server) {
    const std::size_t N = corpus.users.size();
    cfg.validate(N);

    // client sample for this round
    Rng sample_rng = make_rng(derive_seed(cfg.seed, "fed/sample", round));
    std::vector<std::size_t> clients;
    if (cfg.sampling == ClientSampling::kWithoutReplacement) {
        std::vector<std::size_t> ids(N);
        for (std::size_t i = 0; i < N; ++i) ids[i] = i;
        for (std::size_t i = 0; i < cfg.users_per_round; ++i) {
            const std::size_t j = i + uniform_index(sample_rng, N - i);
            std::swap(ids[i], ids[j]);
            clients.push_back(ids[i]);
        }
    } else {
        for (std::size_t i = 0; i < cfg.users_per_round; ++i)
            clients.push_back(uniform_index(sample_rng, N));
    }

    RoundStats stats;
    stats.round = round;
    stats.client_indices = clients;
    std::vector<double> aggregate(theta.size(), 0.0);
    const double inv_qn = 1.0 / static_cast<double>(cfg.users_per_round);
    std::size_t clipped = 0;
    for (std::size_t k = 0; k < clients.size(); ++k) {
        double pre_norm = 0.0;
        std::vector<double> delta =
            user_update(theta, model_cfg, corpus.users[clients[k]], cfg.local_epochs,
                        cfg.local_batch, cfg.local_lr, cfg.clip_norm, &pre_norm);
        stats.mean_pre_clip_norm += pre_norm / static_cast<double>(clients.size());
        stats.max_pre_clip_norm = std::max(stats.max_pre_clip_norm, pre_norm);
        stats.max_post_clip_norm = std::max(stats.max_post_clip_norm, l2_norm(delta));
        if (std::isfinite(cfg.clip_norm) && pre_norm > cfg.clip_norm) ++clipped;
        for (std::size_t i = 0; i < aggregate.size(); ++i) aggregate[i] += inv_qn * delta[i];
    }
    stats.clipped_fraction = static_cast<double>(clipped) / static_cast<double>(clients.size());

    const double sigma = cfg.noise_stddev(N);
    stats.noise_seed = derive_seed(cfg.seed, "fed/noise", round);
    if (sigma > 0.0) {
        Rng noise_rng = make_rng(stats.noise_seed);
        for (double& a : aggregate) a += sigma * normal(noise_rng);
    }

    if (cfg.server_optimizer == ServerOptimizer::kAverage) {
        for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += aggregate[i];
    } else {
        // server Adam ascends along the noised aggregate
        CentralTrainConfig adam_cfg;
        adam_cfg.optimizer = Optimizer::kAdam;
        adam_cfg.adam_lr = cfg.server_adam_lr;
        std::vector<double> pseudo_grad(aggregate.size());
        for (std::size_t i = 0; i < aggregate.size(); ++i) pseudo_grad[i] = -aggregate[i];
        apply_update(theta, pseudo_grad, adam_cfg, server.adam);
    }
    return stats;
}

struct FedLogRow {
    std::size_t round = 0;
    double mean_pre_clip_norm = 0.0;
    double max_pre_clip_norm = 0.0;
    double clipped_fraction = 0.0;
    double loss = 0.0;
    double recall_at_1 = 0.0;
    double perplexity = 0.0;
    double epsilon_so_far = std::numeric_limits<double>::infinity();
};

struct FedTrainingLog {
    std::vector<FedLogRow> rows;
    std::vector<RoundStats> round_stats;

    void save_csv(std::ostream& os) const {
        os << "round,mean_pre_clip_norm,max_pre_clip_norm,clipped_fraction,"
              "loss,recall_at_1,perplexity,epsilon_so_far\n";
        for (const auto& r : rows)
            os << r.round << ',' << r.mean_pre_clip_norm << ',' << r.max_pre_clip_norm << ','
               << r.clipped_fraction << ',' << r.loss << ',' << r.recall_at_1 << ','
               << r.perplexity << ',' << r.epsilon_so_far << '\n';
    }
};

// T rounds of DP-FedAvg. The accountant is charged once per round when z > 0;
// with z = 0 it is never touched and the guarantee stays (inf, delta).
// eval_every = 0 evaluates utility only on the last round's log row.
inline FedTrainingLog fed_train(ParamVector& theta, const ModelConfig& model_cfg,
                                const FederatedCorpus& corpus, const FedTrainConfig& cfg,
                                MomentsAccountant* accountant, double report_delta = 1e-7,
                                std::size_t eval_every = 0,
                                const FederatedCorpus* eval_corpus = nullptr) {
    const std::size_t N = corpus.users.size();
    cfg.validate(N);
    const double q = cfg.participation_fraction(N);

    ServerState server;
    FedTrainingLog log;
    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        RoundStats stats = dp_fedavg_round(theta, model_cfg, corpus, cfg, t, server);
        if (cfg.noise_multiplier > 0.0 && accountant)
            accountant->accum_priv_spending(q, cfg.noise_multiplier);

        FedLogRow row;
        row.round = t;
        row.mean_pre_clip_norm = stats.mean_pre_clip_norm;
        row.max_pre_clip_norm = stats.max_pre_clip_norm;
        row.clipped_fraction = stats.clipped_fraction;
        const bool eval_now =
            (eval_every != 0 && t % eval_every == 0) || t + 1 == cfg.rounds;
        if (eval_now && eval_corpus) {
            const UtilityMetrics m = evaluate_utility(theta, model_cfg, *eval_corpus);
            row.recall_at_1 = m.recall_at_1;
            row.perplexity = m.perplexity;
            row.loss = std::log(m.perplexity);
        }
        if (cfg.noise_multiplier > 0.0 && accountant)
            row.epsilon_so_far = accountant->get_privacy_spent(report_delta).epsilon;
        log.rows.push_back(row);
        log.round_stats.push_back(stats);
    }
    return log;
}

}  // namespace fedsim
