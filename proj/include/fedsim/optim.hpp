#pragma once

// Central-learning training loops over record minibatches: SGD, heavy-ball
// momentum, and Adam, with IID-shuffled or user-sequential data order.

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsim/corpus.hpp"
#include "fedsim/model.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class Optimizer { kSgd, kMomentum, kAdam };
enum class DataOrder { kIidShuffled, kUserSequential };

struct CentralTrainConfig {
    Optimizer optimizer = Optimizer::kSgd;
    std::size_t batch_size = 32;
    double learning_rate = 0.005;
    double momentum_coef = 0.9;
    double adam_lr = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t max_steps = 0;
    DataOrder data_order = DataOrder::kIidShuffled;
    std::uint64_t seed = 0;
    // sqrt(2) learning-rate scaling per 2x batch-size increase over the
    // reference batch, for the same-epoch evaluation protocol.
    bool scale_lr_with_batch = false;
    std::size_t reference_batch = 32;

    void validate() const {
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (learning_rate <= 0.0 || adam_lr <= 0.0)
            throw std::invalid_argument("learning rates must be positive");
    }

    double effective_lr() const {
        return optimizer == Optimizer::kAdam ? adam_lr : learning_rate;
    }
};

struct TrainLogRow {
    std::size_t step = 0;
    double loss = 0.0;
    double epoch = 0.0;
    double wall_ms = 0.0;
};

struct TrainingLog {
    std::vector<TrainLogRow> rows;

    void save_csv(std::ostream& os) const {
        os << "step,loss,epoch,wall_ms\n";
        for (const auto& r : rows)
            os << r.step << ',' << r.loss << ',' << r.epoch << ',' << r.wall_ms << '\n';
    }
};

// Persistent optimizer slots (momentum buffer / Adam moments).
struct OptimizerState {
    std::vector<double> momentum;
    std::vector<double> adam_m, adam_v;
    std::size_t adam_t = 0;

    void ensure(const Optimizer opt, std::size_t n) {
        if (opt == Optimizer::kMomentum && momentum.size() != n) momentum.assign(n, 0.0);
        if (opt == Optimizer::kAdam && adam_m.size() != n) {
            adam_m.assign(n, 0.0);
            adam_v.assign(n, 0.0);
            adam_t = 0;
        }
    }
};

// One parameter update from an already-averaged minibatch gradient.
inline void apply_update(ParamVector& params, const ParamVector& grad,
                         const CentralTrainConfig& cfg, OptimizerState& state) {
    const std::size_t n = params.size();
    state.ensure(cfg.optimizer, n);
    switch (cfg.optimizer) {
        case Optimizer::kSgd:
            for (std::size_t i = 0; i < n; ++i) params[i] -= cfg.learning_rate * grad[i];
            break;
        case Optimizer::kMomentum:
            for (std::size_t i = 0; i < n; ++i) {
                state.momentum[i] = cfg.momentum_coef * state.momentum[i] + grad[i];
                params[i] -= cfg.learning_rate * state.momentum[i];
            }
            break;
        case Optimizer::kAdam: {
            ++state.adam_t;
            const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.adam_t));
            const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.adam_t));
            for (std::size_t i = 0; i < n; ++i) {
                state.adam_m[i] = cfg.adam_beta1 * state.adam_m[i] + (1.0 - cfg.adam_beta1) * grad[i];
                state.adam_v[i] = cfg.adam_beta2 * state.adam_v[i] +
                                  (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
                const double mhat = state.adam_m[i] / bc1;
                const double vhat = state.adam_v[i] / bc2;
                params[i] -= cfg.adam_lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
            }
            break;
        }
    }
}

// Runs max_steps minibatch updates. IID order samples each batch uniformly
// with replacement from the pooled records; user-sequential order walks the
// user-grouped records in order, epoch after epoch.
inline TrainingLog central_train(ParamVector& params, const ModelConfig& model_cfg,
                                 const CentralTrainConfig& cfg,
                                 const FederatedCorpus& corpus,
                                 std::size_t log_every = 1) {
    cfg.validate();
    CentralTrainConfig run_cfg = cfg;
    if (cfg.scale_lr_with_batch && cfg.reference_batch >= 1) {
        const double factor = std::sqrt(static_cast<double>(cfg.batch_size) /
                                        static_cast<double>(cfg.reference_batch));
        run_cfg.learning_rate *= factor;
        run_cfg.adam_lr *= factor;
    }
    std::vector<const Example*> pool;
    for (const auto& u : corpus.users)
        for (const auto& e : u.examples)
            if (e.token_ids.size() >= 2) pool.push_back(&e);
    if (pool.empty()) throw std::invalid_argument("central_train: no trainable examples");

    Rng rng = make_rng(derive_seed(cfg.seed, "central/batches"));
    OptimizerState opt_state;
    TrainingLog log;
    ParamVector grad(params.size());
    std::size_t cursor = 0;

    for (std::size_t step = 0; step < cfg.max_steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double batch_loss = 0.0;
        const double w = 1.0 / static_cast<double>(cfg.batch_size);
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const Example* ex;
            if (cfg.data_order == DataOrder::kIidShuffled) {
                ex = pool[uniform_index(rng, pool.size())];
            } else {
                ex = pool[cursor];
                cursor = (cursor + 1) % pool.size();
            }
            batch_loss += w * accumulate_sequence_grad(params, model_cfg, *ex, grad, w);
        }
        if (!std::isfinite(batch_loss))
            throw std::runtime_error("central_train: non-finite loss at step " +
                                     std::to_string(step));
        apply_update(params, grad, run_cfg, opt_state);
        if (log_every && (step % log_every == 0 || step + 1 == cfg.max_steps)) {
            const double epoch = static_cast<double>((step + 1) * cfg.batch_size) /
                                 static_cast<double>(pool.size());
            log.rows.push_back({step, batch_loss, epoch, 0.0});
        }
    }
    return log;
}

// Coarse learning-rate grid search: trains a fresh copy for probe_steps at
// each rate and returns the rate with the lowest final-quarter mean loss.
inline double tune_learning_rate(const ParamVector& init, const ModelConfig& model_cfg,
                                 CentralTrainConfig cfg, const FederatedCorpus& corpus,
                                 const std::vector<double>& grid,
                                 std::size_t probe_steps) {
    if (grid.empty()) throw std::invalid_argument("empty learning-rate grid");
    constexpr double kInf = std::numeric_limits<double>::infinity();
    double best_rate = grid.front();
    double best_loss = kInf;
    for (double rate : grid) {
        cfg.learning_rate = rate;
        cfg.adam_lr = rate;
        cfg.max_steps = probe_steps;
        ParamVector p = init;
        double tail = kInf;
        try {
            TrainingLog log = central_train(p, model_cfg, cfg, corpus);
            double acc = 0.0;
            std::size_t n = 0;
            for (std::size_t i = log.rows.size() - log.rows.size() / 4; i < log.rows.size(); ++i) {
                acc += log.rows[i].loss;
                ++n;
            }
            if (n) tail = acc / static_cast<double>(n);
        } catch (const std::runtime_error&) {
            continue;  // diverged at this rate
        }
        if (tail < best_loss) {
            best_loss = tail;
            best_rate = rate;
        }
    }
    return best_rate;
}

}  // namespace fedsim
