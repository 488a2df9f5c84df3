#pragma once

// Word-level recurrent language model: single CIFG-LSTM cell (input gate
// coupled to the forget gate, i = 1 - f), input embedding E shared with the
// output layer through a learned projection P, so logits = E * (P h).
// Forward, exact BPTT gradients, utility evaluation, and checkpoint I/O.
// All math in double precision.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsim/corpus.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 96;
    std::size_t hidden_dim = 670;

    void validate() const {
        if (vocab_size < 1 || embed_dim < 1 || hidden_dim < 1)
            throw std::invalid_argument("model dims must be >= 1");
    }

    // Layout of the flat parameter vector:
    //   E   vocab x embed
    //   W_f, W_c, W_o   hidden x embed
    //   U_f, U_c, U_o   hidden x hidden
    //   b_f, b_c, b_o   hidden
    //   P   embed x hidden
    std::size_t embedding_offset() const { return 0; }
    std::size_t w_offset(int gate) const {
        return vocab_size * embed_dim + static_cast<std::size_t>(gate) * hidden_dim * embed_dim;
    }
    std::size_t u_offset(int gate) const {
        return w_offset(3) + static_cast<std::size_t>(gate) * hidden_dim * hidden_dim;
    }
    std::size_t b_offset(int gate) const {
        return u_offset(3) + static_cast<std::size_t>(gate) * hidden_dim;
    }
    std::size_t proj_offset() const { return b_offset(3); }
    std::size_t param_count() const { return proj_offset() + embed_dim * hidden_dim; }
};

enum Gate { kForget = 0, kCell = 1, kOutput = 2 };

using ParamVector = std::vector<double>;

inline ParamVector zero_params(const ModelConfig& cfg) {
    return ParamVector(cfg.param_count(), 0.0);
}

// uniform(-0.05, 0.05) weights, zero biases.
inline ParamVector init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamVector p(cfg.param_count());
    Rng rng = make_rng(derive_seed(seed, "init"));
    for (double& x : p) x = uniform_real(rng, -0.05, 0.05);
    for (int g = 0; g < 3; ++g)
        for (std::size_t i = 0; i < cfg.hidden_dim; ++i) p[cfg.b_offset(g) + i] = 0.0;
    return p;
}

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

struct LstmState {
    std::vector<double> h, c;

    static LstmState zero(const ModelConfig& cfg) {
        return {std::vector<double>(cfg.hidden_dim, 0.0),
                std::vector<double>(cfg.hidden_dim, 0.0)};
    }
};

struct StepOutput {
    std::vector<double> log_probs;
    LstmState state;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y += M x, M is rows x cols row-major.
inline void matvec_acc(const double* m, const double* x, double* y,
                       std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        const double* row = m + r * cols;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
        y[r] += acc;
    }
}

// y += M^T x, M is rows x cols row-major, x has length rows, y length cols.
inline void matvec_t_acc(const double* m, const double* x, double* y,
                         std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = m + r * cols;
        const double xr = x[r];
        for (std::size_t c = 0; c < cols; ++c) y[c] += row[c] * xr;
    }
}

// M += a * (x y^T), M rows x cols.
inline void outer_acc(double* m, const double* x, const double* y, double a,
                      std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = m + r * cols;
        const double xr = a * x[r];
        for (std::size_t c = 0; c < cols; ++c) row[c] += xr * y[c];
    }
}

// Per-timestep values kept for the backward pass.
struct StepCache {
    TokenId token;
    std::vector<double> f, ctilde, o;      // gate activations
    std::vector<double> c_prev, h_prev;    // incoming state
    std::vector<double> c, tanh_c;         // new cell and tanh(c)
    std::vector<double> y;                 // P h'
    std::vector<double> log_probs;
};

// One CIFG step. Fills cache (log_probs only if want_logits).
inline void cifg_step(const ParamVector& params, const ModelConfig& cfg,
                      const LstmState& state, TokenId token, StepCache& cache,
                      bool want_logits) {
    const std::size_t H = cfg.hidden_dim, D = cfg.embed_dim, V = cfg.vocab_size;
    if (token >= V) throw std::invalid_argument("token id out of range");

    const double* E = params.data() + cfg.embedding_offset();
    const double* x = E + static_cast<std::size_t>(token) * D;

    cache.token = token;
    cache.h_prev = state.h;
    cache.c_prev = state.c;

    // preactivations a_g = W_g x + U_g h + b_g
    std::array<std::vector<double>, 3> pre;
    for (int g = 0; g < 3; ++g) {
        pre[g].assign(params.data() + cfg.b_offset(g), params.data() + cfg.b_offset(g) + H);
        matvec_acc(params.data() + cfg.w_offset(g), x, pre[g].data(), H, D);
        matvec_acc(params.data() + cfg.u_offset(g), state.h.data(), pre[g].data(), H, H);
    }

    cache.f.resize(H);
    cache.ctilde.resize(H);
    cache.o.resize(H);
    cache.c.resize(H);
    cache.tanh_c.resize(H);
    for (std::size_t i = 0; i < H; ++i) {
        cache.f[i] = sigmoid(pre[kForget][i]);
        cache.ctilde[i] = std::tanh(pre[kCell][i]);
        cache.o[i] = sigmoid(pre[kOutput][i]);
        cache.c[i] = cache.f[i] * state.c[i] + (1.0 - cache.f[i]) * cache.ctilde[i];
        cache.tanh_c[i] = std::tanh(cache.c[i]);
    }

    if (want_logits) {
        // y = P h', logits = E y, log_probs = log-softmax(logits)
        std::vector<double> h_new(H);
        for (std::size_t i = 0; i < H; ++i) h_new[i] = cache.o[i] * cache.tanh_c[i];
        cache.y.assign(D, 0.0);
        matvec_acc(params.data() + cfg.proj_offset(), h_new.data(), cache.y.data(), D, H);
        cache.log_probs.assign(V, 0.0);
        for (std::size_t v = 0; v < V; ++v) {
            double acc = 0.0;
            const double* row = E + v * D;
            for (std::size_t d = 0; d < D; ++d) acc += row[d] * cache.y[d];
            cache.log_probs[v] = acc;
        }
        double mx = cache.log_probs[0];
        for (double l : cache.log_probs) mx = std::max(mx, l);
        double z = 0.0;
        for (double l : cache.log_probs) z += std::exp(l - mx);
        const double lse = mx + std::log(z);
        for (double& l : cache.log_probs) l -= lse;
    }
}

inline LstmState cache_state(const StepCache& cache) {
    LstmState s;
    const std::size_t H = cache.c.size();
    s.h.resize(H);
    s.c = cache.c;
    for (std::size_t i = 0; i < H; ++i) s.h[i] = cache.o[i] * cache.tanh_c[i];
    return s;
}

}  // namespace detail

// Single forward step producing next-token log-probabilities.
inline StepOutput forward_step(const ParamVector& params, const ModelConfig& cfg,
                               const LstmState& state, TokenId token) {
    if (params.size() != cfg.param_count())
        throw std::invalid_argument("parameter vector length mismatch");
    if (!all_finite(params) || !all_finite(state.h) || !all_finite(state.c))
        throw std::runtime_error("non-finite parameter or state");
    detail::StepCache cache;
    detail::cifg_step(params, cfg, state, token, cache, /*want_logits=*/true);
    return {std::move(cache.log_probs), detail::cache_state(cache)};
}

// Adds scale * d(mean per-token NLL)/d(params) for a teacher-forced example
// into grad, and returns the example's mean per-token NLL.
inline double accumulate_sequence_grad(const ParamVector& params, const ModelConfig& cfg,
                                       const Example& example, ParamVector& grad,
                                       double scale) {
    const std::size_t H = cfg.hidden_dim, D = cfg.embed_dim, V = cfg.vocab_size;
    const std::size_t n = example.token_ids.size();
    if (n < 2) throw std::invalid_argument("example needs length >= 2");
    if (params.size() != cfg.param_count() || grad.size() != cfg.param_count())
        throw std::invalid_argument("parameter vector length mismatch");

    const std::size_t steps = n - 1;
    std::vector<detail::StepCache> caches(steps);
    LstmState state = LstmState::zero(cfg);
    double loss = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
        detail::cifg_step(params, cfg, state, example.token_ids[t], caches[t], true);
        const TokenId target = example.token_ids[t + 1];
        loss -= caches[t].log_probs[target];
        state = detail::cache_state(caches[t]);
    }
    loss /= static_cast<double>(steps);
    if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss");

    const double inv_steps = scale / static_cast<double>(steps);
    const double* E = params.data() + cfg.embedding_offset();
    double* gE = grad.data() + cfg.embedding_offset();
    double* gP = grad.data() + cfg.proj_offset();
    const double* P = params.data() + cfg.proj_offset();

    std::vector<double> dh_next(H, 0.0), dc_next(H, 0.0);
    std::vector<double> dy(D), dh(H), dlogit(V), da(H), dx(D), h_new(H);
    for (std::size_t t = steps; t-- > 0;) {
        const auto& cc = caches[t];
        const TokenId target = example.token_ids[t + 1];

        for (std::size_t i = 0; i < H; ++i) h_new[i] = cc.o[i] * cc.tanh_c[i];

        // dlogit = inv_steps * (softmax - onehot(target))
        for (std::size_t v = 0; v < V; ++v)
            dlogit[v] = inv_steps * (std::exp(cc.log_probs[v]) - (v == target ? 1.0 : 0.0));

        // logits = E y: dE[v] += dlogit[v] * y; dy = E^T dlogit
        std::fill(dy.begin(), dy.end(), 0.0);
        for (std::size_t v = 0; v < V; ++v) {
            const double dv = dlogit[v];
            if (dv == 0.0) continue;
            const double* row = E + v * D;
            double* grow = gE + v * D;
            for (std::size_t d = 0; d < D; ++d) {
                grow[d] += dv * cc.y[d];
                dy[d] += dv * row[d];
            }
        }

        // y = P h': dP += dy h'^T ; dh = P^T dy (+ recurrent carry)
        detail::outer_acc(gP, dy.data(), h_new.data(), 1.0, D, H);
        dh = dh_next;
        detail::matvec_t_acc(P, dy.data(), dh.data(), D, H);

        // h' = o tanh(c')
        std::fill(dx.begin(), dx.end(), 0.0);
        std::fill(dh_next.begin(), dh_next.end(), 0.0);
        std::vector<double>& dc = dc_next;  // reuse as running dc'
        for (std::size_t i = 0; i < H; ++i)
            dc[i] += dh[i] * cc.o[i] * (1.0 - cc.tanh_c[i] * cc.tanh_c[i]);

        const double* x = E + static_cast<std::size_t>(cc.token) * D;

        // output gate
        for (std::size_t i = 0; i < H; ++i)
            da[i] = dh[i] * cc.tanh_c[i] * cc.o[i] * (1.0 - cc.o[i]);
        detail::outer_acc(grad.data() + cfg.w_offset(kOutput), da.data(), x, 1.0, H, D);
        detail::outer_acc(grad.data() + cfg.u_offset(kOutput), da.data(), cc.h_prev.data(), 1.0, H, H);
        for (std::size_t i = 0; i < H; ++i) grad[cfg.b_offset(kOutput) + i] += da[i];
        detail::matvec_t_acc(params.data() + cfg.w_offset(kOutput), da.data(), dx.data(), H, D);
        detail::matvec_t_acc(params.data() + cfg.u_offset(kOutput), da.data(), dh_next.data(), H, H);

        // forget gate, coupled input gate: c' = f c + (1-f) ctilde
        for (std::size_t i = 0; i < H; ++i)
            da[i] = dc[i] * (cc.c_prev[i] - cc.ctilde[i]) * cc.f[i] * (1.0 - cc.f[i]);
        detail::outer_acc(grad.data() + cfg.w_offset(kForget), da.data(), x, 1.0, H, D);
        detail::outer_acc(grad.data() + cfg.u_offset(kForget), da.data(), cc.h_prev.data(), 1.0, H, H);
        for (std::size_t i = 0; i < H; ++i) grad[cfg.b_offset(kForget) + i] += da[i];
        detail::matvec_t_acc(params.data() + cfg.w_offset(kForget), da.data(), dx.data(), H, D);
        detail::matvec_t_acc(params.data() + cfg.u_offset(kForget), da.data(), dh_next.data(), H, H);

        // candidate cell
        for (std::size_t i = 0; i < H; ++i)
            da[i] = dc[i] * (1.0 - cc.f[i]) * (1.0 - cc.ctilde[i] * cc.ctilde[i]);
        detail::outer_acc(grad.data() + cfg.w_offset(kCell), da.data(), x, 1.0, H, D);
        detail::outer_acc(grad.data() + cfg.u_offset(kCell), da.data(), cc.h_prev.data(), 1.0, H, H);
        for (std::size_t i = 0; i < H; ++i) grad[cfg.b_offset(kCell) + i] += da[i];
        detail::matvec_t_acc(params.data() + cfg.w_offset(kCell), da.data(), dx.data(), H, D);
        detail::matvec_t_acc(params.data() + cfg.u_offset(kCell), da.data(), dh_next.data(), H, H);

        // carry into previous timestep
        for (std::size_t i = 0; i < H; ++i) dc[i] *= cc.f[i];

        // input embedding row
        double* grow = gE + static_cast<std::size_t>(cc.token) * D;
        for (std::size_t d = 0; d < D; ++d) grow[d] += dx[d];
    }
    return loss;
}

inline std::pair<double, ParamVector> sequence_loss_and_grad(const ParamVector& params,
                                                             const ModelConfig& cfg,
                                                             const Example& example) {
    ParamVector grad = zero_params(cfg);
    const double loss = accumulate_sequence_grad(params, cfg, example, grad, 1.0);
    return {loss, std::move(grad)};
}

// Loss only (forward pass), mean per-token NLL.
inline double sequence_loss(const ParamVector& params, const ModelConfig& cfg,
                            const Example& example) {
    const std::size_t n = example.token_ids.size();
    if (n < 2) throw std::invalid_argument("example needs length >= 2");
    LstmState state = LstmState::zero(cfg);
    double loss = 0.0;
    detail::StepCache cache;
    for (std::size_t t = 0; t + 1 < n; ++t) {
        detail::cifg_step(params, cfg, state, example.token_ids[t], cache, true);
        loss -= cache.log_probs[example.token_ids[t + 1]];
        state = detail::cache_state(cache);
    }
    return loss / static_cast<double>(n - 1);
}

struct UtilityMetrics {
    double recall_at_1 = 0.0;
    double perplexity = 0.0;
};

// Recall@1 and perplexity over every next-token position of the test corpus.
// Argmax ties break toward the lowest token index.
inline UtilityMetrics evaluate_utility(const ParamVector& params, const ModelConfig& cfg,
                                       const FederatedCorpus& test) {
    std::size_t positions = 0, hits = 0;
    double nll = 0.0;
    detail::StepCache cache;
    for (const auto& user : test.users) {
        for (const auto& ex : user.examples) {
            if (ex.token_ids.size() < 2) continue;
            LstmState state = LstmState::zero(cfg);
            for (std::size_t t = 0; t + 1 < ex.token_ids.size(); ++t) {
                detail::cifg_step(params, cfg, state, ex.token_ids[t], cache, true);
                const TokenId target = ex.token_ids[t + 1];
                nll -= cache.log_probs[target];
                std::size_t best = 0;
                for (std::size_t v = 1; v < cfg.vocab_size; ++v)
                    if (cache.log_probs[v] > cache.log_probs[best]) best = v;
                if (best == target) ++hits;
                ++positions;
                state = detail::cache_state(cache);
            }
        }
    }
    if (positions == 0) throw std::invalid_argument("evaluate_utility: empty test corpus");
    UtilityMetrics m;
    m.recall_at_1 = static_cast<double>(hits) / static_cast<double>(positions);
    m.perplexity = std::exp(nll / static_cast<double>(positions));
    return m;
}

// Checkpoint format: "FSLM" magic, u32 version, u32 vocab/embed/hidden,
// u64 count, then count little-endian doubles.
inline void save_checkpoint(const ParamVector& params, const ModelConfig& cfg,
                            const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    const char magic[4] = {'F', 'S', 'L', 'M'};
    os.write(magic, 4);
    auto put_u32 = [&](std::uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        os.write(reinterpret_cast<char*>(b), 4);
    };
    put_u32(1);
    put_u32(static_cast<std::uint32_t>(cfg.vocab_size));
    put_u32(static_cast<std::uint32_t>(cfg.embed_dim));
    put_u32(static_cast<std::uint32_t>(cfg.hidden_dim));
    const std::uint64_t count = params.size();
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(count >> (8 * i));
    os.write(reinterpret_cast<char*>(b), 8);
    static_assert(std::endian::native == std::endian::little);
    os.write(reinterpret_cast<const char*>(params.data()),
             static_cast<std::streamsize>(params.size() * sizeof(double)));
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

inline std::pair<ParamVector, ModelConfig> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "FSLM", 4) != 0)
        throw std::runtime_error("bad checkpoint magic: " + path);
    auto get_u32 = [&]() {
        unsigned char b[4];
        is.read(reinterpret_cast<char*>(b), 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    };
    const std::uint32_t version = get_u32();
    if (version != 1) throw std::runtime_error("unsupported checkpoint version");
    ModelConfig cfg;
    cfg.vocab_size = get_u32();
    cfg.embed_dim = get_u32();
    cfg.hidden_dim = get_u32();
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t count = 0;
    for (int i = 0; i < 8; ++i) count |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    if (count != cfg.param_count())
        throw std::runtime_error("checkpoint length does not match config");
    ParamVector params(count);
    is.read(reinterpret_cast<char*>(params.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    return {std::move(params), cfg};
}

}  // namespace fedsim
