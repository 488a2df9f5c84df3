#pragma once

// Renyi-DP accountant for the subsampled Gaussian mechanism: per-round RDP at
// a grid of orders, additive composition across rounds, and conversion to an
// (epsilon, delta) guarantee.
//
// Two per-round bounds are provided:
//   - kPoisson: the binomial-expansion upper bound for Poisson subsampling
//     (exact for the mixture divergence at integer orders).
//   - kWithoutReplacement: the analytical-moments-accountant style bound for
//     fixed-size subsampling without replacement, which is what fixed-size
//     federated rounds perform. This is the accounting default.
// Both collapse to the Gaussian closed form alpha/(2 z^2) at q = 1.

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsim {

constexpr double kInfEps = std::numeric_limits<double>::infinity();

enum class SubsamplingBound { kPoisson, kWithoutReplacement };

// Default grid: fractional orders 1.25..1.75 step 0.25, then integers 2..256.
inline std::vector<double> default_rdp_orders() {
    std::vector<double> orders = {1.25, 1.5, 1.75};
    for (int a = 2; a <= 256; ++a) orders.push_back(static_cast<double>(a));
    return orders;
}

struct RdpCurve {
    std::vector<double> orders;
    std::vector<double> eps_rdp;

    static RdpCurve zero(std::vector<double> orders_in) {
        RdpCurve c;
        c.eps_rdp.assign(orders_in.size(), 0.0);
        c.orders = std::move(orders_in);
        return c;
    }
};

struct DpGuarantee {
    double epsilon = kInfEps;
    double delta = 0.0;
    double optimal_order = 0.0;
};

namespace detail {

inline double log_add(double a, double b) {
    if (a == -kInfEps) return b;
    if (b == -kInfEps) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(std::min(a, b) - m));
}

inline double log_binom(double n, double k) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// Poisson-subsampled Gaussian at integer order alpha:
//   eps(a) = log( sum_{j=0}^{a} C(a,j) (1-q)^{a-j} q^j e^{j(j-1)/(2 z^2)} ) / (a-1)
inline double poisson_rdp_integer(double q, double z, int alpha) {
    double log_sum = -kInfEps;
    for (int j = 0; j <= alpha; ++j) {
        double t = log_binom(alpha, j) + j * (j - 1) / (2.0 * z * z);
        if (j < alpha) t += (alpha - j) * std::log1p(-q);
        t += j * std::log(q);
        log_sum = log_add(log_sum, t);
    }
    return log_sum / (alpha - 1);
}

// Fixed-size subsampling without replacement, integer order alpha
// (ternary-expansion bound; Gaussian base mechanism with eps(j) = j/(2 z^2)):
//   e^{(a-1) eps'} <= 1 + C(a,2) q^2 min{4(e^{eps(2)}-1), 2 e^{eps(2)}}
//                       + sum_{j=3}^{a} C(a,j) q^j 2 e^{(j-1) eps(j)}
inline double wor_rdp_integer(double q, double z, int alpha) {
    const auto base_eps = [&](double j) { return j / (2.0 * z * z); };
    double log_sum = 0.0;  // log(1)
    if (alpha >= 2) {
        const double e2 = base_eps(2);
        const double pair = std::min(4.0 * std::expm1(e2), 2.0 * std::exp(e2));
        log_sum = log_add(log_sum, log_binom(alpha, 2) + 2.0 * std::log(q) + std::log(pair));
    }
    for (int j = 3; j <= alpha; ++j) {
        const double t = log_binom(alpha, j) + j * std::log(q) + std::log(2.0) +
                         (j - 1) * base_eps(j);
        log_sum = log_add(log_sum, t);
    }
    return log_sum / (alpha - 1);
}

inline bool is_integer_order(double alpha) {
    return alpha >= 2.0 && alpha == std::floor(alpha) && alpha <= 1e6;
}

}  // namespace detail

// Per-round RDP of one subsampled-Gaussian round at the given orders.
// q = 1 uses the exact Gaussian closed form alpha/(2 z^2) at every order.
// For q < 1, integer orders use the chosen subsampling bound; fractional
// orders have no closed continuation here and are reported as +inf (they are
// then never selected by the conversion minimum).
inline std::vector<double> rdp_subsampled_gaussian(
    double q, double z, const std::vector<double>& orders,
    SubsamplingBound bound = SubsamplingBound::kWithoutReplacement) {
    if (!(q > 0.0) || q > 1.0) throw std::invalid_argument("q must be in (0,1]");
    if (z < 0.0) throw std::invalid_argument("noise multiplier must be >= 0");
    std::vector<double> eps(orders.size());
    for (std::size_t i = 0; i < orders.size(); ++i) {
        const double a = orders[i];
        if (a <= 1.0) throw std::invalid_argument("RDP orders must exceed 1");
        if (z == 0.0) {
            eps[i] = kInfEps;
        } else if (q == 1.0) {
            eps[i] = a / (2.0 * z * z);
        } else if (detail::is_integer_order(a)) {
            const int ia = static_cast<int>(a);
            eps[i] = bound == SubsamplingBound::kPoisson
                         ? detail::poisson_rdp_integer(q, z, ia)
                         : detail::wor_rdp_integer(q, z, ia);
        } else {
            eps[i] = kInfEps;
        }
        if (std::isnan(eps[i])) eps[i] = kInfEps;
    }
    return eps;
}

// Additive composition: eps_rdp += rounds * per_round, orderwise.
inline RdpCurve compose(RdpCurve curve, const std::vector<double>& per_round,
                        std::size_t rounds) {
    if (per_round.size() != curve.orders.size())
        throw std::invalid_argument("compose: order grid mismatch");
    for (std::size_t i = 0; i < per_round.size(); ++i)
        curve.eps_rdp[i] += static_cast<double>(rounds) * per_round[i];
    return curve;
}

// RDP -> (epsilon, delta): eps = min_a [ eps_rdp(a) + log(1/delta)/(a-1) ].
inline DpGuarantee to_dp(const RdpCurve& curve, double delta) {
    if (curve.orders.empty()) throw std::invalid_argument("to_dp: empty curve");
    if (!(delta > 0.0) || !(delta < 1.0))
        throw std::invalid_argument("delta must be in (0,1)");
    DpGuarantee g;
    g.delta = delta;
    for (std::size_t i = 0; i < curve.orders.size(); ++i) {
        const double a = curve.orders[i];
        const double eps = curve.eps_rdp[i] + std::log(1.0 / delta) / (a - 1.0);
        if (eps < g.epsilon) {
            g.epsilon = eps;
            g.optimal_order = a;
        }
    }
    return g;
}

// Accumulates per-round spending inside a training loop.
class MomentsAccountant {
  public:
    MomentsAccountant() : MomentsAccountant(default_rdp_orders()) {}
    explicit MomentsAccountant(std::vector<double> orders,
                               SubsamplingBound bound = SubsamplingBound::kWithoutReplacement)
        : curve_(RdpCurve::zero(std::move(orders))), bound_(bound) {}

    void accum_priv_spending(double q, double z, std::size_t rounds = 1) {
        if (z <= 0.0) {
            infinite_ = true;
            rounds_ += rounds;
            return;
        }
        curve_ = compose(std::move(curve_),
                         rdp_subsampled_gaussian(q, z, curve_.orders, bound_), rounds);
        rounds_ += rounds;
    }

    DpGuarantee get_privacy_spent(double delta) const {
        if (rounds_ == 0 || infinite_) return {kInfEps, delta, 0.0};
        return to_dp(curve_, delta);
    }

    const RdpCurve& curve() const { return curve_; }
    std::size_t rounds() const { return rounds_; }

  private:
    RdpCurve curve_;
    SubsamplingBound bound_;
    std::size_t rounds_ = 0;
    bool infinite_ = false;
};

}  // namespace fedsim
