#pragma once

// Liveness arithmetic for randomly sampled enclave pools. A contract stalls
// only when every member of its pool is unresponsive, so with m unresponsive
// operators out of n registered the stall probability of one s-sized pool is
// the hypergeometric all-bad draw C(m,s)/C(n,s). The closed-form bound
// 1 - (m/n)^s on liveness follows because each successive factor
// (m-i)/(n-i) only shrinks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/cpp_int.hpp>

#include "pose/common.hpp"
#include "pose/timeouts.hpp"

namespace pose {

using Rational = boost::multiprecision::cpp_rational;
using BigFloat = boost::multiprecision::cpp_bin_float_50;

inline void check_pool_shape(uint64_t n, uint64_t m, uint64_t s) {
    if (s == 0) throw ConfigInvalid("pool size must be positive");
    if (s > n) throw ConfigInvalid("pool size exceeds enclave count");
    if (m > n) throw ConfigInvalid("unresponsive count exceeds enclave count");
}

// Exact stall probability of one pool: all s draws land among the m
// unresponsive enclaves.
inline Rational pool_crash_probability(uint64_t n, uint64_t m, uint64_t s) {
    check_pool_shape(n, m, s);
    if (s > m) return 0;
    Rational p = 1;
    for (uint64_t i = 0; i < s; i++) p *= Rational(m - i, n - i);
    return p;
}

inline Rational liveness_epsilon(uint64_t n, uint64_t m, uint64_t s) {
    return 1 - pool_crash_probability(n, m, s);
}

inline Rational liveness_lower_bound(uint64_t n, uint64_t m, uint64_t s) {
    check_pool_shape(n, m, s);
    Rational ratio(m, n), pw = 1;
    for (uint64_t i = 0; i < s; i++) pw *= ratio;
    return 1 - pw;
}

// P(none of k independently sampled pools stalls), in 50-digit floats: the
// exact rational power would be astronomically wide for realistic k.
inline BigFloat system_survival(uint64_t n, uint64_t m, uint64_t s, uint64_t k) {
    BigFloat alive = BigFloat(1) - pool_crash_probability(n, m, s).convert_to<BigFloat>();
    return boost::multiprecision::pow(alive, BigFloat(k));
}

struct WilsonInterval {
    double lo = 0;
    double hi = 0;
    bool contains(double p) const { return lo <= p && p <= hi; }
};

// 95% score interval. Endpoints are the roots of
// (p - p_hat)^2 = z^2 p (1-p) / trials.
inline WilsonInterval wilson95(uint64_t hits, uint64_t trials) {
    constexpr double z = 1.959964;
    double nd = static_cast<double>(trials);
    double ph = static_cast<double>(hits) / nd;
    double z2 = z * z;
    double denom = 1.0 + z2 / nd;
    double center = (ph + z2 / (2 * nd)) / denom;
    double half = z * std::sqrt(ph * (1 - ph) / nd + z2 / (4 * nd * nd)) / denom;
    // Rounding can push the endpoints a hair outside [0,1].
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

struct McCrash {
    uint64_t hits = 0;
    uint64_t trials = 0;
    double estimate = 0;
    WilsonInterval ci;
};

// Monte Carlo stall frequency. Each trial draws an s-prefix of a running
// Fisher-Yates permutation of [0,n); ids below m stand for the unresponsive
// enclaves. The array is left permuted between trials, which is fine: the
// partial shuffle is uniform from any starting permutation.
inline McCrash mc_pool_crash(uint64_t n, uint64_t m, uint64_t s, uint64_t trials, Rng& rng) {
    check_pool_shape(n, m, s);
    if (trials == 0) throw ConfigInvalid("trials must be positive");
    std::vector<uint64_t> ids(n);
    std::iota(ids.begin(), ids.end(), uint64_t{0});
    McCrash out;
    out.trials = trials;
    for (uint64_t t = 0; t < trials; t++) {
        bool all_bad = true;
        for (uint64_t i = 0; i < s; i++) {
            uint64_t j = i + rng.below(n - i);
            std::swap(ids[i], ids[j]);
            if (ids[i] >= m) all_bad = false;
        }
        if (all_bad) out.hits++;
    }
    out.estimate = static_cast<double>(out.hits) / static_cast<double>(out.trials);
    out.ci = wilson95(out.hits, out.trials);
    return out;
}

}  // namespace pose
