#pragma once

// Timeout parameter derivation and the consistency relations between the
// off-chain response deadlines, the on-chain challenge deadlines, and the
// chain's latency envelope. Everything here is integer seconds and blocks;
// callers pick the block-time tau and the latency/confirmation factors.

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pose {

struct ConfigInvalid : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TimeoutParams {
    // Chain characteristics.
    uint64_t tau = 15;   // expected block interval, seconds
    uint64_t alpha = 20; // max blocks until a submitted tx is included
    uint64_t gamma = 15; // confirmation depth, blocks

    // Enclave work bounds, seconds.
    uint64_t t_exec = 60;

    // Off-chain deadlines, seconds. The defaults are the tightest values
    // for this envelope: off_exec covers two executions plus two nested
    // challenge round trips, 2*60 + 2*(885 + 300 + 225).
    uint64_t off_exec = 2940;  // user waits this long for an execution response
    uint64_t off_prop = 585;   // executor waits this long for propagation confirms
    uint64_t off_create = 2940;
    uint64_t off_create_prop = 585;

    // On-chain challenge deadlines, blocks.
    uint64_t on_exec = 216;
    uint64_t on_prop = 59;
    uint64_t on_create = 216;
    uint64_t on_create_prop = 59;

    uint64_t latency() const { return alpha * tau; }   // worst-case inclusion wait
    uint64_t t_confirm() const { return gamma * tau; } // worst-case finality wait

    // Each relation makes one escalation step sound: an on-chain deadline
    // must cover the off-chain one plus inclusion latency, and the top-level
    // off-chain deadline must cover a full nested challenge round trip.
    void validate() const {
        if (tau == 0 || alpha == 0) throw ConfigInvalid("tau and alpha must be positive");
        auto need = [](bool ok, const std::string& what) {
            if (!ok) throw ConfigInvalid("timeout relation violated: " + what);
        };
        need(on_prop * tau >= off_prop + latency(), "on_prop*tau >= off_prop + latency");
        need(on_exec * tau >= off_exec + latency(), "on_exec*tau >= off_exec + latency");
        need(off_exec >= 2 * t_exec + 2 * (on_prop * tau + latency() + t_confirm()),
             "off_exec >= 2*t_exec + 2*(on_prop*tau + latency + t_confirm)");
        need(on_create_prop * tau >= off_create_prop + latency(),
             "on_create_prop*tau >= off_create_prop + latency");
        need(on_create * tau >= off_create + latency(), "on_create*tau >= off_create + latency");
        need(off_create >= 2 * t_exec + 2 * (on_create_prop * tau + latency() + t_confirm()),
             "off_create >= 2*t_exec + 2*(on_create_prop*tau + latency + t_confirm)");
    }
};

// Dynamic-timeout mode. The on-chain challenge deadline starts at the
// optimistic value: just enough for the challenged enclave to execute
// off-chain and land one transaction (the response, or a nested watchdog
// challenge). It grows only when the executor demonstrably spends time on a
// nested challenge (at most twice) or on finalizing a kick.
inline uint64_t dynamic_initial_seconds(uint64_t alpha, uint64_t tau) { return alpha * tau; }
inline uint64_t dynamic_challenge_extension_seconds(uint64_t alpha, uint64_t tau) {
    return alpha * tau;
}
inline uint64_t dynamic_kick_extension_seconds(uint64_t alpha, uint64_t gamma, uint64_t tau) {
    return (alpha + gamma) * tau;
}

// Average-case waiting times: typical inclusion wait for a challenge or
// response, and typical time to land a kick plus its confirmation blocks.
inline uint64_t avg_inclusion_seconds(uint64_t alpha_avg, uint64_t tau_avg) {
    return alpha_avg * tau_avg;
}
inline uint64_t avg_kick_seconds(uint64_t alpha_avg, uint64_t gamma, uint64_t tau_avg) {
    return (alpha_avg + gamma) * tau_avg;
}

inline uint64_t seconds_to_blocks_ceil(uint64_t seconds, uint64_t tau) {
    return (seconds + tau - 1) / tau;
}

}  // namespace pose
