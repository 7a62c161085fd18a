#pragma once

// A scenario is the complete, serializable description of one simulation
// run: chain parameters, protocol deadlines, the operator roster with a
// misbehaviour policy per operator, and a timed workload of user actions.
// Two runs of the same scenario must produce byte-identical traces, so
// everything random is derived from the single seed recorded here.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pose/contracts.hpp"
#include "pose/timeouts.hpp"

namespace pose {

using Json = nlohmann::json;

// What one misbehaving operator does. "honest" is the absence of a policy.
// Policies only touch the operator's own I/O and block feed; the enclave
// itself always runs the real program, and no policy can forge a signature
// or open someone else's envelope.
struct PolicySpec {
    std::string kind = "honest";

    // delay: hold every off-chain message this long before acting on it.
    // replay: gap before the duplicate delivery (0 picks a default).
    int64_t delay_secs = 0;

    // drop_offchain: which message kinds to drop (empty set = drop all).
    std::vector<std::string> drop_kinds;

    // partial_propagation: send the state update to the pool minus the
    // first `drop_first` members after the executor. Those members never
    // hear about the request off-chain.
    uint64_t drop_first = 1;

    // withhold_blocks / sidechain: seconds after the workload epoch (or the
    // role binding) at which the operator stops feeding its enclave the
    // real chain. For partial_propagation any positive value means the
    // operator crashes (goes silent) right after its first partial
    // fan-out, which is what forces the executor kick.
    int64_t switch_after_secs = 0;

    // sidechain: seconds between forged headers. Keeping this above
    // rate_window/rate_min starves the block-rate quota.
    int64_t forge_interval_secs = 45;
};

inline const std::set<std::string>& known_policies() {
    static const std::set<std::string> k = {
        "honest",        "silent",           "drop_offchain",
        "delay",         "respond_onchain_only", "partial_propagation",
        "withhold_blocks", "sidechain",      "replay"};
    return k;
}

// A policy attached to whoever ends up holding a pool slot of a contract,
// instead of a fixed operator index. Pool membership is sampled by the
// creator enclave, so "the executor misbehaves" can only be expressed this
// way. The binding resolves when the creation statement lands on-chain.
struct RolePolicy {
    std::string contract;
    uint64_t pool_index = 0;  // 0 = executor, k = k-th watchdog
    PolicySpec policy;
};

// A policy that still performs watchdog and challenge duties, as opposed to
// one that has gone quiet entirely.
inline bool policy_does_duty(const PolicySpec& p) {
    return p.kind != "silent" && p.kind != "partial_propagation";
}

struct ChainSettings {
    uint64_t tau_secs = 15;           // expected block interval
    uint64_t tau_variance_secs = 0;   // uniform +/- jitter on the interval
    uint64_t alpha_blocks = 2;        // inclusion latency bound, blocks
    uint64_t gamma_blocks = 3;        // confirmation depth
    uint64_t rate_min_blocks = 4;     // enclave block-rate quota: L blocks...
    int64_t rate_window_secs = 120;   // ...per this window
    int64_t stale_slack_secs = 60;    // enclave wall-clock staleness allowance
    int64_t slack_off_secs = 60;      // tip age enclaves tolerate when acting
    uint64_t slack_on_blocks = 10;    // registration evidence age bound
};

struct TimeoutSettings {
    uint64_t off_exec_secs = 270;
    uint64_t off_prop_secs = 30;
    uint64_t on_exec_blocks = 20;
    uint64_t on_prop_blocks = 4;
    uint64_t off_create_secs = 270;
    uint64_t off_create_prop_secs = 30;
    uint64_t on_create_blocks = 20;
    uint64_t on_create_prop_blocks = 4;
    bool dynamic = false;             // grow deadlines on nesting and kicks
    uint64_t ext_challenge_blocks = 2;
    uint64_t ext_kick_blocks = 5;
};

// One timed user action. Times are seconds after the workload epoch (the
// moment bootstrap finished); a nonzero jitter adds a seed-derived uniform
// extra delay in [0, jitter].
struct WorkItem {
    std::string action;   // create | execute | deposit | withdraw
    std::string user;
    std::string contract; // scenario-local contract name
    int64_t at = 0;
    int64_t jitter_secs = 0;

    std::string code;     // create: program name in the logic registry
    uint64_t creator = 0; // create: operator index hosting the creator enclave
    std::string move;     // execute
    uint64_t amount = 0;  // deposit
};

struct Scenario {
    int schema_version = 1;
    std::string name = "unnamed";
    uint64_t seed = 1;
    uint64_t operators = 4;
    uint64_t pool_size = 3;
    uint64_t exec_budget = 1u << 20;
    uint64_t install_budget = 1u << 20;
    uint64_t max_blocks = 3000;  // hard stop; a healthy run goes quiescent first
    ChainSettings chain;
    TimeoutSettings timeouts;
    std::vector<WorkItem> workload;
    std::map<uint64_t, PolicySpec> policies;  // operator index -> behaviour
    std::vector<RolePolicy> role_policies;    // pool slot -> behaviour
    // Byte strings that must never appear in any wire message. The runner
    // plants these inside contract moves so the trace scan has a target.
    std::vector<std::string> privacy_markers;

    uint64_t byzantine_count() const {
        uint64_t m = 0;
        for (const auto& [idx, p] : policies)
            if (p.kind != "honest") m++;
        return m + role_policies.size();
    }

    const PolicySpec& policy_of(uint64_t op) const {
        static const PolicySpec honest{};
        auto it = policies.find(op);
        return it == policies.end() ? honest : it->second;
    }

    TimeoutParams timeout_params() const {
        TimeoutParams t;
        t.tau = chain.tau_secs;
        t.alpha = chain.alpha_blocks;
        t.gamma = chain.gamma_blocks;
        t.t_exec = 0;  // simulated execution is instantaneous
        t.off_exec = timeouts.off_exec_secs;
        t.off_prop = timeouts.off_prop_secs;
        t.on_exec = timeouts.on_exec_blocks;
        t.on_prop = timeouts.on_prop_blocks;
        t.off_create = timeouts.off_create_secs;
        t.off_create_prop = timeouts.off_create_prop_secs;
        t.on_create = timeouts.on_create_blocks;
        t.on_create_prop = timeouts.on_create_prop_blocks;
        return t;
    }

    void validate() const {
        if (schema_version != 1) throw ConfigInvalid("unsupported schema_version");
        if (operators == 0) throw ConfigInvalid("need at least one operator");
        if (pool_size == 0 || pool_size > operators)
            throw ConfigInvalid("pool size must be in [1, operators]");
        if (chain.tau_secs == 0) throw ConfigInvalid("block interval must be positive");
        if (chain.tau_variance_secs >= chain.tau_secs)
            throw ConfigInvalid("block interval jitter must stay below the interval");
        if (chain.gamma_blocks == 0) throw ConfigInvalid("confirmation depth must be positive");
        // Registration evidence is anchored gamma blocks behind the tip and
        // takes one more block to land.
        if (chain.slack_on_blocks < chain.gamma_blocks + 2)
            throw ConfigInvalid("slack_on_blocks too small for the confirmation depth");
        if (chain.rate_min_blocks == 0) throw ConfigInvalid("rate quota must be positive");
        int64_t worst_interval = int64_t(chain.tau_secs + chain.tau_variance_secs);
        if (int64_t(chain.rate_min_blocks) * worst_interval > chain.rate_window_secs)
            throw ConfigInvalid("honest block production cannot meet the rate quota");
        if (chain.stale_slack_secs < worst_interval || chain.slack_off_secs < worst_interval)
            throw ConfigInvalid("freshness slack below one block interval");
        timeout_params().validate();

        std::set<std::string> created;
        for (const auto& w : workload) {
            if (w.user.empty()) throw ConfigInvalid("workload item without a user");
            if (w.jitter_secs < 0 || w.at < 0) throw ConfigInvalid("workload times must be >= 0");
            if (w.action == "create") {
                if (w.contract.empty()) throw ConfigInvalid("create without a contract name");
                if (created.count(w.contract))
                    throw ConfigInvalid("duplicate contract name: " + w.contract);
                if (!find_logic(w.code)) throw ConfigInvalid("unknown program: " + w.code);
                if (w.creator >= operators) throw ConfigInvalid("creator operator out of range");
                created.insert(w.contract);
            } else if (w.action == "execute") {
                if (!created.count(w.contract))
                    throw ConfigInvalid("execute against unknown contract: " + w.contract);
                if (w.move.empty()) throw ConfigInvalid("execute without a move");
            } else if (w.action == "deposit") {
                if (!created.count(w.contract))
                    throw ConfigInvalid("deposit into unknown contract: " + w.contract);
                if (w.amount == 0) throw ConfigInvalid("deposit of zero coins");
            } else if (w.action == "withdraw") {
                if (!created.count(w.contract))
                    throw ConfigInvalid("withdraw from unknown contract: " + w.contract);
            } else {
                throw ConfigInvalid("unknown workload action: " + w.action);
            }
        }
        auto check_policy = [](const PolicySpec& p) {
            if (!known_policies().count(p.kind))
                throw ConfigInvalid("unknown policy kind: " + p.kind);
            if (p.kind == "delay" && p.delay_secs <= 0)
                throw ConfigInvalid("delay policy needs delay_secs > 0");
            if (p.kind == "sidechain" && p.forge_interval_secs <= 0)
                throw ConfigInvalid("sidechain policy needs forge_interval_secs > 0");
        };
        for (const auto& [idx, p] : policies) {
            if (idx >= operators) throw ConfigInvalid("policy for operator out of range");
            check_policy(p);
        }
        for (const auto& rp : role_policies) {
            if (!created.count(rp.contract))
                throw ConfigInvalid("role policy for unknown contract: " + rp.contract);
            if (rp.pool_index >= pool_size)
                throw ConfigInvalid("role policy pool index out of range");
            if (rp.policy.kind == "honest")
                throw ConfigInvalid("role policy must name a misbehaviour");
            check_policy(rp.policy);
        }
    }

    static Json policy_to_json(const PolicySpec& p) {
        Json q;
        q["kind"] = p.kind;
        if (p.kind == "delay" || p.kind == "replay") q["delay_secs"] = p.delay_secs;
        if (p.kind == "drop_offchain") q["drop_kinds"] = p.drop_kinds;
        if (p.kind == "partial_propagation") q["drop_first"] = p.drop_first;
        if (p.kind == "withhold_blocks" || p.kind == "sidechain")
            q["switch_after_secs"] = p.switch_after_secs;
        if (p.kind == "sidechain") q["forge_interval_secs"] = p.forge_interval_secs;
        return q;
    }

    static PolicySpec policy_from_json(const Json& q) {
        PolicySpec p;
        p.kind = q.value("kind", std::string("honest"));
        p.delay_secs = q.value("delay_secs", p.delay_secs);
        p.drop_kinds = q.value("drop_kinds", p.drop_kinds);
        p.drop_first = q.value("drop_first", p.drop_first);
        p.switch_after_secs = q.value("switch_after_secs", p.switch_after_secs);
        p.forge_interval_secs = q.value("forge_interval_secs", p.forge_interval_secs);
        return p;
    }

    Json to_json() const {
        Json j;
        j["schema_version"] = schema_version;
        j["name"] = name;
        j["seed"] = seed;
        j["operators"] = operators;
        j["pool_size"] = pool_size;
        j["exec_budget"] = exec_budget;
        j["install_budget"] = install_budget;
        j["max_blocks"] = max_blocks;
        j["chain"] = {{"tau_secs", chain.tau_secs},
                      {"tau_variance_secs", chain.tau_variance_secs},
                      {"alpha_blocks", chain.alpha_blocks},
                      {"gamma_blocks", chain.gamma_blocks},
                      {"rate_min_blocks", chain.rate_min_blocks},
                      {"rate_window_secs", chain.rate_window_secs},
                      {"stale_slack_secs", chain.stale_slack_secs},
                      {"slack_off_secs", chain.slack_off_secs},
                      {"slack_on_blocks", chain.slack_on_blocks}};
        j["timeouts"] = {{"off_exec_secs", timeouts.off_exec_secs},
                         {"off_prop_secs", timeouts.off_prop_secs},
                         {"on_exec_blocks", timeouts.on_exec_blocks},
                         {"on_prop_blocks", timeouts.on_prop_blocks},
                         {"off_create_secs", timeouts.off_create_secs},
                         {"off_create_prop_secs", timeouts.off_create_prop_secs},
                         {"on_create_blocks", timeouts.on_create_blocks},
                         {"on_create_prop_blocks", timeouts.on_create_prop_blocks},
                         {"dynamic", timeouts.dynamic},
                         {"ext_challenge_blocks", timeouts.ext_challenge_blocks},
                         {"ext_kick_blocks", timeouts.ext_kick_blocks}};
        j["workload"] = Json::array();
        for (const auto& w : workload) {
            Json i;
            i["action"] = w.action;
            i["user"] = w.user;
            i["contract"] = w.contract;
            i["at"] = w.at;
            if (w.jitter_secs) i["jitter_secs"] = w.jitter_secs;
            if (w.action == "create") {
                i["code"] = w.code;
                i["creator"] = w.creator;
            }
            if (w.action == "execute") i["move"] = w.move;
            if (w.action == "deposit") i["amount"] = w.amount;
            j["workload"].push_back(i);
        }
        j["policies"] = Json::object();
        for (const auto& [idx, p] : policies)
            j["policies"][std::to_string(idx)] = policy_to_json(p);
        j["role_policies"] = Json::array();
        for (const auto& rp : role_policies) {
            Json q = policy_to_json(rp.policy);
            q["contract"] = rp.contract;
            q["pool_index"] = rp.pool_index;
            j["role_policies"].push_back(q);
        }
        j["privacy_markers"] = privacy_markers;
        return j;
    }

    static Scenario from_json(const Json& j) {
        if (!j.is_object()) throw ConfigInvalid("scenario must be a JSON object");
        Scenario s;
        s.schema_version = j.value("schema_version", 1);
        s.name = j.value("name", std::string("unnamed"));
        s.seed = j.value("seed", uint64_t(1));
        s.operators = j.value("operators", uint64_t(4));
        s.pool_size = j.value("pool_size", uint64_t(3));
        s.exec_budget = j.value("exec_budget", uint64_t(1u << 20));
        s.install_budget = j.value("install_budget", uint64_t(1u << 20));
        s.max_blocks = j.value("max_blocks", uint64_t(3000));
        if (j.count("chain")) {
            const Json& c = j.at("chain");
            s.chain.tau_secs = c.value("tau_secs", s.chain.tau_secs);
            s.chain.tau_variance_secs = c.value("tau_variance_secs", s.chain.tau_variance_secs);
            s.chain.alpha_blocks = c.value("alpha_blocks", s.chain.alpha_blocks);
            s.chain.gamma_blocks = c.value("gamma_blocks", s.chain.gamma_blocks);
            s.chain.rate_min_blocks = c.value("rate_min_blocks", s.chain.rate_min_blocks);
            s.chain.rate_window_secs = c.value("rate_window_secs", s.chain.rate_window_secs);
            s.chain.stale_slack_secs = c.value("stale_slack_secs", s.chain.stale_slack_secs);
            s.chain.slack_off_secs = c.value("slack_off_secs", s.chain.slack_off_secs);
            s.chain.slack_on_blocks = c.value("slack_on_blocks", s.chain.slack_on_blocks);
        }
        if (j.count("timeouts")) {
            const Json& t = j.at("timeouts");
            s.timeouts.off_exec_secs = t.value("off_exec_secs", s.timeouts.off_exec_secs);
            s.timeouts.off_prop_secs = t.value("off_prop_secs", s.timeouts.off_prop_secs);
            s.timeouts.on_exec_blocks = t.value("on_exec_blocks", s.timeouts.on_exec_blocks);
            s.timeouts.on_prop_blocks = t.value("on_prop_blocks", s.timeouts.on_prop_blocks);
            s.timeouts.off_create_secs = t.value("off_create_secs", s.timeouts.off_create_secs);
            s.timeouts.off_create_prop_secs =
                t.value("off_create_prop_secs", s.timeouts.off_create_prop_secs);
            s.timeouts.on_create_blocks = t.value("on_create_blocks", s.timeouts.on_create_blocks);
            s.timeouts.on_create_prop_blocks =
                t.value("on_create_prop_blocks", s.timeouts.on_create_prop_blocks);
            s.timeouts.dynamic = t.value("dynamic", s.timeouts.dynamic);
            s.timeouts.ext_challenge_blocks =
                t.value("ext_challenge_blocks", s.timeouts.ext_challenge_blocks);
            s.timeouts.ext_kick_blocks = t.value("ext_kick_blocks", s.timeouts.ext_kick_blocks);
        }
        for (const Json& i : j.value("workload", Json::array())) {
            WorkItem w;
            w.action = i.value("action", std::string());
            w.user = i.value("user", std::string());
            w.contract = i.value("contract", std::string());
            w.at = i.value("at", int64_t(0));
            w.jitter_secs = i.value("jitter_secs", int64_t(0));
            w.code = i.value("code", std::string());
            w.creator = i.value("creator", uint64_t(0));
            w.move = i.value("move", std::string());
            w.amount = i.value("amount", uint64_t(0));
            s.workload.push_back(std::move(w));
        }
        if (j.count("policies")) {
            for (const auto& [key, q] : j.at("policies").items()) {
                uint64_t idx = 0;
                try {
                    idx = std::stoull(key);
                } catch (const std::exception&) {
                    throw ConfigInvalid("policy key is not an operator index: " + key);
                }
                s.policies[idx] = policy_from_json(q);
            }
        }
        for (const Json& q : j.value("role_policies", Json::array())) {
            RolePolicy rp;
            rp.contract = q.value("contract", std::string());
            rp.pool_index = q.value("pool_index", uint64_t(0));
            rp.policy = policy_from_json(q);
            s.role_policies.push_back(std::move(rp));
        }
        s.privacy_markers =
            j.value("privacy_markers", std::vector<std::string>());
        return s;
    }

    static Scenario loads(const std::string& text) {
        Json j;
        try {
            j = Json::parse(text);
        } catch (const Json::exception& e) {
            throw ConfigInvalid(std::string("scenario is not valid JSON: ") + e.what());
        }
        Scenario s = from_json(j);
        s.validate();
        return s;
    }

    static Scenario load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigInvalid("cannot open scenario file: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return loads(buf.str());
    }
};

}  // namespace pose
