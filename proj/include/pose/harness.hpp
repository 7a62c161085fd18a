#pragma once

// Discrete-event simulator for the whole protocol: one chain, n operators
// each hosting one enclave, and a timed user workload. Events are totally
// ordered by (time, insertion sequence) and all randomness comes from the
// scenario seed, so a scenario replays to a byte-identical trace.
//
// Misbehaviour is strictly an operator-level affair. A policy can drop,
// delay, or duplicate the operator's own messages and can starve or fake
// its enclave's block feed, but the enclave always runs the real program
// and no policy can forge a signature or open another party's envelope.

#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pose/chain.hpp"
#include "pose/enclave.hpp"
#include "pose/scenario.hpp"
#include "pose/trace.hpp"

namespace pose {

struct SimResult {
    std::string trace_text;
    uint64_t blocks = 0;
    bool quiescent = false;  // false when the hard block cap cut the run short
};

// The enclave program every simulated TEE runs; registration quotes bind to
// its digest.
inline Digest sim_program() { return sha256(str_bytes("pose.sim.program")); }

// Shared by the simulator and by anything replaying its trace: both sides
// must agree on these configs bit for bit or the digests diverge.
inline ManagerConfig manager_config_for(const Scenario& sc, const Digest& program) {
    ManagerConfig c;
    c.expected_program = program;
    c.slack_on_blocks = sc.chain.slack_on_blocks;
    c.on_exec_blocks = sc.timeouts.on_exec_blocks;
    c.on_prop_blocks = sc.timeouts.on_prop_blocks;
    c.on_create_blocks = sc.timeouts.on_create_blocks;
    c.on_create_prop_blocks = sc.timeouts.on_create_prop_blocks;
    c.dynamic_timeouts = sc.timeouts.dynamic;
    c.ext_challenge_blocks = sc.timeouts.ext_challenge_blocks;
    c.ext_kick_blocks = sc.timeouts.ext_kick_blocks;
    return c;
}
inline EnclaveConfig enclave_config_for(const Scenario& sc) {
    EnclaveConfig e;
    e.gamma = sc.chain.gamma_blocks;
    e.stale_slack_secs = sc.chain.stale_slack_secs;
    e.rate_window_secs = sc.chain.rate_window_secs;
    e.rate_min_blocks = sc.chain.rate_min_blocks;
    e.slack_off_secs = sc.chain.slack_off_secs;
    e.exec_budget = sc.exec_budget;
    e.install_budget = sc.install_budget;
    e.pool_size_s = sc.pool_size;
    return e;
}

class Sim {
  public:
    // Party identities are derived from a fixed seed, not the scenario
    // seed: pool sampling then picks the same members for every seed of a
    // scenario, which keeps role-bound policies meaningful across sweeps.
    // The scenario seed drives timing jitter and workload jitter only.
    static constexpr uint64_t kCtxSeed = 1000003;
    static constexpr int64_t kGenesisTime = 1'000'000;

    explicit Sim(Scenario sc)
        : sc_(std::move(sc)),
          program_(sim_program()),
          mcfg_(manager_config_for(sc_, program_)),
          ecfg_(enclave_config_for(sc_)),
          ctx_(kCtxSeed),
          chain_({sc_.chain.gamma_blocks, kGenesisTime}, mcfg_, &ctx_),
          rng_(sc_.seed) {
        sc_.validate();
    }

    SimResult run() {
        bootstrap();
        dispatch_workload();
        schedule_mining();
        while (!q_.empty() && !stopping_) {
            auto it = q_.begin();
            now_ = it->first.at;
            auto ev = std::move(it->second);
            q_.erase(it);
            if (ev.counts_busy) busy_events_--;
            ev.fn();
        }
        finals();
        return SimResult{tw_.text(), chain_.height(), !cap_hit_};
    }

  private:
    // ---- event queue ----

    struct EvKey {
        int64_t at = 0;
        uint64_t seq = 0;
        auto operator<=>(const EvKey&) const = default;
    };
    struct Ev {
        std::function<void()> fn;
        bool counts_busy = false;
    };

    void schedule(int64_t at, bool counts_busy, std::function<void()> fn) {
        if (at < now_) at = now_;
        q_.emplace(EvKey{at, evseq_++}, Ev{std::move(fn), counts_busy});
        if (counts_busy) busy_events_++;
    }

    // ---- trace ----

    void trace(const char* kind, Json fields = Json::object()) {
        fields["t"] = now_;
        tw_.emit(kind, std::move(fields));
    }

    // ---- parties ----

    struct PendingReq {
        Signed<ExecuteMsg> req;
        bool via_onchain = false;
        EnclaveErr last_err = EnclaveErr::None;
    };
    struct ExecRound {
        Digest h{};
        Signed<UpdateMsg> update;
        std::map<PartyId, Signed<ConfirmExecMsg>> confirms;
        PartyId user;
        bool via_onchain = false;
        bool escalated = false;
    };
    struct CreationRound {
        Signed<PoolInitMsg> init;
        std::map<PartyId, Signed<ConfirmCreateMsg>> confirms;
        bool escalated = false;
        bool statement_done = false;
    };
    struct OperatorAgent {
        size_t idx = 0;
        PartyId party;  // operator key; signs and sends transactions
        EnclaveRuntime* enc = nullptr;
        PolicySpec pol;
        int64_t policy_since = 0;
        std::map<ContractId, std::deque<PendingReq>> queue;  // FIFO per contract
        std::map<ContractId, ExecRound> rounds;
        std::map<ContractId, CreateRequestMsg> cqueue;
        std::map<ContractId, CreationRound> crounds;
        std::map<ContractId, Signed<UpdateMsg>> pending_adopt;
        std::map<ContractId, Signed<PoolInitMsg>> pending_install;
        // On-chain challenges awaiting this operator's response, keyed by
        // contract; the value remembers the challenge block.
        std::map<ContractId, std::pair<uint64_t, Signed<UpdateMsg>>> watch_duty;
        std::map<ContractId, std::pair<uint64_t, Signed<PoolInitMsg>>> pool_duty;
        std::set<std::pair<ContractId, uint64_t>> responded;
        std::set<std::pair<ContractId, uint64_t>> finalized;  // watchdog challenges closed out
        std::optional<SidechainForger> forger;
        uint64_t forged = 0;
        bool feed_frozen = false;
    };

    struct UserExec {
        std::string contract;
        ContractId cid = 0;
        Signed<ExecuteMsg> req;
        Digest h{};
        SymKey rkey{};
        int64_t issued_at = 0;
        int64_t last_sent = 0;
        uint64_t resends = 0;
        bool done = false;
        bool crashed = false;
        std::set<uint64_t> finalized;  // timeout deadlines already acted on
    };
    struct PendingCreate {
        std::string contract;
        Bytes code;
        Digest code_hash{};
        ContractId cid = 0;
        bool announced = false;
        bool settled = false;
    };
    struct UserAgent {
        std::string name;
        PartyId party;
        uint64_t next_nonce = 1;
        std::vector<UserExec> execs;
        std::map<Digest, size_t> by_h;
        std::vector<PendingCreate> creates;
        std::map<ContractId, Signed<PayoutMsg>> payout_held;
    };

    struct ContractDir {
        std::string name;
        std::optional<ContractId> cid;
        size_t creator_op = 0;
        Bytes code;
        bool ready = false;
        bool dead = false;
        bool roles_bound = false;
        std::vector<RolePolicy> pending_roles;
    };

    std::string op_label(size_t i) const { return "op" + std::to_string(i); }

    const PolicySpec& effective_policy(const OperatorAgent& a) const {
        static const PolicySpec honest{};
        return now_ >= epoch_ ? a.pol : honest;
    }

    static bool drops_offchain(const PolicySpec& p, const std::string& what) {
        if (p.kind == "silent" || p.kind == "respond_onchain_only") return true;
        if (p.kind == "drop_offchain")
            return p.drop_kinds.empty() ||
                   std::find(p.drop_kinds.begin(), p.drop_kinds.end(), what) !=
                       p.drop_kinds.end();
        return false;
    }

    // ---- off-chain messages ----

    struct OffMsg {
        std::string what;
        ContractId cid = 0;
        PartyId from;
        Bytes wire;
        std::optional<Signed<ExecuteMsg>> execute;
        std::optional<Signed<UpdateMsg>> update;
        std::optional<Signed<ConfirmExecMsg>> confirm;
        std::optional<CreateRequestMsg> create_req;
        std::optional<Signed<PoolInitMsg>> pool_init;
        std::optional<Signed<ConfirmCreateMsg>> confirm_create;
    };

    void send_to_op(std::optional<size_t> from_op, size_t to_op, OffMsg m) {
        trace("send", {{"from", m.from.str()},
                       {"to", op_label(to_op)},
                       {"msg", m.what},
                       {"cid", m.cid},
                       {"bytes", to_hex(m.wire)}});
        int64_t delay = 0;
        if (from_op) {
            const PolicySpec& p = effective_policy(ops_[*from_op]);
            if (drops_offchain(p, m.what)) {
                trace("drop", {{"by", op_label(*from_op)}, {"side", "out"},
                               {"msg", m.what}, {"cid", m.cid}});
                return;
            }
            if (p.kind == "delay") delay += p.delay_secs;
        }
        const PolicySpec& q = effective_policy(ops_[to_op]);
        if (drops_offchain(q, m.what)) {
            trace("drop", {{"by", op_label(to_op)}, {"side", "in"},
                           {"msg", m.what}, {"cid", m.cid}});
            return;
        }
        if (q.kind == "delay") delay += q.delay_secs;
        if (delay > 0)
            trace("delay", {{"to", op_label(to_op)}, {"msg", m.what},
                            {"cid", m.cid}, {"until", now_ + delay}});
        OffMsg copy = m;
        schedule(now_ + delay, true,
                 [this, to_op, copy]() { op_receive(to_op, copy, false); });
        if (q.kind == "replay") {
            int64_t gap = q.delay_secs > 0 ? q.delay_secs : 30;
            schedule(now_ + delay + gap, true,
                     [this, to_op, m]() { op_receive(to_op, m, true); });
        }
    }

    // ---- transactions ----

    void submit_tx(RelevantTx tx, const std::string& by, const char* kind,
                   std::optional<ContractId> cid) {
        Digest txd = sha256(tx.data);
        mempool_txds_.push_back(txd);
        Json j{{"by", by}, {"tx", kind}, {"txd", hex(txd)}};
        if (cid) j["cid"] = *cid;
        trace("submit", j);
        chain_.submit(std::move(tx));
    }

    template <typename M>
    RelevantTx tx_presigned(CallKind kind, Signed<M> msg, const PartyId& sender,
                            uint64_t value = 0) {
        RelevantTx tx;
        tx.data = encode_call(kind, std::move(msg));
        tx.sender = sender;
        tx.value = value;
        return tx;
    }
    template <typename M>
    RelevantTx tx_plain(CallKind kind, const PartyId& sender, M msg) {
        RelevantTx tx;
        tx.data = encode_call(kind, std::move(msg));
        tx.sender = sender;
        return tx;
    }

    // ---- bootstrap ----

    void bootstrap() {
        now_ = kGenesisTime;
        trace("scenario", {{"scenario", sc_.to_json()}});

        Json roster_ops = Json::array();
        for (uint64_t i = 0; i < sc_.operators; i++) {
            OperatorAgent a;
            a.idx = i;
            std::string ol = "op" + std::to_string(i);
            std::string el = "enclave" + std::to_string(i);
            a.party = ctx_.new_party(PartyKind::Operator, ol);
            PartyId ep = ctx_.new_party(PartyKind::Enclave, el);
            enclave_store_.emplace_back(ep, &ctx_, mcfg_, ecfg_,
                                        sha256(str_bytes("root." + el)));
            a.enc = &enclave_store_.back();
            a.pol = sc_.policy_of(i);
            owner_[ep] = i;
            roster_ops.push_back({{"op", ol},
                                  {"party", a.party.str()},
                                  {"party_label", ol},
                                  {"enclave", ep.str()},
                                  {"enclave_label", el},
                                  {"enclave_id", to_hex(std::span<const uint8_t>(
                                                     ep.id.data(), ep.id.size()))}});
            ops_.push_back(std::move(a));
        }
        Json roster_users = Json::array();
        for (const auto& w : sc_.workload) {
            if (users_.count(w.user)) continue;
            UserAgent u;
            u.name = w.user;
            std::string label = "user." + w.user;
            u.party = ctx_.new_party(PartyKind::User, label);
            user_names_[u.party] = w.user;
            roster_users.push_back(
                {{"name", w.user},
                 {"label", label},
                 {"party", u.party.str()},
                 {"id", to_hex(std::span<const uint8_t>(u.party.id.data(),
                                                        u.party.id.size()))}});
            users_.emplace(w.user, std::move(u));
        }
        for (const auto& w : sc_.workload) {
            if (w.action != "create") continue;
            ContractDir d;
            d.name = w.contract;
            d.creator_op = w.creator;
            d.code = str_bytes(w.code);
            for (const auto& rp : sc_.role_policies)
                if (rp.contract == w.contract) d.pending_roles.push_back(rp);
            dir_.emplace(w.contract, std::move(d));
        }
        trace("roster", {{"ctx_seed", kCtxSeed},
                         {"operators", roster_ops},
                         {"users", roster_users}});

        auto mine_one = [this]() {
            now_ += int64_t(sc_.chain.tau_secs);
            trace_block(chain_.mine_block(now_));
            mempool_txds_.clear();
        };
        for (uint64_t k = 0; k < sc_.chain.gamma_blocks; k++) mine_one();
        for (auto& a : ops_) {
            auto r = a.enc->init_sync(feed_bootstrap(chain_), now_);
            trace("enclave", {{"op", op_label(a.idx)},
                              {"call", "init_sync"},
                              {"err", enclave_err_name(r.err)}});
            if (!r.ok()) throw std::logic_error("bootstrap sync failed");
            RegisterMsg reg;
            reg.enclave = a.enc->id();
            reg.quote = ctx_.quote(a.enc->id(), program_);
            reg.evidence = a.enc->evidence();
            submit_tx(tx_presigned(CallKind::Register, make_signed(ctx_, a.party, reg), a.party),
                      op_label(a.idx), "register", std::nullopt);
        }
        for (uint64_t k = 0; k < sc_.chain.gamma_blocks + 1; k++) {
            mine_one();
            for (auto& a : ops_) feed_honest(a);
        }
        for (auto& a : ops_)
            if (a.enc->mirror().tees.size() != sc_.operators)
                throw std::logic_error("bootstrap registration incomplete");
        epoch_ = now_;
        trace("epoch", {{"height", chain_.height()}});
    }

    void dispatch_workload() {
        for (const auto& item : sc_.workload) {
            int64_t jit = item.jitter_secs > 0
                              ? int64_t(rng_.below(uint64_t(item.jitter_secs) + 1))
                              : 0;
            schedule(epoch_ + item.at + jit, true,
                     [this, item]() { do_work(item, 0); });
        }
    }

    // ---- mining ----

    void schedule_mining() {
        int64_t v = int64_t(sc_.chain.tau_variance_secs);
        int64_t step = int64_t(sc_.chain.tau_secs);
        if (v > 0) step += int64_t(rng_.below(uint64_t(2 * v) + 1)) - v;
        if (step < 1) step = 1;
        schedule(now_ + step, false, [this]() { mine_step(); });
    }

    void mine_step() {
        if (stopping_) return;
        const Block& b = chain_.mine_block(now_);
        trace_block(b);
        mempool_txds_.clear();
        update_dirs();
        for (auto& a : ops_) feed_op(a.idx);
        for (auto& a : ops_) op_scan(a.idx, b);
        for (auto& a : ops_) op_on_block(a.idx);
        for (auto& [name, u] : users_) user_scan(name, b);
        for (auto& [name, u] : users_) user_on_block(name);

        if (chain_.height() >= sc_.max_blocks) {
            cap_hit_ = true;
            stopping_ = true;
            trace("cap", {{"height", chain_.height()}});
            return;
        }
        idle_blocks_ = busy() ? 0 : idle_blocks_ + 1;
        if (idle_blocks_ >= sc_.chain.gamma_blocks + 2) {
            stopping_ = true;
            return;
        }
        schedule_mining();
    }

    void trace_block(const Block& b) {
        Json txs = Json::array();
        size_t ai = 0;
        for (size_t k = 0; k < b.outcomes.size(); k++) {
            const ApplyOutcome& out = b.outcomes[k];
            Json e;
            e["txd"] = k < mempool_txds_.size() ? hex(mempool_txds_[k]) : std::string();
            e["kind"] = call_kind_name(out.kind);
            e["accepted"] = out.accepted;
            e["vcase"] = out.validate_case;
            if (!out.accepted) e["reason"] = reject_name(out.reason);
            if (out.cid) e["cid"] = *out.cid;
            if (out.accepted) {
                const RelevantTx& tx = b.txs[ai++];
                e["bytes"] = to_hex(std::span<const uint8_t>(tx.data));
                e["sender"] = tx.sender.str();
                if (tx.value) e["value"] = tx.value;
                if (out.deposit_amount) e["deposit"] = out.deposit_amount;
                if (!out.paid.empty()) {
                    e["payout_level"] = out.payout_level;
                    Json paid = Json::array();
                    for (const auto& w : out.paid)
                        paid.push_back(
                            {{"coins", w.coins},
                             {"payee", w.payee.str()},
                             {"payee_kind", int(w.payee.kind)},
                             {"payee_id", to_hex(std::span<const uint8_t>(
                                              w.payee.id.data(), w.payee.id.size()))}});
                    e["paid"] = paid;
                }
                if (!out.kicked.empty()) {
                    Json kk = Json::array();
                    for (const auto& p : out.kicked) kk.push_back(p.str());
                    e["kicked"] = kk;
                }
                if (out.registered) e["registered"] = out.registered->str();
            }
            txs.push_back(std::move(e));
        }
        trace("block", {{"height", b.header.number},
                        {"time", b.header.timestamp},
                        {"incr", hex(b.incr_after)},
                        {"mgr", hex(b.mgr_digest_after)},
                        {"state_root", hex(b.header.state_root)},
                        {"txs", txs}});
    }

    // ---- contract directory ----

    void update_dirs() {
        for (auto& [name, d] : dir_) {
            if (!d.cid) continue;
            const ManagerRecord* rec = chain_.manager().find(*d.cid);
            if (!rec) continue;
            if (rec->dead && !d.dead) {
                d.dead = true;
                trace("contract", {{"cid", *d.cid}, {"name", name}, {"event", "dead"}});
            } else if (!rec->creator && !rec->dead && !d.ready) {
                d.ready = true;
                Json pool = Json::array();
                for (const auto& p : rec->pool) pool.push_back(p.str());
                trace("contract",
                      {{"cid", *d.cid}, {"name", name}, {"event", "ready"}, {"pool", pool}});
                bind_roles(d, *rec);
            }
        }
    }

    void bind_roles(ContractDir& d, const ManagerRecord& rec) {
        if (d.roles_bound) return;
        d.roles_bound = true;
        for (const auto& rp : d.pending_roles) {
            if (rp.pool_index >= rec.pool.size()) continue;
            auto oit = owner_.find(rec.pool[rp.pool_index]);
            if (oit == owner_.end()) continue;
            OperatorAgent& a = ops_[oit->second];
            if (a.pol.kind != "honest") {
                trace("policy", {{"op", op_label(a.idx)},
                                 {"event", "bind_skipped"},
                                 {"contract", d.name}});
                continue;
            }
            a.pol = rp.policy;
            a.policy_since = now_;
            trace("policy", {{"op", op_label(a.idx)},
                             {"event", "bound"},
                             {"contract", d.name},
                             {"pool_index", rp.pool_index},
                             {"policy", rp.policy.kind}});
        }
    }

    // ---- enclave feeds ----

    void feed_honest(OperatorAgent& a) {
        if (a.enc->tip_height() >= chain_.height()) return;
        auto err = a.enc->ingest(feed_catchup(chain_, a.enc->tip_height(), a.enc->final_height()),
                                 now_);
        if (err != EnclaveErr::None)
            trace("enclave", {{"op", op_label(a.idx)},
                              {"call", "ingest"},
                              {"err", enclave_err_name(err)}});
    }

    void feed_op(size_t i) {
        OperatorAgent& a = ops_[i];
        const PolicySpec& pol = effective_policy(a);
        if (pol.kind == "withhold_blocks" || pol.kind == "sidechain") {
            int64_t switch_at =
                std::max(a.policy_since, epoch_) + pol.switch_after_secs;
            if (now_ >= switch_at) {
                if (pol.kind == "withhold_blocks") {
                    if (!a.feed_frozen) {
                        a.feed_frozen = true;
                        trace("policy", {{"op", op_label(i)}, {"event", "feed_frozen"}});
                    }
                    return;
                }
                if (!a.forger) {
                    a.forger.emplace(chain_, a.enc->tip_height());
                    trace("policy", {{"op", op_label(i)},
                                     {"event", "sidechain_started"},
                                     {"fork", a.enc->tip_height()}});
                    schedule(now_ + pol.forge_interval_secs, false,
                             [this, i]() { forge_step(i); });
                }
                return;
            }
        }
        feed_honest(a);
    }

    void forge_step(size_t i) {
        if (stopping_) return;
        OperatorAgent& a = ops_[i];
        if (!a.forger) return;
        BlockHeader h = a.forger->forge(now_, ++a.forged);
        ChainFeed f;
        f.headers = {h};
        auto err = a.enc->ingest(f, now_);
        trace("enclave", {{"op", op_label(i)},
                          {"call", "ingest_forged"},
                          {"height", h.number},
                          {"err", enclave_err_name(err)}});
        const PolicySpec& pol = effective_policy(a);
        schedule(now_ + std::max<int64_t>(1, pol.forge_interval_secs), false,
                 [this, i]() { forge_step(i); });
    }

    // ---- operator: block scanning and duties ----

    void op_scan(size_t i, const Block& b) {
        OperatorAgent& a = ops_[i];
        const PolicySpec& pol = effective_policy(a);
        const bool duty = policy_does_duty(pol);
        const uint64_t height = b.header.number;
        size_t ai = 0;
        for (const auto& out : b.outcomes) {
            const RelevantTx* tx = out.accepted ? &b.txs[ai++] : nullptr;
            if (!tx || !out.cid) continue;
            ContractId cid = *out.cid;
            switch (out.kind) {
                case CallKind::ChallengeExecutor: {
                    if (!duty) break;
                    const ManagerRecord* rec = chain_.manager().find(cid);
                    if (!rec || rec->pool.empty() || rec->pool.front() != a.enc->id()) break;
                    auto req = std::get<Signed<ExecuteMsg>>(decode_call(tx->data).body);
                    Digest h = req.digest();
                    auto rit = a.rounds.find(cid);
                    if (rit != a.rounds.end() && rit->second.h == h) {
                        rit->second.via_onchain = true;
                        break;
                    }
                    auto& dq = a.queue[cid];
                    bool found = false;
                    for (auto qit = dq.begin(); qit != dq.end(); ++qit) {
                        if (qit->req.digest() != h) continue;
                        qit->via_onchain = true;
                        if (qit != dq.begin()) {
                            PendingReq p = *qit;
                            dq.erase(qit);
                            dq.push_front(std::move(p));
                        }
                        found = true;
                        break;
                    }
                    if (!found) dq.push_front(PendingReq{req, true, EnclaveErr::None});
                    break;
                }
                case CallKind::ChallengeWatchdogs: {
                    if (!duty) break;
                    auto upd = std::get<Signed<UpdateMsg>>(decode_call(tx->data).body);
                    if (upd.signer == a.enc->id()) break;
                    const ManagerRecord* rec = chain_.manager().find(cid);
                    if (!rec || !rec->in_pool(a.enc->id())) break;
                    a.watch_duty[cid] = {height, std::move(upd)};
                    break;
                }
                case CallKind::WatchdogResponse: {
                    auto rit = a.rounds.find(cid);
                    if (rit == a.rounds.end()) break;
                    auto conf = std::get<Signed<ConfirmExecMsg>>(decode_call(tx->data).body);
                    if (conf.msg.h == rit->second.h) {
                        rit->second.confirms[conf.signer] = std::move(conf);
                    }
                    break;
                }
                case CallKind::ChallengeCreator: {
                    if (!duty) break;
                    const ManagerRecord* rec = chain_.manager().find(cid);
                    if (!rec || !rec->creator || *rec->creator != a.enc->id()) break;
                    if (!a.crounds.count(cid))
                        a.cqueue[cid] = std::get<CreateRequestMsg>(decode_call(tx->data).body);
                    break;
                }
                case CallKind::ChallengePool: {
                    if (!duty) break;
                    auto init = std::get<Signed<PoolInitMsg>>(decode_call(tx->data).body);
                    bool member = false;
                    for (const auto& p : init.msg.pool) member |= (p == a.enc->id());
                    if (member) a.pool_duty[cid] = {height, std::move(init)};
                    break;
                }
                case CallKind::PoolResponse: {
                    auto rit = a.crounds.find(cid);
                    if (rit == a.crounds.end()) break;
                    auto conf = std::get<Signed<ConfirmCreateMsg>>(decode_call(tx->data).body);
                    rit->second.confirms[conf.signer] = std::move(conf);
                    break;
                }
                default:
                    break;
            }
        }
    }

    void op_on_block(size_t i) {
        OperatorAgent& a = ops_[i];
        const ManagerState& mgr = chain_.manager();
        const uint64_t next_height = chain_.height() + 1;
        const bool duty = policy_does_duty(effective_policy(a));

        // Garbage-collect work this operator can no longer act on.
        for (auto it = a.rounds.begin(); it != a.rounds.end();) {
            const ManagerRecord* rec = mgr.find(it->first);
            if (!rec || rec->dead || rec->pool.empty() || rec->pool.front() != a.enc->id()) {
                trace("op", {{"op", op_label(i)}, {"event", "round_abandoned"},
                             {"cid", it->first}, {"h", hex(it->second.h)}});
                it = a.rounds.erase(it);
            } else {
                ++it;
            }
        }
        for (auto it = a.queue.begin(); it != a.queue.end();) {
            const ManagerRecord* rec = mgr.find(it->first);
            bool serving = rec && !rec->dead && !rec->pool.empty() &&
                           rec->pool.front() == a.enc->id();
            it = serving ? std::next(it) : a.queue.erase(it);
        }
        for (auto it = a.crounds.begin(); it != a.crounds.end();) {
            const ManagerRecord* rec = mgr.find(it->first);
            if (!rec || rec->dead || !rec->creator || *rec->creator != a.enc->id())
                it = a.crounds.erase(it);
            else
                ++it;
        }
        for (auto it = a.cqueue.begin(); it != a.cqueue.end();) {
            const ManagerRecord* rec = mgr.find(it->first);
            bool creating = rec && !rec->dead && rec->creator && *rec->creator == a.enc->id();
            it = creating ? std::next(it) : a.cqueue.erase(it);
        }
        for (auto it = a.pending_adopt.begin(); it != a.pending_adopt.end();) {
            const ManagerRecord* rec = mgr.find(it->first);
            bool relevant = rec && !rec->dead && !rec->pool.empty() &&
                            rec->pool.front() == it->second.signer;
            it = relevant ? std::next(it) : a.pending_adopt.erase(it);
        }
        for (auto it = a.pending_install.begin(); it != a.pending_install.end();) {
            const ManagerRecord* rec = mgr.find(it->first);
            bool relevant = rec && !rec->dead && rec->creator;
            it = relevant ? std::next(it) : a.pending_install.erase(it);
        }
        for (auto it = a.watch_duty.begin(); it != a.watch_duty.end();) {
            const ManagerRecord* rec = mgr.find(it->first);
            bool live = rec && !rec->dead && rec->watch_chal.block &&
                        *rec->watch_chal.block == it->second.first;
            it = live ? std::next(it) : a.watch_duty.erase(it);
        }
        for (auto it = a.pool_duty.begin(); it != a.pool_duty.end();) {
            const ManagerRecord* rec = mgr.find(it->first);
            bool live = rec && !rec->dead && rec->watch_chal.block &&
                        *rec->watch_chal.block == it->second.first;
            it = live ? std::next(it) : a.pool_duty.erase(it);
        }

        // Answer on-chain challenges.
        if (duty) {
            std::vector<ContractId> wkeys;
            for (const auto& [cid, _] : a.watch_duty) wkeys.push_back(cid);
            for (ContractId cid : wkeys) {
                auto [hgt, upd] = a.watch_duty.at(cid);
                if (a.responded.count({cid, hgt})) {
                    a.watch_duty.erase(cid);
                    continue;
                }
                auto r = a.enc->handle_update(upd);
                trace_adopt(i, cid, upd, r);
                if (r.ok()) {
                    a.responded.insert({cid, hgt});
                    a.watch_duty.erase(cid);
                    submit_tx(tx_presigned(CallKind::WatchdogResponse, *r.value, a.party),
                              op_label(i), "watchdog_response", cid);
                } else if (r.err != EnclaveErr::UnknownContract &&
                           r.err != EnclaveErr::NotExecutor) {
                    a.watch_duty.erase(cid);
                }
            }
            std::vector<ContractId> pkeys;
            for (const auto& [cid, _] : a.pool_duty) pkeys.push_back(cid);
            for (ContractId cid : pkeys) {
                auto [hgt, init] = a.pool_duty.at(cid);
                if (a.responded.count({cid, hgt})) {
                    a.pool_duty.erase(cid);
                    continue;
                }
                auto r = a.enc->handle_init(init);
                trace_install(i, cid, r);
                if (r.ok()) {
                    a.responded.insert({cid, hgt});
                    a.pool_duty.erase(cid);
                    submit_tx(tx_presigned(CallKind::PoolResponse, *r.value, a.party),
                              op_label(i), "pool_response", cid);
                } else if (r.err != EnclaveErr::NotSynced) {
                    a.pool_duty.erase(cid);
                }
            }
        }

        // Retry stashed off-chain work the mirror could not place yet.
        {
            std::vector<ContractId> keys;
            for (const auto& [cid, _] : a.pending_adopt) keys.push_back(cid);
            for (ContractId cid : keys) {
                Signed<UpdateMsg> upd = a.pending_adopt.at(cid);
                auto r = a.enc->handle_update(upd);
                if (r.ok()) {
                    trace_adopt(i, cid, upd, r);
                    a.pending_adopt.erase(cid);
                    send_confirm_exec(i, upd.signer, cid, *r.value);
                } else if (r.err != EnclaveErr::UnknownContract &&
                           r.err != EnclaveErr::NotExecutor) {
                    trace_adopt(i, cid, upd, r);
                    a.pending_adopt.erase(cid);
                }
            }
            keys.clear();
            for (const auto& [cid, _] : a.pending_install) keys.push_back(cid);
            for (ContractId cid : keys) {
                Signed<PoolInitMsg> init = a.pending_install.at(cid);
                auto r = a.enc->handle_init(init);
                if (r.ok() || r.err != EnclaveErr::NotSynced) {
                    trace_install(i, cid, r);
                    a.pending_install.erase(cid);
                    if (r.ok()) send_confirm_create(i, init.signer, cid, *r.value);
                }
            }
        }

        // Close out any watchdog or pool challenge this enclave is now
        // responsible for, once its response deadline has passed. Keyed on
        // chain state rather than local rounds: the round may have closed
        // off-chain in the meantime, and a successor executor inherits the
        // duty from the head it replaced.
        if (duty) {
            for (const auto& [cid, rec] : mgr.contracts) {
                if (rec.dead || !rec.watch_chal.block) continue;
                bool mine;
                uint64_t deadline;
                if (rec.creator) {
                    mine = *rec.creator == a.enc->id();
                    deadline = *rec.watch_chal.block + mcfg_.on_create_prop_blocks;
                } else {
                    mine = !rec.pool.empty() && rec.pool.front() == a.enc->id();
                    deadline = *rec.watch_chal.block + mcfg_.on_prop_blocks;
                }
                if (!mine || next_height < deadline) continue;
                if (!a.finalized.insert({cid, *rec.watch_chal.block}).second) continue;
                submit_tx(tx_plain(CallKind::FinalizeTimeout, a.party, FinalizeMsg{2, cid}),
                          op_label(i), "finalize_timeout", cid);
            }
        }

        // Progress creation rounds.
        {
            std::vector<ContractId> keys;
            for (const auto& [cid, _] : a.cqueue) keys.push_back(cid);
            for (ContractId cid : keys) try_create(i, cid);
            keys.clear();
            for (const auto& [cid, _] : a.crounds) keys.push_back(cid);
            for (ContractId cid : keys) try_close_creation(i, cid);
        }

        // Progress execution rounds.
        {
            std::vector<ContractId> keys;
            for (const auto& [cid, _] : a.rounds) keys.push_back(cid);
            for (ContractId cid : keys) try_close_round(i, cid);
            keys.clear();
            for (const auto& [cid, _] : a.queue) keys.push_back(cid);
            for (ContractId cid : keys) try_exec_queue(i, cid);
        }
    }

    // ---- operator: execution pipeline ----

    void trace_adopt(size_t i, ContractId cid, const Signed<UpdateMsg>& upd,
                     const EnclaveResult<Signed<ConfirmExecMsg>>& r) {
        Json j{{"op", op_label(i)}, {"call", "update_adopt"}, {"cid", cid},
               {"h", hex(upd.msg.h)}, {"upd", hex(sha256(upd.encoded()))}};
        if (r.ok())
            j["result"] = "confirm";
        else
            j["err"] = enclave_err_name(r.err);
        trace("enclave", j);
    }

    void trace_install(size_t i, ContractId cid,
                       const EnclaveResult<Signed<ConfirmCreateMsg>>& r) {
        Json j{{"op", op_label(i)}, {"call", "install"}, {"cid", cid}};
        if (r.ok()) {
            j["result"] = "confirm";
            j["failed"] = r.value->msg.failed;
        } else {
            j["err"] = enclave_err_name(r.err);
        }
        trace("enclave", j);
    }

    void send_confirm_exec(size_t i, const PartyId& to_enclave, ContractId cid,
                           const Signed<ConfirmExecMsg>& conf) {
        auto oit = owner_.find(to_enclave);
        if (oit == owner_.end()) return;
        OffMsg m;
        m.what = "confirm_exec";
        m.cid = cid;
        m.from = ops_[i].enc->id();
        m.confirm = conf;
        m.wire = conf.encoded();
        send_to_op(i, oit->second, std::move(m));
    }

    void send_confirm_create(size_t i, const PartyId& to_enclave, ContractId cid,
                             const Signed<ConfirmCreateMsg>& conf) {
        auto oit = owner_.find(to_enclave);
        if (oit == owner_.end()) return;
        OffMsg m;
        m.what = "confirm_create";
        m.cid = cid;
        m.from = ops_[i].enc->id();
        m.confirm_create = conf;
        m.wire = conf.encoded();
        send_to_op(i, oit->second, std::move(m));
    }

    void try_exec_queue(size_t i, ContractId cid) {
        OperatorAgent& a = ops_[i];
        auto qit = a.queue.find(cid);
        if (qit == a.queue.end()) return;
        auto& dq = qit->second;
        while (!dq.empty()) {
            if (a.rounds.count(cid)) break;
            PendingReq& front = dq.front();
            auto r = a.enc->handle_execute(front.req, now_);
            if (r.ok() && r->update) {
                ExecRound round;
                round.h = front.req.digest();
                round.update = *r->update;
                round.user = front.req.signer;
                round.via_onchain = front.via_onchain;
                const ContractInstance* inst = a.enc->instance(cid);
                trace("enclave",
                      {{"op", op_label(i)}, {"call", "execute"}, {"cid", cid},
                       {"h", hex(round.h)}, {"result", "update"},
                       {"upd", hex(sha256(round.update.encoded()))},
                       {"state", inst ? hex(sha256(inst->encoded())) : std::string()},
                       {"final_height", a.enc->final_height()}});
                dq.pop_front();
                Digest h = round.h;
                auto [rit, inserted] = a.rounds.emplace(cid, std::move(round));
                fan_out(i, cid, rit->second);
                // A partial propagator with a switch configured models the
                // operator crashing right after the incomplete fan-out.
                const PolicySpec& pol = effective_policy(a);
                if (pol.kind == "partial_propagation" && pol.switch_after_secs > 0) {
                    a.pol.kind = "silent";
                    trace("policy", {{"op", op_label(i)}, {"event", "switched"},
                                     {"policy", "silent"}});
                }
                schedule(now_ + int64_t(sc_.timeouts.off_prop_secs), false,
                         [this, i, cid, h]() { escalate_round(i, cid, h); });
                try_close_round(i, cid);  // a pool of one closes immediately
                continue;
            }
            if (r.ok()) {
                trace("enclave",
                      {{"op", op_label(i)}, {"call", "execute"}, {"cid", cid},
                       {"h", hex(front.req.digest())}, {"result", "replay"},
                       {"okd", hex(sha256(r->ok->encoded()))}});
                PendingReq done = front;
                dq.pop_front();
                emit_ok(i, cid, done.req.signer, *r->ok, r->payout, done.via_onchain);
                continue;
            }
            if (front.last_err != r.err) {
                front.last_err = r.err;
                trace("enclave", {{"op", op_label(i)}, {"call", "execute"}, {"cid", cid},
                                  {"h", hex(front.req.digest())},
                                  {"err", enclave_err_name(r.err)}});
            }
            if (r.err == EnclaveErr::PendingConfirm || r.err == EnclaveErr::Desynced ||
                r.err == EnclaveErr::NotSynced)
                break;
            if (r.err == EnclaveErr::NotExecutor || r.err == EnclaveErr::UnknownContract) {
                const ManagerRecord* rec = chain_.manager().find(cid);
                bool serving = rec && !rec->dead && !rec->pool.empty() &&
                               rec->pool.front() == a.enc->id();
                if (serving) break;  // mirror is still catching up
                dq.pop_front();
                continue;
            }
            dq.pop_front();  // malformed request; nothing to retry
        }
        if (dq.empty()) a.queue.erase(qit);
    }

    void fan_out(size_t i, ContractId cid, const ExecRound& round) {
        OperatorAgent& a = ops_[i];
        const ManagerRecord* rec = a.enc->mirror().find(cid);
        if (!rec) return;
        std::vector<PartyId> targets;
        for (const auto& p : rec->pool)
            if (p != a.enc->id()) targets.push_back(p);
        const PolicySpec& pol = effective_policy(a);
        size_t skip = pol.kind == "partial_propagation"
                          ? std::min<size_t>(pol.drop_first, targets.size())
                          : 0;
        for (size_t k = 0; k < targets.size(); k++) {
            auto oit = owner_.find(targets[k]);
            if (oit == owner_.end()) continue;
            if (k < skip) {
                trace("drop", {{"by", op_label(i)}, {"side", "out"}, {"msg", "update"},
                               {"cid", cid}, {"to", op_label(oit->second)},
                               {"policy", "partial_propagation"}});
                continue;
            }
            OffMsg m;
            m.what = "update";
            m.cid = cid;
            m.from = a.enc->id();
            m.update = round.update;
            m.wire = round.update.encoded();
            send_to_op(i, oit->second, std::move(m));
        }
    }

    void escalate_round(size_t i, ContractId cid, const Digest& h) {
        if (stopping_) return;
        OperatorAgent& a = ops_[i];
        auto rit = a.rounds.find(cid);
        if (rit == a.rounds.end() || rit->second.h != h || rit->second.escalated) return;
        if (!policy_does_duty(effective_policy(a))) return;
        rit->second.escalated = true;
        trace("timer", {{"op", op_label(i)}, {"what", "replication_deadline"},
                        {"cid", cid}, {"h", hex(h)}});
        submit_tx(tx_presigned(CallKind::ChallengeWatchdogs, rit->second.update, a.party),
                  op_label(i), "challenge_watchdogs", cid);
    }

    void try_close_round(size_t i, ContractId cid) {
        OperatorAgent& a = ops_[i];
        auto rit = a.rounds.find(cid);
        if (rit == a.rounds.end()) return;
        ExecRound& round = rit->second;
        std::vector<Signed<ConfirmExecMsg>> confirms;
        for (const auto& [p, c] : round.confirms) confirms.push_back(c);
        auto r = a.enc->handle_confirms(cid, confirms, now_);
        if (!r.ok()) return;
        const ManagerRecord* rec = chain_.manager().find(cid);
        Json pool = Json::array();
        if (rec)
            for (const auto& p : rec->pool) pool.push_back(p.str());
        Json confs = Json::array();
        for (const auto& [p, c] : round.confirms) confs.push_back(p.str());
        trace("enclave", {{"op", op_label(i)},
                          {"call", "confirms"},
                          {"cid", cid},
                          {"h", hex(round.h)},
                          {"result", "ok"},
                          {"confirmers", confs},
                          {"pool", pool},
                          {"okd", hex(sha256(r->ok.encoded()))},
                          {"payout", r->payout.has_value()},
                          {"final_height", a.enc->final_height()}});
        ExecRound done = std::move(round);
        a.rounds.erase(rit);
        emit_ok(i, cid, done.user, r->ok, r->payout, done.via_onchain);
        try_exec_queue(i, cid);
    }

    void emit_ok(size_t i, ContractId cid, const PartyId& user, const Signed<OkMsg>& ok,
                 const std::optional<Signed<PayoutMsg>>& payout, bool via_onchain) {
        OperatorAgent& a = ops_[i];
        if (via_onchain) {
            submit_tx(tx_presigned(CallKind::ExecutorResponse, ok, a.party),
                      op_label(i), "executor_response", cid);
            if (payout)
                submit_tx(tx_presigned(CallKind::Payout, *payout, a.party),
                          op_label(i), "payout", cid);
        }
        const PolicySpec& pol = effective_policy(a);
        const bool drop = drops_offchain(pol, "ok");
        const int64_t d = pol.kind == "delay" ? pol.delay_secs : 0;

        auto nit = user_names_.find(user);
        if (nit != user_names_.end()) {
            const std::string uname = nit->second;
            trace("send", {{"from", op_label(i)}, {"to", uname}, {"msg", "ok"},
                           {"cid", cid}, {"h", hex(ok.msg.h)},
                           {"bytes", to_hex(ok.encoded())}});
            if (drop) {
                trace("drop",
                      {{"by", op_label(i)}, {"side", "out"}, {"msg", "ok"}, {"cid", cid}});
            } else {
                Signed<OkMsg> okc = ok;
                schedule(now_ + d, true, [this, uname, cid, okc]() {
                    user_receive_ok(uname, cid, okc, "offchain");
                });
            }
        }
        // The withdrawal bundle goes to everyone it pays, not to the caller:
        // any of them may submit it.
        if (!payout) return;
        std::set<std::string> payees;
        for (const auto& w : payout->msg.entries) {
            auto pit = user_names_.find(w.payee);
            if (pit != user_names_.end()) payees.insert(pit->second);
        }
        for (const auto& uname : payees) {
            trace("send", {{"from", op_label(i)}, {"to", uname}, {"msg", "payout"},
                           {"cid", cid}, {"bytes", to_hex(payout->encoded())}});
            if (drop) {
                trace("drop", {{"by", op_label(i)}, {"side", "out"}, {"msg", "payout"},
                               {"cid", cid}});
                continue;
            }
            Signed<PayoutMsg> pc = *payout;
            schedule(now_ + d, true, [this, uname, cid, pc]() {
                user_receive_payout(uname, cid, pc);
            });
        }
    }

    // ---- operator: creation pipeline ----

    void try_create(size_t i, ContractId cid) {
        OperatorAgent& a = ops_[i];
        auto qit = a.cqueue.find(cid);
        if (qit == a.cqueue.end()) return;
        if (a.crounds.count(cid)) {
            a.cqueue.erase(qit);
            return;
        }
        auto r = a.enc->handle_create(qit->second, now_);
        if (!r.ok()) {
            if (r.err == EnclaveErr::Desynced || r.err == EnclaveErr::NotSynced) return;
            if (r.err == EnclaveErr::NotCreator || r.err == EnclaveErr::UnknownContract) {
                const ManagerRecord* rec = chain_.manager().find(cid);
                if (rec && !rec->dead && rec->creator && *rec->creator == a.enc->id())
                    return;  // mirror lag
            }
            trace("enclave", {{"op", op_label(i)}, {"call", "create"}, {"cid", cid},
                              {"err", enclave_err_name(r.err)}});
            a.cqueue.erase(qit);
            return;
        }
        Json pool = Json::array();
        for (const auto& p : r.value->msg.pool) pool.push_back(p.str());
        trace("enclave", {{"op", op_label(i)}, {"call", "create"}, {"cid", cid},
                          {"result", "pool_init"}, {"pool", pool}});
        a.cqueue.erase(qit);
        CreationRound cr;
        cr.init = *r.value;
        auto [rit, inserted] = a.crounds.emplace(cid, std::move(cr));
        for (const auto& p : rit->second.init.msg.pool) {
            if (p == a.enc->id()) {
                auto c = a.enc->handle_init(rit->second.init);
                trace_install(i, cid, c);
                if (c.ok()) rit->second.confirms[p] = *c.value;
                continue;
            }
            auto oit = owner_.find(p);
            if (oit == owner_.end()) continue;
            OffMsg m;
            m.what = "pool_init";
            m.cid = cid;
            m.from = a.enc->id();
            m.pool_init = rit->second.init;
            m.wire = rit->second.init.encoded();
            send_to_op(i, oit->second, std::move(m));
        }
        schedule(now_ + int64_t(sc_.timeouts.off_create_prop_secs), false,
                 [this, i, cid]() { escalate_creation(i, cid); });
        try_close_creation(i, cid);
    }

    void escalate_creation(size_t i, ContractId cid) {
        if (stopping_) return;
        OperatorAgent& a = ops_[i];
        auto rit = a.crounds.find(cid);
        if (rit == a.crounds.end() || rit->second.escalated || rit->second.statement_done)
            return;
        if (!policy_does_duty(effective_policy(a))) return;
        rit->second.escalated = true;
        trace("timer", {{"op", op_label(i)}, {"what", "creation_deadline"}, {"cid", cid}});
        submit_tx(tx_presigned(CallKind::ChallengePool, rit->second.init, a.party),
                  op_label(i), "challenge_pool", cid);
    }

    void try_close_creation(size_t i, ContractId cid) {
        OperatorAgent& a = ops_[i];
        auto rit = a.crounds.find(cid);
        if (rit == a.crounds.end() || rit->second.statement_done) return;
        std::vector<Signed<ConfirmCreateMsg>> confirms;
        for (const auto& [p, c] : rit->second.confirms) confirms.push_back(c);
        auto r = a.enc->handle_creation_confirms(cid, confirms);
        if (!r.ok()) {
            if (r.err == EnclaveErr::NoPending) rit->second.statement_done = true;
            return;
        }
        rit->second.statement_done = true;
        if (r->statement) {
            Json pool = Json::array();
            for (const auto& p : r->statement->msg.pool) pool.push_back(p.str());
            trace("enclave", {{"op", op_label(i)}, {"call", "creation_confirms"},
                              {"cid", cid}, {"result", "statement"}, {"pool", pool}});
            submit_tx(tx_presigned(CallKind::FinalizeCreation, *r->statement, a.party),
                      op_label(i), "finalize_creation", cid);
        } else if (r->failed) {
            trace("enclave", {{"op", op_label(i)}, {"call", "creation_confirms"},
                              {"cid", cid}, {"result", "failed"}});
            submit_tx(tx_presigned(CallKind::CreationFailed, *r->failed, a.party),
                      op_label(i), "creation_failed", cid);
        }
    }

    // ---- operator: message intake ----

    void op_receive(size_t i, const OffMsg& m, bool replayed) {
        if (stopping_) return;
        OperatorAgent& a = ops_[i];
        Json j{{"op", op_label(i)}, {"msg", m.what}, {"from", m.from.str()}, {"cid", m.cid}};
        if (replayed) j["replayed"] = true;
        trace("recv", j);
        if (m.what == "execute") {
            auto& dq = a.queue[m.cid];
            for (const auto& p : dq)
                if (p.req.digest() == m.execute->digest()) return;
            dq.push_back(PendingReq{*m.execute, false, EnclaveErr::None});
            try_exec_queue(i, m.cid);
        } else if (m.what == "update") {
            auto r = a.enc->handle_update(*m.update);
            trace_adopt(i, m.cid, *m.update, r);
            if (r.ok()) {
                send_confirm_exec(i, m.update->signer, m.cid, *r.value);
            } else if (r.err == EnclaveErr::UnknownContract ||
                       r.err == EnclaveErr::NotExecutor) {
                a.pending_adopt[m.cid] = *m.update;  // mirror lag; retry per block
            }
        } else if (m.what == "confirm_exec") {
            auto rit = a.rounds.find(m.cid);
            if (rit != a.rounds.end() && rit->second.h == m.confirm->msg.h) {
                rit->second.confirms[m.confirm->signer] = *m.confirm;
                try_close_round(i, m.cid);
            }
        } else if (m.what == "create_request") {
            if (!a.crounds.count(m.cid)) {
                a.cqueue[m.cid] = *m.create_req;
                try_create(i, m.cid);
            }
        } else if (m.what == "pool_init") {
            auto r = a.enc->handle_init(*m.pool_init);
            trace_install(i, m.cid, r);
            if (r.ok()) {
                send_confirm_create(i, m.pool_init->signer, m.cid, *r.value);
            } else if (r.err == EnclaveErr::NotSynced) {
                a.pending_install[m.cid] = *m.pool_init;
            }
        } else if (m.what == "confirm_create") {
            auto rit = a.crounds.find(m.cid);
            if (rit != a.crounds.end()) {
                rit->second.confirms[m.confirm_create->signer] = *m.confirm_create;
                try_close_creation(i, m.cid);
            }
        }
    }

    // ---- users ----

    void do_work(const WorkItem& item, int attempts) {
        if (stopping_) return;
        if (item.action == "create") {
            do_create(item);
            return;
        }
        ContractDir& d = dir_.at(item.contract);
        if (d.dead) {
            trace("user", {{"user", item.user}, {"event", "skipped_dead"},
                           {"contract", item.contract}, {"action", item.action}});
            return;
        }
        if (!d.cid || !d.ready) {
            if (attempts > 400) {
                trace("user", {{"user", item.user}, {"event", "skipped_stuck"},
                               {"contract", item.contract}, {"action", item.action}});
                return;
            }
            schedule(now_ + int64_t(sc_.chain.tau_secs), true,
                     [this, item, attempts]() { do_work(item, attempts + 1); });
            return;
        }
        if (item.action == "execute")
            do_exec(item);
        else if (item.action == "deposit")
            do_deposit(item);
        else if (item.action == "withdraw")
            do_withdraw(item, 0);
    }

    void do_create(const WorkItem& item) {
        UserAgent& u = users_.at(item.user);
        ContractDir& d = dir_.at(item.contract);
        PendingCreate pc;
        pc.contract = item.contract;
        pc.code = d.code;
        pc.code_hash = sha256(d.code);
        u.creates.push_back(std::move(pc));
        trace("user", {{"user", u.name}, {"event", "create_submitted"},
                       {"contract", item.contract}, {"code", item.code}});
        submit_tx(tx_plain(CallKind::CreationInit, u.party,
                           CreationInitMsg{ops_[d.creator_op].enc->id(), sha256(d.code)}),
                  u.name, "creation_init", std::nullopt);
    }

    void do_exec(const WorkItem& item) {
        UserAgent& u = users_.at(item.user);
        ContractDir& d = dir_.at(item.contract);
        ContractId cid = *d.cid;
        const ManagerRecord* rec = chain_.manager().find(cid);
        if (!rec || rec->dead || rec->pool.empty()) {
            trace("user", {{"user", u.name}, {"event", "exec_dead"},
                           {"contract", item.contract}});
            return;
        }
        uint64_t nonce = u.next_nonce++;
        SymKey kreq = sha256(str_bytes("kreq." + u.name + "." + std::to_string(nonce)));
        SymKey rkey = sha256(str_bytes("rkey." + u.name + "." + std::to_string(nonce)));
        ExecuteInput in{str_bytes(item.move), rkey};
        ExecuteMsg m;
        m.cid = cid;
        m.nonce = nonce;
        m.sealed_input = seal(kreq, in.encoded());
        for (const auto& p : rec->pool)
            m.envelopes.push_back({p, ctx_.encrypt_for(p, Bytes(kreq.begin(), kreq.end()))});
        Signed<ExecuteMsg> req = make_signed(ctx_, u.party, std::move(m));

        UserExec x;
        x.contract = item.contract;
        x.cid = cid;
        x.req = req;
        x.h = req.digest();
        x.rkey = rkey;
        x.issued_at = now_;
        x.last_sent = now_;
        u.by_h[x.h] = u.execs.size();
        Digest h = x.h;
        u.execs.push_back(std::move(x));

        size_t exec_op = owner_.at(rec->pool.front());
        trace("user", {{"user", u.name}, {"event", "exec_sent"}, {"contract", item.contract},
                       {"cid", cid}, {"h", hex(h)}, {"nonce", nonce}, {"move", item.move},
                       {"signer_id", to_hex(std::span<const uint8_t>(u.party.id.data(),
                                                                     u.party.id.size()))},
                       {"to", op_label(exec_op)}});
        send_execute(u, exec_op, cid, req);
        std::string uname = u.name;
        schedule(now_ + int64_t(sc_.timeouts.off_exec_secs), false,
                 [this, uname, h]() { user_exec_timer(uname, h); });
    }

    void send_execute(UserAgent& u, size_t to_op, ContractId cid,
                      const Signed<ExecuteMsg>& req) {
        OffMsg m;
        m.what = "execute";
        m.cid = cid;
        m.from = u.party;
        m.execute = req;
        m.wire = req.encoded();
        send_to_op(std::nullopt, to_op, std::move(m));
    }

    void user_exec_timer(const std::string& uname, const Digest& h) {
        if (stopping_) return;
        UserAgent& u = users_.at(uname);
        auto it = u.by_h.find(h);
        if (it == u.by_h.end()) return;
        UserExec& x = u.execs[it->second];
        if (x.done || x.crashed) return;
        int64_t off = int64_t(sc_.timeouts.off_exec_secs);
        if (now_ - x.last_sent < off) {
            schedule(x.last_sent + off, false, [this, uname, h]() { user_exec_timer(uname, h); });
            return;
        }
        const ManagerRecord* rec = chain_.manager().find(x.cid);
        if (!rec || rec->dead || rec->pool.empty()) {
            x.crashed = true;
            trace("user", {{"user", uname}, {"event", "contract_crashed"},
                           {"cid", x.cid}, {"h", hex(h)}});
            return;
        }
        if (!rec->exec_chal.block) {
            trace("user", {{"user", uname}, {"event", "challenge_executor"},
                           {"cid", x.cid}, {"h", hex(h)}});
            submit_tx(tx_presigned(CallKind::ChallengeExecutor, x.req, u.party),
                      uname, "challenge_executor", x.cid);
        }
        schedule(now_ + off, false, [this, uname, h]() { user_exec_timer(uname, h); });
    }

    void do_deposit(const WorkItem& item) {
        UserAgent& u = users_.at(item.user);
        ContractId cid = *dir_.at(item.contract).cid;
        trace("user", {{"user", u.name}, {"event", "deposit_sent"}, {"cid", cid},
                       {"amount", item.amount}});
        submit_tx(tx_presigned(CallKind::Deposit,
                               make_signed(ctx_, u.party, DepositMsg{cid, item.amount}),
                               u.party, item.amount),
                  u.name, "deposit", cid);
    }

    void do_withdraw(const WorkItem& item, int retries) {
        if (stopping_) return;
        UserAgent& u = users_.at(item.user);
        ContractDir& d = dir_.at(item.contract);
        ContractId cid = *d.cid;
        auto pit = u.payout_held.find(cid);
        if (pit == u.payout_held.end()) {
            if (d.dead || retries >= 20) {
                trace("user", {{"user", u.name}, {"event", "withdraw_empty"}, {"cid", cid}});
                return;
            }
            schedule(now_ + int64_t(sc_.chain.tau_secs), true,
                     [this, item, retries]() { do_withdraw(item, retries + 1); });
            return;
        }
        trace("user", {{"user", u.name}, {"event", "withdraw_submitted"}, {"cid", cid},
                       {"level", pit->second.msg.level}});
        submit_tx(tx_presigned(CallKind::Payout, pit->second, u.party), u.name, "payout", cid);
    }

    void user_receive_payout(const std::string& uname, ContractId cid,
                             const Signed<PayoutMsg>& payout) {
        if (stopping_) return;
        UserAgent& u = users_.at(uname);
        auto it = u.payout_held.find(cid);
        // A newer level supersedes a held bundle; an older one is a replay.
        if (it != u.payout_held.end() && it->second.msg.level >= payout.msg.level) {
            trace("user", {{"user", uname}, {"event", "stale_payout_bundle"}, {"cid", cid},
                           {"level", payout.msg.level}});
            return;
        }
        u.payout_held[cid] = payout;
        trace("user", {{"user", uname}, {"event", "payout_bundle"}, {"cid", cid},
                       {"level", payout.msg.level}});
    }

    void user_receive_ok(const std::string& uname, ContractId cid, const Signed<OkMsg>& ok,
                         const char* via) {
        if (stopping_) return;
        UserAgent& u = users_.at(uname);
        auto it = u.by_h.find(ok.msg.h);
        if (it == u.by_h.end()) {
            trace("user", {{"user", uname}, {"event", "stray_ok"}, {"h", hex(ok.msg.h)}});
            return;
        }
        UserExec& x = u.execs[it->second];
        if (x.done) {
            trace("user", {{"user", uname}, {"event", "duplicate_ok"}, {"h", hex(ok.msg.h)}});
            return;
        }
        auto pt = open(x.rkey, ok.msg.sealed_result);
        if (!pt) {
            trace("user", {{"user", uname}, {"event", "undecryptable_ok"}, {"h", hex(ok.msg.h)}});
            return;
        }
        x.done = true;
        trace("user", {{"user", uname}, {"event", "ok"}, {"cid", cid}, {"h", hex(ok.msg.h)},
                       {"via", via}, {"result", hex(sha256(*pt))},
                       {"latency", now_ - x.issued_at}});
    }

    void user_scan(const std::string& uname, const Block& b) {
        UserAgent& u = users_.at(uname);
        size_t ai = 0;
        for (const auto& out : b.outcomes) {
            const RelevantTx* tx = out.accepted ? &b.txs[ai++] : nullptr;
            if (!tx) continue;
            switch (out.kind) {
                case CallKind::CreationInit: {
                    if (tx->sender != u.party || !out.cid) break;
                    auto msg = std::get<CreationInitMsg>(decode_call(tx->data).body);
                    for (auto& pc : u.creates) {
                        if (pc.announced || pc.code_hash != msg.code_hash) continue;
                        pc.announced = true;
                        pc.cid = *out.cid;
                        ContractDir& d = dir_.at(pc.contract);
                        d.cid = pc.cid;
                        cid_names_[pc.cid] = pc.contract;
                        trace("user", {{"user", uname}, {"event", "announced"},
                                       {"contract", pc.contract}, {"cid", pc.cid}});
                        OffMsg m;
                        m.what = "create_request";
                        m.cid = pc.cid;
                        m.from = u.party;
                        CreateRequestMsg req{pc.cid, pc.code};
                        {
                            Encoder e;
                            req.encode(e);
                            m.wire = e.take();
                        }
                        m.create_req = std::move(req);
                        send_to_op(std::nullopt, d.creator_op, std::move(m));
                        std::string contract = pc.contract;
                        schedule(now_ + int64_t(sc_.timeouts.off_create_secs), false,
                                 [this, uname, contract]() {
                                     user_create_timer(uname, contract);
                                 });
                        break;
                    }
                    break;
                }
                case CallKind::ExecutorResponse: {
                    auto ok = std::get<Signed<OkMsg>>(decode_call(tx->data).body);
                    if (u.by_h.count(ok.msg.h))
                        user_receive_ok(uname, ok.msg.cid, ok, "onchain");
                    break;
                }
                case CallKind::FinalizeTimeout: {
                    if (out.validate_case != 3 || !out.cid) break;
                    for (auto& x : u.execs) {
                        if (x.cid != *out.cid || x.done || x.crashed) continue;
                        const ManagerRecord* rec = chain_.manager().find(x.cid);
                        if (!rec || rec->dead || rec->pool.empty()) {
                            x.crashed = true;
                            trace("user", {{"user", uname}, {"event", "contract_crashed"},
                                           {"cid", x.cid}, {"h", hex(x.h)}});
                            continue;
                        }
                        x.resends++;
                        x.last_sent = now_;
                        x.finalized.clear();
                        size_t exec_op = owner_.at(rec->pool.front());
                        trace("user", {{"user", uname}, {"event", "resend"}, {"cid", x.cid},
                                       {"h", hex(x.h)}, {"to", op_label(exec_op)},
                                       {"resends", x.resends}});
                        send_execute(u, exec_op, x.cid, x.req);
                    }
                    break;
                }
                default:
                    break;
            }
        }
    }

    void user_on_block(const std::string& uname) {
        UserAgent& u = users_.at(uname);
        const uint64_t next_height = chain_.height() + 1;
        for (auto& x : u.execs) {
            if (x.done || x.crashed) continue;
            const ManagerRecord* rec = chain_.manager().find(x.cid);
            if (!rec || rec->dead) {
                x.crashed = true;
                trace("user", {{"user", uname}, {"event", "contract_crashed"},
                               {"cid", x.cid}, {"h", hex(x.h)}});
                continue;
            }
            if (rec->exec_chal.block && rec->exec_chal.msg &&
                sha256(*rec->exec_chal.msg) == x.h) {
                uint64_t deadline = *rec->exec_chal.block + mcfg_.on_exec_blocks +
                                    rec->exec_chal.extension_blocks;
                if (next_height >= deadline && !x.finalized.count(deadline)) {
                    x.finalized.insert(deadline);
                    trace("user", {{"user", uname}, {"event", "finalize_executor"},
                                   {"cid", x.cid}, {"h", hex(x.h)}});
                    submit_tx(tx_plain(CallKind::FinalizeTimeout, u.party,
                                       FinalizeMsg{1, x.cid}),
                              uname, "finalize_timeout", x.cid);
                }
            }
        }
        for (auto& pc : u.creates) {
            if (pc.settled || !pc.announced) continue;
            ContractDir& d = dir_.at(pc.contract);
            if (d.dead) {
                pc.settled = true;
                trace("user", {{"user", uname}, {"event", "creation_failed"},
                               {"contract", pc.contract}, {"cid", pc.cid}});
                continue;
            }
            if (d.ready) {
                pc.settled = true;
                trace("user", {{"user", uname}, {"event", "created"},
                               {"contract", pc.contract}, {"cid", pc.cid}});
                continue;
            }
            const ManagerRecord* rec = chain_.manager().find(pc.cid);
            if (!rec || !rec->creator) continue;
            if (rec->exec_chal.block && rec->exec_chal.msg) {
                uint64_t deadline = *rec->exec_chal.block + mcfg_.on_create_blocks +
                                    rec->exec_chal.extension_blocks;
                if (next_height >= deadline) {
                    trace("user", {{"user", uname}, {"event", "finalize_creator"},
                                   {"contract", pc.contract}, {"cid", pc.cid}});
                    submit_tx(tx_plain(CallKind::FinalizeTimeout, u.party,
                                       FinalizeMsg{1, pc.cid}),
                              uname, "finalize_timeout", pc.cid);
                }
            }
        }
    }

    void user_create_timer(const std::string& uname, const std::string& contract) {
        if (stopping_) return;
        UserAgent& u = users_.at(uname);
        PendingCreate* pc = nullptr;
        for (auto& c : u.creates)
            if (c.contract == contract) pc = &c;
        if (!pc || pc->settled || !pc->announced) return;
        const ManagerRecord* rec = chain_.manager().find(pc->cid);
        if (rec && rec->creator && !rec->dead && !rec->exec_chal.block) {
            trace("user", {{"user", uname}, {"event", "challenge_creator"},
                           {"contract", contract}, {"cid", pc->cid}});
            submit_tx(tx_plain(CallKind::ChallengeCreator, u.party,
                               CreateRequestMsg{pc->cid, pc->code}),
                      uname, "challenge_creator", pc->cid);
        }
        schedule(now_ + int64_t(sc_.timeouts.off_create_secs), false,
                 [this, uname, contract]() { user_create_timer(uname, contract); });
    }

    // ---- shutdown ----

    bool busy() const {
        if (chain_.mempool_size() > 0) return true;
        if (busy_events_ > 0) return true;
        // An open on-chain challenge always resolves (response or timeout);
        // don't call the run settled before it does.
        for (const auto& [cid, rec] : chain_.manager().contracts)
            if (!rec.dead && (rec.exec_chal.block || rec.watch_chal.block)) return true;
        for (const auto& a : ops_) {
            if (!a.queue.empty() || !a.rounds.empty() || !a.cqueue.empty()) return true;
            if (!a.pending_adopt.empty() || !a.pending_install.empty()) return true;
            if (!a.watch_duty.empty() || !a.pool_duty.empty()) return true;
            for (const auto& [cid, cr] : a.crounds)
                if (!cr.statement_done) return true;
        }
        for (const auto& [name, u] : users_) {
            for (const auto& x : u.execs)
                if (!x.done && !x.crashed) return true;
            for (const auto& pc : u.creates)
                if (!pc.settled) return true;
        }
        return false;
    }

    void finals() {
        for (const auto& a : ops_) {
            trace("final_enclave", {{"op", op_label(a.idx)},
                                    {"enclave", a.enc->id().str()},
                                    {"synced", a.enc->synced()},
                                    {"tip", a.enc->tip_height()},
                                    {"final", a.enc->final_height()},
                                    {"mirror", hex(a.enc->mirror().digest())}});
        }
        for (const auto& a : ops_) {
            for (const auto& [cid, name] : cid_names_) {
                const ContractInstance* inst = a.enc->instance(cid);
                if (!inst) continue;
                Json houts = Json::array();
                for (const auto& [h, o] : inst->outputs) houts.push_back(hex(h));
                const ManagerRecord* rec = chain_.manager().find(cid);
                bool member = rec && rec->in_pool(a.enc->id());
                bool executor = rec && !rec->pool.empty() && rec->pool.front() == a.enc->id();
                trace("final_state", {{"op", op_label(a.idx)},
                                      {"cid", cid},
                                      {"contract", name},
                                      {"state", hex(sha256(inst->encoded()))},
                                      {"outputs", inst->outputs.size()},
                                      {"houts", houts},
                                      {"processed_height", inst->processed_height},
                                      {"credited", inst->credited},
                                      {"payout_level", inst->payout_level},
                                      {"unspent", inst->unspent.size()},
                                      {"member", member},
                                      {"executor", executor}});
            }
        }
        trace("end", {{"blocks", chain_.height()}, {"quiescent", !cap_hit_}});
    }

    // ---- state ----

    Scenario sc_;
    Digest program_;
    ManagerConfig mcfg_;
    EnclaveConfig ecfg_;
    CryptoContext ctx_;
    Chain chain_;
    Rng rng_;
    TraceWriter tw_;

    std::map<EvKey, Ev> q_;
    uint64_t evseq_ = 0;
    uint64_t busy_events_ = 0;
    int64_t now_ = kGenesisTime;
    int64_t epoch_ = std::numeric_limits<int64_t>::max();
    bool stopping_ = false;
    bool cap_hit_ = false;
    uint64_t idle_blocks_ = 0;

    std::deque<EnclaveRuntime> enclave_store_;
    std::vector<OperatorAgent> ops_;
    std::map<PartyId, size_t> owner_;
    std::map<std::string, UserAgent> users_;
    std::map<PartyId, std::string> user_names_;
    std::map<std::string, ContractDir> dir_;
    std::map<ContractId, std::string> cid_names_;
    std::vector<Digest> mempool_txds_;
};

// Convenience wrapper: build, run, return the result.
inline SimResult run_scenario(const Scenario& sc) { return Sim(sc).run(); }

}  // namespace pose
