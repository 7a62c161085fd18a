#pragma once

// The enclave program: a light client over operator-supplied block feeds plus
// the two off-chain sub-protocols (contract creation and execution). All
// state lives behind this class; the operator only ever sees the signed or
// sealed messages it returns. An enclave never trusts its operator: headers
// must link, finality claims must carry proofs against the committed state
// roots, and any action requires the mirror to be provably fresh.

#include <deque>
#include <set>

#include "pose/chain.hpp"
#include "pose/contracts.hpp"

namespace pose {

enum class EnclaveErr : uint8_t {
    None = 0,
    NotSynced,     // no verified chain view yet
    AlreadySynced,
    Desynced,      // view too old to act on
    ForkTooDeep,   // headers attach below the finalized height
    BadLink,       // broken parent/timestamp chain, or tip does not advance
    StaleHeaders,
    RateViolation,
    IncompleteTxData,  // tx list does not fold to the proven incr digest
    BadProof,
    BadSignature,
    BadEnvelope,   // missing or undecryptable key material
    UnknownContract,
    NotExecutor,
    NotCreator,
    NotInPool,
    WrongCode,
    PendingConfirm,   // a replication round is already in flight
    NoPending,
    NotAllConfirmed,  // kept: retry once stragglers confirm or get kicked
    StaleUpdate,      // replayed update would erase applied requests
};

inline const char* enclave_err_name(EnclaveErr e) {
    switch (e) {
        case EnclaveErr::None: return "none";
        case EnclaveErr::NotSynced: return "not_synced";
        case EnclaveErr::AlreadySynced: return "already_synced";
        case EnclaveErr::Desynced: return "desynced";
        case EnclaveErr::ForkTooDeep: return "fork_too_deep";
        case EnclaveErr::BadLink: return "bad_link";
        case EnclaveErr::StaleHeaders: return "stale_headers";
        case EnclaveErr::RateViolation: return "rate_violation";
        case EnclaveErr::IncompleteTxData: return "incomplete_tx_data";
        case EnclaveErr::BadProof: return "bad_proof";
        case EnclaveErr::BadSignature: return "bad_signature";
        case EnclaveErr::BadEnvelope: return "bad_envelope";
        case EnclaveErr::UnknownContract: return "unknown_contract";
        case EnclaveErr::NotExecutor: return "not_executor";
        case EnclaveErr::NotCreator: return "not_creator";
        case EnclaveErr::NotInPool: return "not_in_pool";
        case EnclaveErr::WrongCode: return "wrong_code";
        case EnclaveErr::PendingConfirm: return "pending_confirm";
        case EnclaveErr::NoPending: return "no_pending";
        case EnclaveErr::NotAllConfirmed: return "not_all_confirmed";
        case EnclaveErr::StaleUpdate: return "stale_update";
    }
    return "unknown";
}

template <class T>
struct EnclaveResult {
    std::optional<T> value;
    EnclaveErr err = EnclaveErr::None;

    bool ok() const { return value.has_value(); }
    const T& operator*() const { return *value; }
    const T* operator->() const { return &*value; }

    static EnclaveResult fail(EnclaveErr e) { return {std::nullopt, e}; }
    static EnclaveResult of(T v) { return {std::move(v), EnclaveErr::None}; }
};

// One operator-to-enclave sync message: headers extending the known view,
// plus (optionally) the transactions and proof that advance finality.
struct ChainFeed {
    std::vector<BlockHeader> headers;
    std::vector<std::pair<uint64_t, RelevantTx>> txs;  // (height, tx), height ascending
    std::optional<IncrProof> proof;
};

// Honest feed construction, shared by the harness and the tests.
inline ChainFeed feed_bootstrap(const Chain& chain) {
    ChainFeed f;
    uint64_t tip = chain.height();
    uint64_t checkpoint = tip - chain.gamma();  // bootstrap mines gamma+1 blocks first
    f.headers = chain.headers(checkpoint, tip);
    f.txs = chain.tx_log(0, checkpoint);
    f.proof = chain.prove_incr(checkpoint);
    return f;
}

inline ChainFeed feed_catchup(const Chain& chain, uint64_t known_tip, uint64_t known_final) {
    ChainFeed f;
    uint64_t tip = chain.height();
    if (tip > known_tip) f.headers = chain.headers(known_tip + 1, tip);
    uint64_t new_final = chain.finalized_height();
    if (new_final > known_final) {
        f.txs = chain.tx_log(known_final, new_final);
        f.proof = chain.prove_incr(new_final);
    }
    return f;
}

struct EnclaveConfig {
    uint64_t gamma = 15;            // must match the chain's confirmation depth
    int64_t stale_slack_secs = 120;  // max age of a freshly fed tip
    int64_t rate_window_secs = 600;  // expect rate_min_blocks within each window
    uint64_t rate_min_blocks = 20;
    int64_t slack_off_secs = 90;     // max tip age when acting
    uint64_t exec_budget = 1u << 20;
    uint64_t install_budget = 1u << 20;
    uint64_t pool_size_s = 3;
};

// What an execute request produces: a state update to replicate (fresh
// request), or the cached reply (replay of an already-processed request).
struct ExecReply {
    std::optional<Signed<UpdateMsg>> update;
    std::optional<Signed<OkMsg>> ok;
    std::optional<Signed<PayoutMsg>> payout;
};

struct OkBundle {
    Signed<OkMsg> ok;
    std::optional<Signed<PayoutMsg>> payout;
};

struct CreationVerdict {
    std::optional<Signed<CreationStatementMsg>> statement;
    std::optional<Signed<CreationFailedMsg>> failed;
};

class EnclaveRuntime {
  public:
    EnclaveRuntime(PartyId self, const CryptoContext* ctx, ManagerConfig mcfg, EnclaveConfig cfg,
                   Digest root_secret)
        : self_(self), ctx_(ctx), cfg_(cfg), mirror_(), root_(root_secret) {
        mirror_.cfg = mcfg;
    }

    const PartyId& id() const { return self_; }
    bool synced() const { return synced_; }
    uint64_t tip_height() const { return chain_.back().number; }
    uint64_t final_height() const { return final_height_; }
    const ManagerState& mirror() const { return mirror_; }

    // Verifies a full view from genesis: gamma+1 linked headers ending at the
    // tip, every relevant transaction up to the checkpoint, and the incr
    // proof tying that log to the checkpoint's state root. The replayed
    // manager state must land exactly on the proof's manager leaf.
    EnclaveResult<Signed<ChainEvidence>> init_sync(const ChainFeed& feed, int64_t now) {
        using R = EnclaveResult<Signed<ChainEvidence>>;
        if (synced_) return R::fail(EnclaveErr::AlreadySynced);
        if (feed.headers.size() != cfg_.gamma + 1 || !feed.proof)
            return R::fail(EnclaveErr::BadProof);
        if (!linked(feed.headers)) return R::fail(EnclaveErr::BadLink);
        const BlockHeader& checkpoint = feed.headers.front();
        const BlockHeader& tip = feed.headers.back();
        if (feed.proof->height != checkpoint.number) return R::fail(EnclaveErr::BadProof);
        if (now > tip.timestamp + cfg_.stale_slack_secs) return R::fail(EnclaveErr::StaleHeaders);

        Digest folded = kZeroDigest;
        uint64_t prev_height = 0;
        for (const auto& [height, tx] : feed.txs) {
            if (height == 0 || height > checkpoint.number || height < prev_height)
                return R::fail(EnclaveErr::IncompleteTxData);
            prev_height = height;
            folded = incr_hash_update(folded, tx);
        }
        if (folded != feed.proof->incr) return R::fail(EnclaveErr::IncompleteTxData);
        if (!feed.proof->verify(checkpoint)) return R::fail(EnclaveErr::BadProof);

        ManagerState replay;
        replay.cfg = mirror_.cfg;
        std::map<ContractId, std::vector<CoinEvent>> coins;
        if (!mirror_apply(replay, feed.txs, coins)) return R::fail(EnclaveErr::BadProof);
        if (mgr_leaf(replay.digest()) != feed.proof->sibling) return R::fail(EnclaveErr::BadProof);

        mirror_ = std::move(replay);
        chain_.assign(feed.headers.begin(), feed.headers.end());
        final_height_ = checkpoint.number;
        final_incr_ = feed.proof->incr;
        merge_coins(coins);
        window_start_ = now;
        window_count_ = 0;
        synced_ = true;
        return R::of(make_signed(*ctx_, self_,
                                 ChainEvidence{checkpoint.number, checkpoint.digest()}));
    }

    // Incremental sync. The whole feed is validated against the current view
    // and applied atomically; any defect rejects it without side effects.
    EnclaveErr ingest(const ChainFeed& feed, int64_t now) {
        if (!synced_) return EnclaveErr::NotSynced;

        // Skip headers we already hold, and anything below the stored window:
        // settled history was verified once and dropped, so resends of it are
        // noise. A lie down there cannot matter, because whatever follows
        // must still attach to a held digest.
        size_t pos = 0;
        while (pos < feed.headers.size() &&
               (feed.headers[pos].number < chain_.front().number || known(feed.headers[pos])))
            pos++;
        std::vector<BlockHeader> fresh_hdrs(feed.headers.begin() + pos, feed.headers.end());

        size_t keep = chain_.size();  // headers surviving a reorg
        if (!fresh_hdrs.empty()) {
            // The first new header must extend a header we hold above the
            // finalized height; anything else is a fork into settled history.
            const BlockHeader& first = fresh_hdrs.front();
            std::optional<size_t> attach;
            for (size_t i = 0; i < chain_.size(); i++)
                if (chain_[i].digest() == first.parent) attach = i;
            if (!attach) return EnclaveErr::ForkTooDeep;
            if (first.number != chain_[*attach].number + 1) return EnclaveErr::BadLink;
            if (first.timestamp <= chain_[*attach].timestamp) return EnclaveErr::BadLink;
            if (!linked(fresh_hdrs)) return EnclaveErr::BadLink;
            // A replacement branch must strictly outgrow the current tip;
            // the monotonic view never rolls back to a shorter chain.
            if (fresh_hdrs.back().number <= tip_height()) return EnclaveErr::BadLink;
            keep = *attach + 1;
        }
        const BlockHeader& new_tip = fresh_hdrs.empty() ? chain_.back() : fresh_hdrs.back();
        if (now > new_tip.timestamp + cfg_.stale_slack_secs) return EnclaveErr::StaleHeaders;

        // Block rate discipline: within a window the count accumulates; once
        // the window expires, only a feed that fills the whole quota at once
        // proves the operator is not trickling a frozen view.
        uint64_t new_count = window_count_ + fresh_hdrs.size();
        if (!rate_ok(now) && new_count < cfg_.rate_min_blocks) return EnclaveErr::RateViolation;

        // Finality advance, validated on copies before anything commits.
        std::optional<uint64_t> new_final;
        Digest new_incr = final_incr_;
        ManagerState replay;
        std::map<ContractId, std::vector<CoinEvent>> coins;
        if (feed.proof) {
            uint64_t p = feed.proof->height;
            if (p <= final_height_) return EnclaveErr::BadProof;
            if (p + cfg_.gamma > new_tip.number) return EnclaveErr::BadProof;
            uint64_t prev_height = final_height_;
            for (const auto& [height, tx] : feed.txs) {
                if (height <= final_height_ || height > p || height < prev_height)
                    return EnclaveErr::IncompleteTxData;
                prev_height = height;
                new_incr = incr_hash_update(new_incr, tx);
            }
            if (new_incr != feed.proof->incr) return EnclaveErr::IncompleteTxData;
            const BlockHeader* at = nullptr;
            for (size_t i = 0; i < keep; i++)
                if (chain_[i].number == p) at = &chain_[i];
            for (const auto& h : fresh_hdrs)
                if (h.number == p) at = &h;
            if (!at || !feed.proof->verify(*at)) return EnclaveErr::BadProof;
            replay = mirror_;
            if (!mirror_apply(replay, feed.txs, coins)) return EnclaveErr::BadProof;
            if (mgr_leaf(replay.digest()) != feed.proof->sibling) return EnclaveErr::BadProof;
            new_final = p;
        } else if (!feed.txs.empty()) {
            return EnclaveErr::IncompleteTxData;  // unproven transactions
        }

        // Commit.
        chain_.resize(keep);
        chain_.insert(chain_.end(), fresh_hdrs.begin(), fresh_hdrs.end());
        window_count_ = new_count;
        if (window_count_ >= cfg_.rate_min_blocks) {
            window_start_ = now;
            window_count_ = 0;
        }
        if (new_final) {
            mirror_ = std::move(replay);
            final_height_ = *new_final;
            final_incr_ = feed.proof->incr;
            merge_coins(coins);
            while (chain_.front().number < final_height_) chain_.pop_front();
        }
        return EnclaveErr::None;
    }

    bool fresh(int64_t now) const {
        return synced_ && rate_ok(now) && chain_.back().timestamp + cfg_.slack_off_secs >= now;
    }

    Signed<ChainEvidence> evidence() const {
        if (!synced_) throw std::logic_error("evidence before sync");
        const BlockHeader& tip = chain_.back();
        return make_signed(*ctx_, self_, ChainEvidence{tip.number, tip.digest()});
    }

    // Creation, creator side: sample the pool, wrap the pool key for every
    // member, remember what we expect to be confirmed. Repeats resend the
    // cached message; resampling would hand out a second pool.
    EnclaveResult<Signed<PoolInitMsg>> handle_create(const CreateRequestMsg& req, int64_t now) {
        using R = EnclaveResult<Signed<PoolInitMsg>>;
        if (!fresh(now)) return R::fail(EnclaveErr::Desynced);
        const ManagerRecord* rec = mirror_.find(req.cid);
        if (!rec) return R::fail(EnclaveErr::UnknownContract);
        if (!rec->creator || *rec->creator != self_) return R::fail(EnclaveErr::NotCreator);
        if (sha256(req.code) != rec->code_hash) return R::fail(EnclaveErr::WrongCode);
        if (auto it = creations_.find(req.cid); it != creations_.end())
            return R::of(it->second.cached_init);

        CreationSlot slot;
        slot.code = req.code;
        slot.pool_key = derive_key("pose.poolkey", req.cid);
        slot.pool = sample_pool(req.cid);
        for (const auto& m : slot.pool) {
            slot.awaiting.insert(m);
            Bytes key_bytes(slot.pool_key.begin(), slot.pool_key.end());
            slot.envelopes.push_back({m, ctx_->encrypt_for(m, key_bytes)});
        }
        PoolInitMsg init{req.cid, slot.pool, slot.envelopes, slot.code};
        slot.cached_init = make_signed(*ctx_, self_, std::move(init));
        auto [it, _] = creations_.emplace(req.cid, std::move(slot));
        return R::of(it->second.cached_init);
    }

    // Creation, member side: install the program and confirm, or confirm
    // with the fail flag when the program is unknown or installation blows
    // the step budget. Never installs twice; repeats re-sign the original
    // verdict.
    EnclaveResult<Signed<ConfirmCreateMsg>> handle_init(const Signed<PoolInitMsg>& init) {
        using R = EnclaveResult<Signed<ConfirmCreateMsg>>;
        if (!verify_signed(*ctx_, init)) return R::fail(EnclaveErr::BadSignature);
        const ManagerRecord* rec = mirror_.find(init.msg.cid);
        if (!rec || !rec->creator) return R::fail(EnclaveErr::NotSynced);
        if (init.signer != *rec->creator) return R::fail(EnclaveErr::NotCreator);
        bool member = false;
        for (const auto& p : init.msg.pool) member |= (p == self_);
        if (!member) return R::fail(EnclaveErr::NotInPool);
        if (sha256(init.msg.code) != rec->code_hash) return R::fail(EnclaveErr::WrongCode);
        if (auto it = init_seen_.find(init.msg.cid); it != init_seen_.end())
            return R::of(make_signed(*ctx_, self_, ConfirmCreateMsg{init.msg.cid, it->second}));
        return install_from(init);
    }

    // Creation, creator side again: collect member confirmations. Members the
    // chain kicked in the meantime drop out of the awaited set. Any fail
    // confirmation flips the outcome to a failure statement.
    EnclaveResult<CreationVerdict> handle_creation_confirms(
        ContractId cid, const std::vector<Signed<ConfirmCreateMsg>>& confirms) {
        using R = EnclaveResult<CreationVerdict>;
        auto it = creations_.find(cid);
        if (it == creations_.end() || it->second.done) return R::fail(EnclaveErr::NoPending);
        CreationSlot& slot = it->second;

        const ManagerRecord* rec = mirror_.find(cid);
        // An empty on-chain pool means "no pool challenge ran yet"; only a
        // non-empty one is an authoritative shrink of the awaited set.
        if (rec && !rec->pool.empty()) {
            std::set<PartyId> chain_pool(rec->pool.begin(), rec->pool.end());
            for (auto m = slot.awaiting.begin(); m != slot.awaiting.end();)
                m = chain_pool.count(*m) ? std::next(m) : slot.awaiting.erase(m);
        }
        for (const auto& c : confirms) {
            if (c.msg.cid != cid || !verify_signed(*ctx_, c)) continue;
            if (!slot.awaiting.erase(c.signer)) continue;
            if (c.msg.failed) slot.fail_seen = true;
        }
        if (!slot.awaiting.empty()) return R::fail(EnclaveErr::NotAllConfirmed);

        slot.done = true;
        CreationVerdict v;
        if (slot.fail_seen) {
            v.failed = make_signed(*ctx_, self_, CreationFailedMsg{cid});
            slots_.erase(cid);
            return R::of(std::move(v));
        }
        std::vector<PartyId> surviving =
            (rec && !rec->pool.empty()) ? rec->pool : slot.pool;
        v.statement = make_signed(*ctx_, self_, CreationStatementMsg{cid, surviving});
        bool still_member = false;
        for (const auto& p : surviving) still_member |= (p == self_);
        if (!still_member) slots_.erase(cid);
        return R::of(std::move(v));
    }

    // Execution, watchdog side: adopt the executor's state wholesale and
    // confirm. Replays re-adopt the same bytes and re-sign the same
    // confirmation, so duplicated delivery is harmless.
    EnclaveResult<Signed<ConfirmExecMsg>> handle_update(const Signed<UpdateMsg>& up) {
        using R = EnclaveResult<Signed<ConfirmExecMsg>>;
        ContractId cid = up.msg.cid;
        const ManagerRecord* rec = mirror_.find(cid);
        if (!rec || rec->dead) return R::fail(EnclaveErr::UnknownContract);
        if (rec->pool.empty() || rec->pool.front() != up.signer)
            return R::fail(EnclaveErr::NotExecutor);
        if (!rec->in_pool(self_)) return R::fail(EnclaveErr::NotInPool);
        if (!verify_signed(*ctx_, up)) return R::fail(EnclaveErr::BadSignature);
        auto it = slots_.find(cid);
        if (it == slots_.end()) return R::fail(EnclaveErr::UnknownContract);
        ContractSlot& slot = it->second;

        auto pt = open(slot.pool_key, up.msg.sealed_state);
        if (!pt) return R::fail(EnclaveErr::BadEnvelope);
        try {
            ContractInstance inst = ContractInstance::from(*pt);
            if (inst.cid != cid) return R::fail(EnclaveErr::BadEnvelope);
            // History only ever grows by one request per update. An update
            // missing a request we already applied is a replay of an older
            // state; adopting it would roll the replica back.
            if (slot.inst)
                for (const auto& [h, out] : slot.inst->outputs)
                    if (!inst.outputs.count(h)) return R::fail(EnclaveErr::StaleUpdate);
            slot.inst = std::move(inst);
        } catch (const DecodeError&) {
            return R::fail(EnclaveErr::BadEnvelope);
        }
        return R::of(make_signed(*ctx_, self_, ConfirmExecMsg{cid, up.msg.h}));
    }

    // Execution, executor side. A replayed request is answered from the
    // output cache without touching state; a fresh one runs the move and
    // opens a replication round that must close before the next request.
    EnclaveResult<ExecReply> handle_execute(const Signed<ExecuteMsg>& req, int64_t now) {
        using R = EnclaveResult<ExecReply>;
        if (!fresh(now)) return R::fail(EnclaveErr::Desynced);
        ContractId cid = req.msg.cid;
        const ManagerRecord* rec = mirror_.find(cid);
        if (!rec || rec->dead) return R::fail(EnclaveErr::UnknownContract);
        if (rec->pool.empty() || rec->pool.front() != self_) return R::fail(EnclaveErr::NotExecutor);
        auto it = slots_.find(cid);
        if (it == slots_.end() || !it->second.inst) return R::fail(EnclaveErr::UnknownContract);
        ContractSlot& slot = it->second;
        if (slot.pending_h) return R::fail(EnclaveErr::PendingConfirm);
        if (!verify_signed(*ctx_, req)) return R::fail(EnclaveErr::BadSignature);

        Digest h = req.digest();
        ContractInstance& inst = *slot.inst;

        auto input = open_request(req);
        if (!input) return R::fail(EnclaveErr::BadEnvelope);

        if (inst.seen(h)) {
            ExecReply reply;
            reply.ok = make_signed(*ctx_, self_,
                                   OkMsg{cid, seal(input->result_key, inst.outputs.at(h)), h});
            if (auto pm = inst.pending_payout()) reply.payout = make_signed(*ctx_, self_, *pm);
            return R::of(std::move(reply));
        }

        inst.sync_coins(coin_events(cid), final_height_);
        // Move randomness derives from the request digest alone, so any
        // party holding the trace can re-derive the execution.
        DigestRng rng(h, "move.rng");
        inst.execute(h, req.signer, input->move, cfg_.exec_budget, rng);
        slot.result_keys[h] = input->result_key;
        slot.pending_h = h;
        slot.awaiting.clear();
        for (const auto& p : rec->pool) slot.awaiting.insert(p);

        ExecReply reply;
        reply.update = make_signed(*ctx_, self_,
                                   UpdateMsg{cid, seal(slot.pool_key, inst.encoded()), h});
        return R::of(std::move(reply));
    }

    // Execution, executor side: close the replication round. Pool members
    // kicked on-chain since the update went out no longer block the round.
    // Short sets keep their progress so the round can be retried.
    EnclaveResult<OkBundle> handle_confirms(ContractId cid,
                                            const std::vector<Signed<ConfirmExecMsg>>& confirms,
                                            int64_t now) {
        using R = EnclaveResult<OkBundle>;
        if (!fresh(now)) return R::fail(EnclaveErr::Desynced);
        const ManagerRecord* rec = mirror_.find(cid);
        if (!rec || rec->dead) return R::fail(EnclaveErr::UnknownContract);
        if (rec->pool.empty() || rec->pool.front() != self_) return R::fail(EnclaveErr::NotExecutor);
        auto it = slots_.find(cid);
        if (it == slots_.end() || !it->second.pending_h) return R::fail(EnclaveErr::NoPending);
        ContractSlot& slot = it->second;
        Digest h = *slot.pending_h;

        std::set<PartyId> chain_pool(rec->pool.begin(), rec->pool.end());
        for (auto m = slot.awaiting.begin(); m != slot.awaiting.end();)
            m = chain_pool.count(*m) ? std::next(m) : slot.awaiting.erase(m);
        for (const auto& c : confirms) {
            if (c.msg.cid != cid || c.msg.h != h) continue;
            if (c.signer == self_ || !verify_signed(*ctx_, c)) continue;
            slot.awaiting.erase(c.signer);
        }
        if (slot.awaiting != std::set<PartyId>{self_}) return R::fail(EnclaveErr::NotAllConfirmed);

        slot.awaiting.clear();
        slot.pending_h.reset();
        SymKey result_key = slot.result_keys.at(h);
        ContractInstance& inst = *slot.inst;
        OkBundle bundle{make_signed(*ctx_, self_,
                                    OkMsg{cid, seal(result_key, inst.outputs.at(h)), h}),
                        std::nullopt};
        if (auto pm = inst.pending_payout()) bundle.payout = make_signed(*ctx_, self_, *pm);
        return R::of(std::move(bundle));
    }

    const ContractInstance* instance(ContractId cid) const {
        auto it = slots_.find(cid);
        return it != slots_.end() && it->second.inst ? &*it->second.inst : nullptr;
    }
    const std::vector<CoinEvent>& coin_events(ContractId cid) const {
        static const std::vector<CoinEvent> empty;
        auto it = coin_log_.find(cid);
        return it != coin_log_.end() ? it->second : empty;
    }

  private:
    struct ContractSlot {
        SymKey pool_key{};
        std::optional<ContractInstance> inst;
        // Executor-side replication round.
        std::optional<Digest> pending_h;
        std::set<PartyId> awaiting;
        std::map<Digest, SymKey> result_keys;
    };
    struct CreationSlot {
        SymKey pool_key{};
        std::vector<PartyId> pool;
        std::vector<KeyEnvelope> envelopes;
        Bytes code;
        std::set<PartyId> awaiting;
        bool fail_seen = false;
        bool done = false;
        Signed<PoolInitMsg> cached_init;
    };

    bool rate_ok(int64_t now) const { return now - window_start_ <= cfg_.rate_window_secs; }

    bool known(const BlockHeader& h) const {
        for (const auto& mine : chain_)
            if (mine.number == h.number) return mine.digest() == h.digest();
        return false;
    }

    static bool linked(const std::vector<BlockHeader>& hs) {
        for (size_t i = 1; i < hs.size(); i++) {
            if (hs[i].parent != hs[i - 1].digest()) return false;
            if (hs[i].number != hs[i - 1].number + 1) return false;
            if (hs[i].timestamp <= hs[i - 1].timestamp) return false;
        }
        return !hs.empty();
    }

    // Replays finalized transactions into a manager copy. An honest chain
    // only ever contains accepted transactions, so a rejection here exposes
    // a forged feed. Coin events are collected per contract as they apply.
    bool mirror_apply(ManagerState& state, const std::vector<std::pair<uint64_t, RelevantTx>>& txs,
                      std::map<ContractId, std::vector<CoinEvent>>& coins) const {
        HeaderLookup lookup = [this](uint64_t n) -> std::optional<Digest> {
            for (const auto& h : chain_)
                if (h.number == n) return h.digest();
            return std::nullopt;
        };
        for (const auto& [height, tx] : txs) {
            ApplyOutcome out = state.apply(tx, height, lookup, *ctx_, false);
            if (!out.accepted) return false;
            if (!out.cid) continue;
            if (out.kind == CallKind::Deposit)
                coins[*out.cid].push_back({height, true, out.deposit_amount, 0, {}});
            else if (out.kind == CallKind::Payout)
                coins[*out.cid].push_back({height, false, 0, out.payout_level, out.paid});
        }
        return true;
    }

    void merge_coins(std::map<ContractId, std::vector<CoinEvent>>& coins) {
        for (auto& [cid, evs] : coins) {
            auto& log = coin_log_[cid];
            log.insert(log.end(), evs.begin(), evs.end());
        }
    }

    SymKey derive_key(std::string_view label, ContractId cid) const {
        Hasher h;
        h.update(label).update(root_).update_u64(cid);
        return h.finish();
    }

    // Uniform sample of pool_size_s registered enclaves, deterministic in the
    // enclave's root secret. Partial Fisher-Yates over registration order.
    std::vector<PartyId> sample_pool(ContractId cid) const {
        std::vector<PartyId> cands = mirror_.tees;
        size_t s = std::min<size_t>(cfg_.pool_size_s, cands.size());
        DigestRng rng(derive_key("pose.poolseed", cid), "pool.sample");
        for (size_t i = 0; i < s; i++) {
            size_t j = i + static_cast<size_t>(rng.below(cands.size() - i));
            std::swap(cands[i], cands[j]);
        }
        cands.resize(s);
        return cands;
    }

    std::optional<ExecuteInput> open_request(const Signed<ExecuteMsg>& req) const {
        for (const auto& env : req.msg.envelopes) {
            if (env.enclave != self_) continue;
            auto key_bytes = ctx_->decrypt_as(self_, env.sealed_key);
            if (!key_bytes || key_bytes->size() != 32) return std::nullopt;
            SymKey k{};
            std::copy(key_bytes->begin(), key_bytes->end(), k.begin());
            auto pt = open(k, req.msg.sealed_input);
            if (!pt) return std::nullopt;
            try {
                return ExecuteInput::from(*pt);
            } catch (const DecodeError&) {
                return std::nullopt;
            }
        }
        return std::nullopt;
    }

    EnclaveResult<Signed<ConfirmCreateMsg>> install_from(const Signed<PoolInitMsg>& init) {
        using R = EnclaveResult<Signed<ConfirmCreateMsg>>;
        ContractId cid = init.msg.cid;
        const KeyEnvelope* mine = nullptr;
        for (const auto& env : init.msg.envelopes)
            if (env.enclave == self_) mine = &env;
        if (!mine) return R::fail(EnclaveErr::BadEnvelope);
        auto key_bytes = ctx_->decrypt_as(self_, mine->sealed_key);
        if (!key_bytes || key_bytes->size() != 32) return R::fail(EnclaveErr::BadEnvelope);

        const ManagerRecord* rec = mirror_.find(cid);
        bool budget_fail = false;
        auto inst = ContractInstance::install(cid, init.msg.code, rec->created_at,
                                              cfg_.install_budget, &budget_fail);
        bool failed = !inst.has_value();
        init_seen_[cid] = failed;
        if (!failed) {
            ContractSlot slot;
            std::copy(key_bytes->begin(), key_bytes->end(), slot.pool_key.begin());
            slot.inst = std::move(inst);
            slots_[cid] = std::move(slot);
        }
        return R::of(make_signed(*ctx_, self_, ConfirmCreateMsg{cid, failed}));
    }

    PartyId self_;
    const CryptoContext* ctx_;
    EnclaveConfig cfg_;

    // Verified chain view: headers from the finalized height to the tip, the
    // manager state and incr digest at the finalized height, and the coin
    // events finality has delivered per contract.
    bool synced_ = false;
    std::deque<BlockHeader> chain_;
    uint64_t final_height_ = 0;
    Digest final_incr_ = kZeroDigest;
    ManagerState mirror_;
    std::map<ContractId, std::vector<CoinEvent>> coin_log_;
    int64_t window_start_ = 0;
    uint64_t window_count_ = 0;

    Digest root_;  // per-enclave secret standing in for sealed hardware entropy
    std::map<ContractId, ContractSlot> slots_;
    std::map<ContractId, CreationSlot> creations_;
    std::map<ContractId, bool> init_seen_;  // cid -> failed flag of the sent confirm
};

}  // namespace pose
