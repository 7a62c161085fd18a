#pragma once

// The on-chain manager: enclave registry, per-contract records, the
// twelve-case validation program guarding every challenge-response
// transition, and the coin paths. apply() is a deterministic function of
// (state, transaction, inclusion height), which is what lets every enclave
// rebuild the manager from the relevant-transaction log: the authoritative
// chain and the enclave mirrors run this same code. In mirror mode the
// transaction log has already been authenticated by the incremental hash
// proof, so header-dependent registration evidence may be unavailable and is
// then skipped; everything else re-validates identically.

#include <functional>
#include <map>
#include <optional>

#include "pose/messages.hpp"

namespace pose {

enum class CallKind : uint8_t {
    Register = 1,
    CreationInit = 2,
    FinalizeCreation = 3,
    CreationFailed = 4,
    Deposit = 5,
    Payout = 6,
    ChallengeExecutor = 7,
    ExecutorResponse = 8,
    ChallengeCreator = 9,
    ChallengeWatchdogs = 10,
    WatchdogResponse = 11,
    ChallengePool = 12,
    PoolResponse = 13,
    FinalizeTimeout = 14,
};

inline const char* call_kind_name(CallKind k) {
    switch (k) {
        case CallKind::Register: return "register";
        case CallKind::CreationInit: return "creation_init";
        case CallKind::FinalizeCreation: return "finalize_creation";
        case CallKind::CreationFailed: return "creation_failed";
        case CallKind::Deposit: return "deposit";
        case CallKind::Payout: return "payout";
        case CallKind::ChallengeExecutor: return "challenge_executor";
        case CallKind::ExecutorResponse: return "executor_response";
        case CallKind::ChallengeCreator: return "challenge_creator";
        case CallKind::ChallengeWatchdogs: return "challenge_watchdogs";
        case CallKind::WatchdogResponse: return "watchdog_response";
        case CallKind::ChallengePool: return "challenge_pool";
        case CallKind::PoolResponse: return "pool_response";
        case CallKind::FinalizeTimeout: return "finalize_timeout";
    }
    return "unknown";
}

using CallBody = std::variant<Signed<RegisterMsg>, CreationInitMsg, Signed<CreationStatementMsg>,
                              Signed<CreationFailedMsg>, Signed<DepositMsg>, Signed<PayoutMsg>,
                              Signed<ExecuteMsg>, Signed<OkMsg>, CreateRequestMsg, Signed<UpdateMsg>,
                              Signed<ConfirmExecMsg>, Signed<PoolInitMsg>, Signed<ConfirmCreateMsg>,
                              FinalizeMsg>;

struct ManagerCall {
    CallKind kind = CallKind::Register;
    CallBody body;
};

namespace detail {
template <typename T>
Bytes call_payload(const T& v) {
    if constexpr (requires { v.encoded(); }) {
        return v.encoded();
    } else {
        Encoder e;
        v.encode(e);
        return e.take();
    }
}
}  // namespace detail

inline Bytes encode_call(const ManagerCall& c) {
    Encoder e;
    e.u8(static_cast<uint8_t>(c.kind));
    e.field(std::visit([](const auto& v) { return detail::call_payload(v); }, c.body));
    return e.take();
}

inline ManagerCall decode_call(const Bytes& data) {
    Decoder d(data);
    uint8_t k = d.u8();
    Bytes payload = d.field();
    d.expect_done();
    ManagerCall c;
    c.kind = static_cast<CallKind>(k);
    auto plain = [&]<typename M>() {
        Decoder pd(payload);
        M m = M::decode(pd);
        pd.expect_done();
        return m;
    };
    switch (c.kind) {
        case CallKind::Register: c.body = Signed<RegisterMsg>::decode_from(payload); break;
        case CallKind::CreationInit: c.body = plain.operator()<CreationInitMsg>(); break;
        case CallKind::FinalizeCreation: c.body = Signed<CreationStatementMsg>::decode_from(payload); break;
        case CallKind::CreationFailed: c.body = Signed<CreationFailedMsg>::decode_from(payload); break;
        case CallKind::Deposit: c.body = Signed<DepositMsg>::decode_from(payload); break;
        case CallKind::Payout: c.body = Signed<PayoutMsg>::decode_from(payload); break;
        case CallKind::ChallengeExecutor: c.body = Signed<ExecuteMsg>::decode_from(payload); break;
        case CallKind::ExecutorResponse: c.body = Signed<OkMsg>::decode_from(payload); break;
        case CallKind::ChallengeCreator: c.body = plain.operator()<CreateRequestMsg>(); break;
        case CallKind::ChallengeWatchdogs: c.body = Signed<UpdateMsg>::decode_from(payload); break;
        case CallKind::WatchdogResponse: c.body = Signed<ConfirmExecMsg>::decode_from(payload); break;
        case CallKind::ChallengePool: c.body = Signed<PoolInitMsg>::decode_from(payload); break;
        case CallKind::PoolResponse: c.body = Signed<ConfirmCreateMsg>::decode_from(payload); break;
        case CallKind::FinalizeTimeout: c.body = plain.operator()<FinalizeMsg>(); break;
        default: throw DecodeError("bad call kind");
    }
    return c;
}

template <typename M>
Bytes encode_call(CallKind kind, const M& body) {
    ManagerCall c;
    c.kind = kind;
    c.body = body;
    return encode_call(c);
}

// A transaction the manager cares about: call data, origin, attached coins.
struct RelevantTx {
    Bytes data;
    PartyId sender;
    uint64_t value = 0;

    bool operator==(const RelevantTx&) const = default;

    void encode(Encoder& e) const {
        e.field(data);
        sender.encode(e);
        e.u64(value);
    }
    static RelevantTx decode(Decoder& d) {
        RelevantTx t;
        t.data = d.field();
        t.sender = PartyId::decode(d);
        t.value = d.u64();
        return t;
    }
};

// incrTxHash fold: next = H(prev || tx.data || tx.sender || tx.value), with
// the structured fields carried in the canonical encoding.
inline Digest incr_hash_update(const Digest& prev, const RelevantTx& tx) {
    Hasher h;
    h.update(prev);
    Encoder e;
    tx.encode(e);
    h.update(e.bytes());
    return h.finish();
}

enum class Reject : uint8_t {
    None = 0,
    ParseError,
    UnknownContract,
    UnknownEnclave,
    DuplicateTee,
    BadSignature,
    BadQuote,
    BadEvidence,
    StaleEvidence,
    ValueMismatch,
    WrongLevel,
    Overdraw,
    NotExecutor,
    NotCreator,
    NotInPool,
    WrongHash,
    WrongCode,
    ChallengeRunning,
    NoChallenge,
    NotExpired,
    Expired,
    GuardFailed,
};

inline const char* reject_name(Reject r) {
    switch (r) {
        case Reject::None: return "none";
        case Reject::ParseError: return "parse_error";
        case Reject::UnknownContract: return "unknown_contract";
        case Reject::UnknownEnclave: return "unknown_enclave";
        case Reject::DuplicateTee: return "duplicate_tee";
        case Reject::BadSignature: return "bad_signature";
        case Reject::BadQuote: return "bad_quote";
        case Reject::BadEvidence: return "bad_evidence";
        case Reject::StaleEvidence: return "stale_evidence";
        case Reject::ValueMismatch: return "value_mismatch";
        case Reject::WrongLevel: return "wrong_level";
        case Reject::Overdraw: return "overdraw";
        case Reject::NotExecutor: return "not_executor";
        case Reject::NotCreator: return "not_creator";
        case Reject::NotInPool: return "not_in_pool";
        case Reject::WrongHash: return "wrong_hash";
        case Reject::WrongCode: return "wrong_code";
        case Reject::ChallengeRunning: return "challenge_running";
        case Reject::NoChallenge: return "no_challenge";
        case Reject::NotExpired: return "not_expired";
        case Reject::Expired: return "expired";
        case Reject::GuardFailed: return "guard_failed";
    }
    return "unknown";
}

struct ManagerConfig {
    Digest expected_program = kZeroDigest;
    uint64_t slack_on_blocks = 35;  // max registration evidence age, in blocks

    // On-chain challenge deadlines, in blocks. Defaults match the validated
    // TimeoutParams envelope: on_exec covers off_exec plus inclusion latency.
    uint64_t on_exec_blocks = 216;
    uint64_t on_prop_blocks = 59;
    uint64_t on_create_blocks = 216;
    uint64_t on_create_prop_blocks = 59;

    // Dynamic mode: the executor-challenge deadline grows while the executor
    // is itself busy challenging its watchdogs (at most twice) and when a
    // watchdog kick has to finalize.
    bool dynamic_timeouts = false;
    uint64_t ext_challenge_blocks = 59;
    uint64_t ext_kick_blocks = 103;
};

struct ExecChal {
    std::optional<Bytes> msg;
    std::optional<Bytes> res;
    std::optional<uint64_t> block;
    uint64_t extension_blocks = 0;
    uint8_t extensions_used = 0;
};

struct WatchChal {
    std::optional<Bytes> msg;
    std::vector<PartyId> responders;
    std::optional<uint64_t> block;
};

struct ManagerRecord {
    std::optional<PartyId> creator;  // set while creation is pending
    Digest code_hash = kZeroDigest;
    std::vector<PartyId> pool;  // pool[0] is the executor
    uint64_t balance = 0;
    uint64_t payout_level = 0;
    ExecChal exec_chal;    // executor challenge; doubles as the creator challenge
    WatchChal watch_chal;  // watchdog challenge; doubles as the creation pool challenge
    uint64_t created_at = 0;
    bool dead = false;  // no executor can ever serve this contract again

    bool in_pool(const PartyId& p) const {
        for (const auto& q : pool)
            if (q == p) return true;
        return false;
    }

    void encode(Encoder& e) const {
        e.u8(creator.has_value() ? 1 : 0);
        if (creator) creator->encode(e);
        e.field(digest_bytes(code_hash));
        e.u64(pool.size());
        for (const auto& p : pool) p.encode(e);
        e.u64(balance).u64(payout_level);
        auto opt_bytes = [&](const std::optional<Bytes>& b) {
            e.u8(b.has_value() ? 1 : 0);
            if (b) e.field(*b);
        };
        auto opt_u64 = [&](const std::optional<uint64_t>& v) {
            e.u8(v.has_value() ? 1 : 0);
            if (v) e.u64(*v);
        };
        opt_bytes(exec_chal.msg);
        opt_bytes(exec_chal.res);
        opt_u64(exec_chal.block);
        e.u64(exec_chal.extension_blocks).u8(exec_chal.extensions_used);
        opt_bytes(watch_chal.msg);
        e.u64(watch_chal.responders.size());
        for (const auto& p : watch_chal.responders) p.encode(e);
        opt_u64(watch_chal.block);
        e.u64(created_at).u8(dead ? 1 : 0);
    }
};

struct ApplyOutcome {
    bool accepted = false;
    Reject reason = Reject::None;
    int validate_case = 0;  // 1..12 when a challenge-protocol path ran
    CallKind kind = CallKind::Register;
    std::optional<ContractId> cid;
    std::vector<Withdrawal> paid;   // coins transferred by an accepted payout
    uint64_t payout_level = 0;      // level consumed by an accepted payout
    uint64_t deposit_amount = 0;    // coins credited by an accepted deposit
    std::vector<PartyId> kicked;    // enclaves removed from a pool
    std::optional<PartyId> registered;
};

using HeaderLookup = std::function<std::optional<Digest>(uint64_t)>;

class ManagerState {
  public:
    ManagerConfig cfg;
    std::vector<PartyId> tees;  // registration order; pool sampling indexes into this
    std::map<ContractId, ManagerRecord> contracts;

    const ManagerRecord* find(ContractId cid) const {
        auto it = contracts.find(cid);
        return it == contracts.end() ? nullptr : &it->second;
    }

    bool is_registered(const PartyId& p) const {
        for (const auto& t : tees)
            if (t == p) return true;
        return false;
    }

    Digest digest() const {
        Encoder e;
        e.u64(tees.size());
        for (const auto& t : tees) t.encode(e);
        e.u64(contracts.size());
        for (const auto& [cid, rec] : contracts) {
            e.u64(cid);
            Encoder r;
            rec.encode(r);
            e.field(r.bytes());
        }
        return sha256(e.bytes());
    }

    // Guard evaluation for one challenge-protocol case. Pure: no mutation.
    // `latest` is the height of the block carrying the message.
    Reject validate(int vcase, const ManagerCall& call, const ManagerRecord* rec, uint64_t latest,
                    const CryptoContext& ctx) const {
        if (!rec) return Reject::UnknownContract;
        uint64_t exec_deadline = cfg.on_exec_blocks + rec->exec_chal.extension_blocks;
        switch (vcase) {
            case 1: {
                const auto& m = std::get<Signed<ExecuteMsg>>(call.body);
                if (rec->creator) return Reject::GuardFailed;
                if (rec->exec_chal.block) return Reject::ChallengeRunning;
                if (!verify_signed(ctx, m)) return Reject::BadSignature;
                return Reject::None;
            }
            case 2: {
                const auto& res = std::get<Signed<OkMsg>>(call.body);
                if (rec->creator) return Reject::GuardFailed;
                if (!rec->exec_chal.msg || sha256(*rec->exec_chal.msg) != res.msg.h) return Reject::WrongHash;
                if (!rec->exec_chal.block) return Reject::NoChallenge;
                if (*rec->exec_chal.block + exec_deadline <= latest) return Reject::Expired;
                if (!verify_signed(ctx, res)) return Reject::BadSignature;
                if (rec->pool.empty() || res.signer != rec->pool[0]) return Reject::NotExecutor;
                return Reject::None;
            }
            case 3: {
                if (rec->creator) return Reject::GuardFailed;
                if (!rec->exec_chal.msg) return Reject::NoChallenge;
                if (!rec->exec_chal.block) return Reject::NoChallenge;
                if (*rec->exec_chal.block + exec_deadline > latest) return Reject::NotExpired;
                return Reject::None;
            }
            case 4: {
                const auto& pre = std::get<Signed<UpdateMsg>>(call.body);
                if (rec->creator) return Reject::GuardFailed;
                if (rec->watch_chal.block) return Reject::ChallengeRunning;
                if (rec->pool.empty() || pre.signer != rec->pool[0]) return Reject::NotExecutor;
                if (!verify_signed(ctx, pre)) return Reject::BadSignature;
                return Reject::None;
            }
            case 5: {
                const auto& conf = std::get<Signed<ConfirmExecMsg>>(call.body);
                if (rec->creator) return Reject::GuardFailed;
                if (!rec->watch_chal.msg) return Reject::NoChallenge;
                Digest challenged_h;
                try {
                    challenged_h = Signed<UpdateMsg>::decode_from(*rec->watch_chal.msg).msg.h;
                } catch (const DecodeError&) {
                    return Reject::GuardFailed;
                }
                if (conf.msg.h != challenged_h) return Reject::WrongHash;
                if (!rec->watch_chal.block) return Reject::NoChallenge;
                if (*rec->watch_chal.block + cfg.on_prop_blocks <= latest) return Reject::Expired;
                if (!verify_signed(ctx, conf)) return Reject::BadSignature;
                if (!rec->in_pool(conf.signer)) return Reject::NotInPool;
                return Reject::None;
            }
            case 6: {
                if (rec->creator) return Reject::GuardFailed;
                if (!rec->watch_chal.block) return Reject::NoChallenge;
                if (*rec->watch_chal.block + cfg.on_prop_blocks > latest) return Reject::NotExpired;
                return Reject::None;
            }
            case 7: {
                const auto& m = std::get<CreateRequestMsg>(call.body);
                if (!rec->creator) return Reject::GuardFailed;
                if (rec->exec_chal.block) return Reject::ChallengeRunning;
                if (sha256(m.code) != rec->code_hash) return Reject::WrongCode;
                return Reject::None;
            }
            case 8: {
                PartyId signer;
                bool verified = false;
                if (call.kind == CallKind::FinalizeCreation) {
                    const auto& res = std::get<Signed<CreationStatementMsg>>(call.body);
                    signer = res.signer;
                    verified = verify_signed(ctx, res);
                } else {
                    const auto& res = std::get<Signed<CreationFailedMsg>>(call.body);
                    signer = res.signer;
                    verified = verify_signed(ctx, res);
                }
                if (!rec->creator || signer != *rec->creator) return Reject::NotCreator;
                if (rec->exec_chal.block && *rec->exec_chal.block + cfg.on_create_blocks <= latest)
                    return Reject::Expired;
                if (!verified) return Reject::BadSignature;
                return Reject::None;
            }
            case 9: {
                if (!rec->creator) return Reject::GuardFailed;
                if (!rec->exec_chal.block) return Reject::NoChallenge;
                if (*rec->exec_chal.block + cfg.on_create_blocks > latest) return Reject::NotExpired;
                return Reject::None;
            }
            case 10: {
                const auto& pre = std::get<Signed<PoolInitMsg>>(call.body);
                if (!rec->creator || pre.signer != *rec->creator) return Reject::NotCreator;
                if (rec->watch_chal.block) return Reject::ChallengeRunning;
                if (!verify_signed(ctx, pre)) return Reject::BadSignature;
                return Reject::None;
            }
            case 11: {
                const auto& conf = std::get<Signed<ConfirmCreateMsg>>(call.body);
                if (!rec->creator) return Reject::GuardFailed;
                if (!rec->watch_chal.block) return Reject::NoChallenge;
                if (*rec->watch_chal.block + cfg.on_create_prop_blocks <= latest) return Reject::Expired;
                if (!verify_signed(ctx, conf)) return Reject::BadSignature;
                if (!rec->in_pool(conf.signer)) return Reject::NotInPool;
                return Reject::None;
            }
            case 12: {
                if (!rec->creator) return Reject::GuardFailed;
                if (!rec->watch_chal.block) return Reject::NoChallenge;
                if (*rec->watch_chal.block + cfg.on_create_prop_blocks > latest) return Reject::NotExpired;
                return Reject::None;
            }
            default: throw std::logic_error("bad validate case");
        }
    }

    // Process one relevant transaction at its inclusion height. In mirror
    // mode (authoritative = false) the transaction is already known to have
    // been accepted on-chain; header-dependent evidence checks degrade to
    // best-effort there because pre-checkpoint headers may be unavailable.
    ApplyOutcome apply(const RelevantTx& tx, uint64_t height, const HeaderLookup& header_at,
                       const CryptoContext& ctx, bool authoritative = true) {
        ApplyOutcome out;
        ManagerCall call;
        try {
            call = decode_call(tx.data);
        } catch (const DecodeError&) {
            out.reason = Reject::ParseError;
            return out;
        }
        out.kind = call.kind;
        auto reject = [&](Reject r, int vcase = 0) {
            out.reason = r;
            out.validate_case = vcase;
            return out;
        };
        auto accept = [&](int vcase = 0) {
            out.accepted = true;
            out.validate_case = vcase;
            return out;
        };

        switch (call.kind) {
            case CallKind::Register: {
                const auto& m = std::get<Signed<RegisterMsg>>(call.body);
                if (!verify_signed(ctx, m)) return reject(Reject::BadSignature);
                if (is_registered(m.msg.enclave)) return reject(Reject::DuplicateTee);
                if (m.msg.quote.enclave != m.msg.enclave || !ctx.verify_quote(m.msg.quote, cfg.expected_program))
                    return reject(Reject::BadQuote);
                if (!verify_signed(ctx, m.msg.evidence) || m.msg.evidence.signer != m.msg.enclave)
                    return reject(Reject::BadEvidence);
                const auto& ev = m.msg.evidence.msg;
                if (ev.block_number + cfg.slack_on_blocks < height) return reject(Reject::StaleEvidence);
                if (auto dg = header_at(ev.block_number); dg.has_value()) {
                    if (*dg != ev.block_digest) return reject(Reject::BadEvidence);
                } else if (authoritative) {
                    return reject(Reject::BadEvidence);
                }
                tees.push_back(m.msg.enclave);
                out.registered = m.msg.enclave;
                return accept();
            }
            case CallKind::CreationInit: {
                const auto& m = std::get<CreationInitMsg>(call.body);
                if (!is_registered(m.creator_enclave)) return reject(Reject::UnknownEnclave);
                ContractId cid = 0;
                while (contracts.count(cid)) cid++;
                ManagerRecord rec;
                rec.creator = m.creator_enclave;
                rec.code_hash = m.code_hash;
                rec.created_at = height;
                contracts.emplace(cid, std::move(rec));
                out.cid = cid;
                return accept();
            }
            case CallKind::Deposit: {
                const auto& m = std::get<Signed<DepositMsg>>(call.body);
                out.cid = m.msg.cid;
                auto it = contracts.find(m.msg.cid);
                if (it == contracts.end()) return reject(Reject::UnknownContract);
                if (!verify_signed(ctx, m)) return reject(Reject::BadSignature);
                if (tx.value != m.msg.amount) return reject(Reject::ValueMismatch);
                it->second.balance += m.msg.amount;
                out.deposit_amount = m.msg.amount;
                return accept();
            }
            case CallKind::Payout: {
                const auto& m = std::get<Signed<PayoutMsg>>(call.body);
                out.cid = m.msg.cid;
                auto it = contracts.find(m.msg.cid);
                if (it == contracts.end()) return reject(Reject::UnknownContract);
                ManagerRecord& rec = it->second;
                if (!verify_signed(ctx, m)) return reject(Reject::BadSignature);
                if (rec.pool.empty() || m.signer != rec.pool[0]) return reject(Reject::NotExecutor);
                if (m.msg.level != rec.payout_level) return reject(Reject::WrongLevel);
                uint64_t sum = 0;
                for (const auto& w : m.msg.entries) {
                    if (w.coins > rec.balance - sum) return reject(Reject::Overdraw);
                    sum += w.coins;
                }
                rec.balance -= sum;
                rec.payout_level = m.msg.level + 1;
                out.paid = m.msg.entries;
                out.payout_level = m.msg.level;
                return accept();
            }
            case CallKind::ChallengeExecutor: {
                const auto& m = std::get<Signed<ExecuteMsg>>(call.body);
                out.cid = m.msg.cid;
                ManagerRecord* rec = find_mut(m.msg.cid);
                if (Reject r = validate(1, call, rec, height, ctx); r != Reject::None) return reject(r, 1);
                rec->exec_chal.msg = m.encoded();
                rec->exec_chal.res.reset();
                rec->exec_chal.block = height;
                rec->exec_chal.extension_blocks = 0;
                rec->exec_chal.extensions_used = 0;
                return accept(1);
            }
            case CallKind::ExecutorResponse: {
                const auto& m = std::get<Signed<OkMsg>>(call.body);
                out.cid = m.msg.cid;
                ManagerRecord* rec = find_mut(m.msg.cid);
                if (Reject r = validate(2, call, rec, height, ctx); r != Reject::None) return reject(r, 2);
                rec->exec_chal.res = m.encoded();
                rec->exec_chal.msg.reset();
                rec->exec_chal.block.reset();
                rec->exec_chal.extension_blocks = 0;
                rec->exec_chal.extensions_used = 0;
                return accept(2);
            }
            case CallKind::ChallengeWatchdogs: {
                const auto& m = std::get<Signed<UpdateMsg>>(call.body);
                out.cid = m.msg.cid;
                ManagerRecord* rec = find_mut(m.msg.cid);
                if (Reject r = validate(4, call, rec, height, ctx); r != Reject::None) return reject(r, 4);
                rec->watch_chal.msg = m.encoded();
                rec->watch_chal.responders.clear();
                rec->watch_chal.block = height;
                if (cfg.dynamic_timeouts && rec->exec_chal.block && rec->exec_chal.extensions_used < 2) {
                    rec->exec_chal.extension_blocks += cfg.ext_challenge_blocks;
                    rec->exec_chal.extensions_used++;
                }
                return accept(4);
            }
            case CallKind::WatchdogResponse: {
                const auto& m = std::get<Signed<ConfirmExecMsg>>(call.body);
                out.cid = m.msg.cid;
                ManagerRecord* rec = find_mut(m.msg.cid);
                if (Reject r = validate(5, call, rec, height, ctx); r != Reject::None) return reject(r, 5);
                bool seen = false;
                for (const auto& p : rec->watch_chal.responders) seen = seen || p == m.signer;
                if (!seen) rec->watch_chal.responders.push_back(m.signer);
                return accept(5);
            }
            case CallKind::ChallengeCreator: {
                const auto& m = std::get<CreateRequestMsg>(call.body);
                out.cid = m.cid;
                ManagerRecord* rec = find_mut(m.cid);
                if (Reject r = validate(7, call, rec, height, ctx); r != Reject::None) return reject(r, 7);
                Encoder e;
                m.encode(e);
                rec->exec_chal.msg = e.take();
                rec->exec_chal.res.reset();
                rec->exec_chal.block = height;
                return accept(7);
            }
            case CallKind::FinalizeCreation: {
                const auto& m = std::get<Signed<CreationStatementMsg>>(call.body);
                out.cid = m.msg.cid;
                ManagerRecord* rec = find_mut(m.msg.cid);
                if (Reject r = validate(8, call, rec, height, ctx); r != Reject::None) return reject(r, 8);
                rec->creator.reset();
                rec->pool = m.msg.pool;
                rec->exec_chal = ExecChal{};
                rec->watch_chal = WatchChal{};
                rec->dead = rec->pool.empty();
                return accept(8);
            }
            case CallKind::CreationFailed: {
                const auto& m = std::get<Signed<CreationFailedMsg>>(call.body);
                out.cid = m.msg.cid;
                ManagerRecord* rec = find_mut(m.msg.cid);
                if (Reject r = validate(8, call, rec, height, ctx); r != Reject::None) return reject(r, 8);
                rec->creator.reset();
                rec->pool.clear();
                rec->exec_chal = ExecChal{};
                rec->watch_chal = WatchChal{};
                rec->dead = true;
                return accept(8);
            }
            case CallKind::ChallengePool: {
                const auto& m = std::get<Signed<PoolInitMsg>>(call.body);
                out.cid = m.msg.cid;
                ManagerRecord* rec = find_mut(m.msg.cid);
                if (Reject r = validate(10, call, rec, height, ctx); r != Reject::None) return reject(r, 10);
                rec->watch_chal.msg = m.encoded();
                rec->watch_chal.responders.clear();
                rec->watch_chal.block = height;
                rec->pool = m.msg.pool;  // provisional: membership for case 11, kicks in case 12
                return accept(10);
            }
            case CallKind::PoolResponse: {
                const auto& m = std::get<Signed<ConfirmCreateMsg>>(call.body);
                out.cid = m.msg.cid;
                ManagerRecord* rec = find_mut(m.msg.cid);
                if (Reject r = validate(11, call, rec, height, ctx); r != Reject::None) return reject(r, 11);
                if (m.msg.failed) {
                    // A fail confirmation marks the contract crashed outright.
                    rec->creator.reset();
                    rec->pool.clear();
                    rec->exec_chal = ExecChal{};
                    rec->watch_chal = WatchChal{};
                    rec->dead = true;
                    return accept(11);
                }
                bool seen = false;
                for (const auto& p : rec->watch_chal.responders) seen = seen || p == m.signer;
                if (!seen) rec->watch_chal.responders.push_back(m.signer);
                return accept(11);
            }
            case CallKind::FinalizeTimeout: {
                const auto& m = std::get<FinalizeMsg>(call.body);
                out.cid = m.cid;
                ManagerRecord* rec = find_mut(m.cid);
                if (!rec) return reject(Reject::UnknownContract);
                if (m.phase == 1) {
                    int vcase = rec->creator ? 9 : 3;
                    if (Reject r = validate(vcase, call, rec, height, ctx); r != Reject::None)
                        return reject(r, vcase);
                    if (vcase == 3) {
                        if (!rec->pool.empty()) {
                            out.kicked.push_back(rec->pool.front());
                            rec->pool.erase(rec->pool.begin());
                        }
                        rec->exec_chal.block.reset();
                        rec->exec_chal.extension_blocks = 0;
                        rec->exec_chal.extensions_used = 0;
                        rec->dead = rec->pool.empty();
                    } else {
                        out.kicked = rec->pool;
                        rec->pool.clear();
                        rec->dead = true;
                    }
                    return accept(vcase);
                }
                int vcase = rec->creator ? 12 : 6;
                if (Reject r = validate(vcase, call, rec, height, ctx); r != Reject::None)
                    return reject(r, vcase);
                std::vector<PartyId> kept;
                for (size_t i = 0; i < rec->pool.size(); i++) {
                    const PartyId& p = rec->pool[i];
                    bool responded = false;
                    for (const auto& q : rec->watch_chal.responders) responded = responded || q == p;
                    // Execution keeps the challenging executor; creation keeps responders only.
                    if ((vcase == 6 && i == 0) || responded)
                        kept.push_back(p);
                    else
                        out.kicked.push_back(p);
                }
                rec->pool = kept;
                rec->watch_chal = WatchChal{};
                if (vcase == 6) {
                    rec->dead = rec->pool.empty();
                    if (cfg.dynamic_timeouts && !out.kicked.empty() && rec->exec_chal.block)
                        rec->exec_chal.extension_blocks += cfg.ext_kick_blocks;
                }
                return accept(vcase);
            }
        }
        return reject(Reject::ParseError);
    }

  private:
    ManagerRecord* find_mut(ContractId cid) {
        auto it = contracts.find(cid);
        return it == contracts.end() ? nullptr : &it->second;
    }
};

}  // namespace pose
