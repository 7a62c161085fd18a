#pragma once

// Wire formats for every protocol message, off-chain and on-chain. Each
// message encodes as [u8 kind][canonical fields]; a Signed<M> wraps the
// payload with the signer and a tag over payload||signer, and the protocol's
// request hash h is the digest of the full signed encoding. Manager records
// store signed messages as raw bytes, so equality of stored and resent
// messages is byte equality.

#include <variant>
#include <vector>

#include "pose/crypto.hpp"

namespace pose {

enum class MsgKind : uint8_t {
    Register = 1,
    CreationInit = 2,
    CreateRequest = 3,
    Execute = 4,
    Update = 5,
    ConfirmExec = 6,
    Ok = 7,
    PoolInit = 8,
    ConfirmCreate = 9,
    CreationStatement = 10,
    CreationFailed = 11,
    Deposit = 12,
    Payout = 13,
    Finalize = 14,
    ChainEvidence = 15,
};

inline const char* msg_kind_name(MsgKind k) {
    switch (k) {
        case MsgKind::Register: return "register";
        case MsgKind::CreationInit: return "creation_init";
        case MsgKind::CreateRequest: return "create_request";
        case MsgKind::Execute: return "execute";
        case MsgKind::Update: return "update";
        case MsgKind::ConfirmExec: return "confirm_exec";
        case MsgKind::Ok: return "ok";
        case MsgKind::PoolInit: return "pool_init";
        case MsgKind::ConfirmCreate: return "confirm_create";
        case MsgKind::CreationStatement: return "creation_statement";
        case MsgKind::CreationFailed: return "creation_failed";
        case MsgKind::Deposit: return "deposit";
        case MsgKind::Payout: return "payout";
        case MsgKind::Finalize: return "finalize";
        case MsgKind::ChainEvidence: return "chain_evidence";
    }
    return "unknown";
}

using ContractId = uint64_t;

// --- plain message payloads ---

struct ChainEvidence {
    static constexpr MsgKind kKind = MsgKind::ChainEvidence;
    uint64_t block_number = 0;
    Digest block_digest = kZeroDigest;

    void encode(Encoder& e) const { e.u64(block_number).field(digest_bytes(block_digest)); }
    static ChainEvidence decode(Decoder& d) {
        ChainEvidence m;
        m.block_number = d.u64();
        m.block_digest = digest_from(d.field());
        return m;
    }
};

// Envelope of a per-message symmetric key, one per pool enclave, so a
// request resent byte-identically after an executor kick stays readable by
// the successor.
struct KeyEnvelope {
    PartyId enclave;
    Ciphertext sealed_key;

    void encode(Encoder& e) const {
        enclave.encode(e);
        sealed_key.encode(e);
    }
    static KeyEnvelope decode(Decoder& d) {
        KeyEnvelope k;
        k.enclave = PartyId::decode(d);
        k.sealed_key = Ciphertext::decode(d);
        return k;
    }
};

struct ExecuteMsg {
    static constexpr MsgKind kKind = MsgKind::Execute;
    ContractId cid = 0;
    uint64_t nonce = 0;
    Ciphertext sealed_input;  // encode of ExecuteInput under the per-message key
    std::vector<KeyEnvelope> envelopes;

    void encode(Encoder& e) const {
        e.u64(cid).u64(nonce);
        sealed_input.encode(e);
        e.u64(envelopes.size());
        for (const auto& k : envelopes) k.encode(e);
    }
    static ExecuteMsg decode(Decoder& d) {
        ExecuteMsg m;
        m.cid = d.u64();
        m.nonce = d.u64();
        m.sealed_input = Ciphertext::decode(d);
        uint64_t n = d.u64();
        if (n > 4096) throw DecodeError("too many envelopes");
        for (uint64_t i = 0; i < n; i++) m.envelopes.push_back(KeyEnvelope::decode(d));
        return m;
    }
};

// Plaintext carried inside ExecuteMsg::sealed_input.
struct ExecuteInput {
    Bytes move;
    SymKey result_key{};  // user-chosen key for the Ok payload

    Bytes encoded() const {
        Encoder e;
        e.field(move).field(std::span<const uint8_t>(result_key.data(), result_key.size()));
        return e.take();
    }
    static ExecuteInput from(const Bytes& b) {
        Decoder d(b);
        ExecuteInput in;
        in.move = d.field();
        Bytes k = d.field();
        if (k.size() != in.result_key.size()) throw DecodeError("bad result key");
        std::memcpy(in.result_key.data(), k.data(), k.size());
        d.expect_done();
        return in;
    }
};

struct UpdateMsg {
    static constexpr MsgKind kKind = MsgKind::Update;
    ContractId cid = 0;
    Ciphertext sealed_state;  // full contract state under the pool key
    Digest h = kZeroDigest;   // hash of the signed execute request

    void encode(Encoder& e) const {
        e.u64(cid);
        sealed_state.encode(e);
        e.field(digest_bytes(h));
    }
    static UpdateMsg decode(Decoder& d) {
        UpdateMsg m;
        m.cid = d.u64();
        m.sealed_state = Ciphertext::decode(d);
        m.h = digest_from(d.field());
        return m;
    }
};

struct ConfirmExecMsg {
    static constexpr MsgKind kKind = MsgKind::ConfirmExec;
    ContractId cid = 0;
    Digest h = kZeroDigest;

    void encode(Encoder& e) const { e.u64(cid).field(digest_bytes(h)); }
    static ConfirmExecMsg decode(Decoder& d) {
        ConfirmExecMsg m;
        m.cid = d.u64();
        m.h = digest_from(d.field());
        return m;
    }
};

struct OkMsg {
    static constexpr MsgKind kKind = MsgKind::Ok;
    ContractId cid = 0;
    Ciphertext sealed_result;  // encode of PublicOutput under the request's result key
    Digest h = kZeroDigest;

    void encode(Encoder& e) const {
        e.u64(cid);
        sealed_result.encode(e);
        e.field(digest_bytes(h));
    }
    static OkMsg decode(Decoder& d) {
        OkMsg m;
        m.cid = d.u64();
        m.sealed_result = Ciphertext::decode(d);
        m.h = digest_from(d.field());
        return m;
    }
};

struct CreationInitMsg {  // on-chain: announce creator enclave + code hash
    static constexpr MsgKind kKind = MsgKind::CreationInit;
    PartyId creator_enclave;
    Digest code_hash = kZeroDigest;

    void encode(Encoder& e) const {
        creator_enclave.encode(e);
        e.field(digest_bytes(code_hash));
    }
    static CreationInitMsg decode(Decoder& d) {
        CreationInitMsg m;
        m.creator_enclave = PartyId::decode(d);
        m.code_hash = digest_from(d.field());
        return m;
    }
};

struct CreateRequestMsg {  // off-chain to the creator; on-chain as creator challenge
    static constexpr MsgKind kKind = MsgKind::CreateRequest;
    ContractId cid = 0;
    Bytes code;

    void encode(Encoder& e) const { e.u64(cid).field(code); }
    static CreateRequestMsg decode(Decoder& d) {
        CreateRequestMsg m;
        m.cid = d.u64();
        m.code = d.field();
        return m;
    }
};

struct PoolInitMsg {  // creator -> pool members; on-chain as creation pool challenge
    static constexpr MsgKind kKind = MsgKind::PoolInit;
    ContractId cid = 0;
    std::vector<PartyId> pool;
    std::vector<KeyEnvelope> envelopes;  // pool key, one envelope per member
    Bytes code;

    void encode(Encoder& e) const {
        e.u64(cid);
        e.u64(pool.size());
        for (const auto& p : pool) p.encode(e);
        e.u64(envelopes.size());
        for (const auto& k : envelopes) k.encode(e);
        e.field(code);
    }
    static PoolInitMsg decode(Decoder& d) {
        PoolInitMsg m;
        m.cid = d.u64();
        uint64_t n = d.u64();
        if (n > 4096) throw DecodeError("pool too large");
        for (uint64_t i = 0; i < n; i++) m.pool.push_back(PartyId::decode(d));
        uint64_t k = d.u64();
        if (k > 4096) throw DecodeError("too many envelopes");
        for (uint64_t i = 0; i < k; i++) m.envelopes.push_back(KeyEnvelope::decode(d));
        m.code = d.field();
        return m;
    }
};

struct ConfirmCreateMsg {
    static constexpr MsgKind kKind = MsgKind::ConfirmCreate;
    ContractId cid = 0;
    bool failed = false;  // install exceeded its budget: counts as a fail confirmation

    void encode(Encoder& e) const { e.u64(cid).u8(failed ? 1 : 0); }
    static ConfirmCreateMsg decode(Decoder& d) {
        ConfirmCreateMsg m;
        m.cid = d.u64();
        m.failed = d.u8() != 0;
        return m;
    }
};

struct CreationStatementMsg {  // creator enclave -> manager: finalize with surviving pool
    static constexpr MsgKind kKind = MsgKind::CreationStatement;
    ContractId cid = 0;
    std::vector<PartyId> pool;

    void encode(Encoder& e) const {
        e.u64(cid);
        e.u64(pool.size());
        for (const auto& p : pool) p.encode(e);
    }
    static CreationStatementMsg decode(Decoder& d) {
        CreationStatementMsg m;
        m.cid = d.u64();
        uint64_t n = d.u64();
        if (n > 4096) throw DecodeError("pool too large");
        for (uint64_t i = 0; i < n; i++) m.pool.push_back(PartyId::decode(d));
        return m;
    }
};

struct CreationFailedMsg {  // creator enclave -> manager: creation failed, mark crashed
    static constexpr MsgKind kKind = MsgKind::CreationFailed;
    ContractId cid = 0;

    void encode(Encoder& e) const { e.u64(cid); }
    static CreationFailedMsg decode(Decoder& d) {
        CreationFailedMsg m;
        m.cid = d.u64();
        return m;
    }
};

struct DepositMsg {
    static constexpr MsgKind kKind = MsgKind::Deposit;
    ContractId cid = 0;
    uint64_t amount = 0;  // must match the transaction value

    void encode(Encoder& e) const { e.u64(cid).u64(amount); }
    static DepositMsg decode(Decoder& d) {
        DepositMsg m;
        m.cid = d.u64();
        m.amount = d.u64();
        return m;
    }
};

struct Withdrawal {
    uint64_t coins = 0;
    PartyId payee;

    bool operator==(const Withdrawal&) const = default;

    void encode(Encoder& e) const {
        e.u64(coins);
        payee.encode(e);
    }
    static Withdrawal decode(Decoder& d) {
        Withdrawal w;
        w.coins = d.u64();
        w.payee = PartyId::decode(d);
        return w;
    }
};

struct PayoutMsg {  // signed by the executor enclave; spends one payout level
    static constexpr MsgKind kKind = MsgKind::Payout;
    ContractId cid = 0;
    uint64_t level = 0;
    std::vector<Withdrawal> entries;

    void encode(Encoder& e) const {
        e.u64(cid).u64(level);
        e.u64(entries.size());
        for (const auto& w : entries) w.encode(e);
    }
    static PayoutMsg decode(Decoder& d) {
        PayoutMsg m;
        m.cid = d.u64();
        m.level = d.u64();
        uint64_t n = d.u64();
        if (n > 65536) throw DecodeError("too many withdrawals");
        for (uint64_t i = 0; i < n; i++) m.entries.push_back(Withdrawal::decode(d));
        return m;
    }
};

struct FinalizeMsg {  // unsigned timeout trigger; phase 1 = executor/creator, 2 = watchdog/pool
    static constexpr MsgKind kKind = MsgKind::Finalize;
    uint8_t phase = 1;
    ContractId cid = 0;

    void encode(Encoder& e) const { e.u8(phase).u64(cid); }
    static FinalizeMsg decode(Decoder& d) {
        FinalizeMsg m;
        m.phase = d.u8();
        if (m.phase != 1 && m.phase != 2) throw DecodeError("bad finalize phase");
        m.cid = d.u64();
        return m;
    }
};

// --- signing ---

template <typename M>
Bytes payload_bytes(const M& msg) {
    Encoder e;
    e.u8(static_cast<uint8_t>(M::kKind));
    Encoder inner;
    msg.encode(inner);
    e.field(inner.bytes());
    return e.take();
}

template <typename M>
struct Signed {
    M msg;
    PartyId signer;
    Digest tag = kZeroDigest;

    Bytes encoded() const {
        Encoder e;
        e.field(payload_bytes(msg));
        signer.encode(e);
        e.field(digest_bytes(tag));
        return e.take();
    }
    static Signed<M> decode_from(const Bytes& b) {
        Decoder d(b);
        Signed<M> s;
        Bytes payload = d.field();
        Decoder pd(payload);
        if (pd.u8() != static_cast<uint8_t>(M::kKind)) throw DecodeError("message kind mismatch");
        Bytes inner = pd.field();
        pd.expect_done();
        Decoder id(inner);
        s.msg = M::decode(id);
        id.expect_done();
        s.signer = PartyId::decode(d);
        s.tag = digest_from(d.field());
        d.expect_done();
        return s;
    }
    Digest digest() const { return sha256(encoded()); }
};

template <typename M>
Bytes signing_input(const M& msg, const PartyId& signer) {
    Encoder e;
    e.field(payload_bytes(msg));
    signer.encode(e);
    return e.take();
}

template <typename M>
Signed<M> make_signed(const CryptoContext& ctx, const PartyId& signer, M msg) {
    Signed<M> s;
    s.msg = std::move(msg);
    s.signer = signer;
    s.tag = ctx.sign(signer, signing_input(s.msg, signer));
    return s;
}

template <typename M>
bool verify_signed(const CryptoContext& ctx, const Signed<M>& s) {
    return ctx.verify(s.signer, signing_input(s.msg, s.signer), s.tag);
}

struct RegisterMsg {  // operator -> manager
    static constexpr MsgKind kKind = MsgKind::Register;
    PartyId enclave;
    AttestationQuote quote;
    Signed<ChainEvidence> evidence;  // signed by the enclave at init_sync

    void encode(Encoder& e) const {
        enclave.encode(e);
        quote.encode(e);
        e.field(evidence.encoded());
    }
    static RegisterMsg decode(Decoder& d) {
        RegisterMsg m;
        m.enclave = PartyId::decode(d);
        m.quote = AttestationQuote::decode(d);
        m.evidence = Signed<ChainEvidence>::decode_from(d.field());
        return m;
    }
};

}  // namespace pose
