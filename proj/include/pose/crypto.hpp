#pragma once

// Simulated cryptography. Parties are identified by 32-byte ids standing in
// for public keys; signatures, ciphertexts, and attestation quotes are
// SHA-256 tags over secrets held in a process-global key table. Within the
// simulation the usual guarantees hold by construction: nothing outside this
// file can produce a valid tag without the table, and ciphertext bodies are
// XOR-whitened so plaintext bytes never appear on the wire. Adversary
// policies only ever see the opaque structs.

#include <array>
#include <map>
#include <optional>
#include <string_view>

#include <openssl/evp.h>

#include "pose/common.hpp"

namespace pose {

using Digest = std::array<uint8_t, 32>;
using SymKey = std::array<uint8_t, 32>;

inline constexpr Digest kZeroDigest{};

class Hasher {
  public:
    Hasher() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
            throw std::runtime_error("sha256 init failed");
    }
    ~Hasher() { EVP_MD_CTX_free(ctx_); }
    Hasher(const Hasher&) = delete;
    Hasher& operator=(const Hasher&) = delete;

    Hasher& update(std::span<const uint8_t> data) {
        if (EVP_DigestUpdate(ctx_, data.data(), data.size()) != 1)
            throw std::runtime_error("sha256 update failed");
        return *this;
    }
    Hasher& update(const Bytes& data) { return update(std::span<const uint8_t>(data)); }
    Hasher& update(const Digest& d) { return update(std::span<const uint8_t>(d.data(), d.size())); }
    Hasher& update(std::string_view s) {
        return update(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
    }
    Hasher& update_u64(uint64_t v) {
        uint8_t b[8];
        for (int i = 0; i < 8; i++) b[i] = static_cast<uint8_t>(v >> (8 * i));
        return update(std::span<const uint8_t>(b, 8));
    }

    Digest finish() {
        Digest out;
        unsigned int n = 0;
        if (EVP_DigestFinal_ex(ctx_, out.data(), &n) != 1 || n != out.size())
            throw std::runtime_error("sha256 final failed");
        return out;
    }

  private:
    EVP_MD_CTX* ctx_;
};

inline Digest sha256(std::span<const uint8_t> data) {
    Hasher h;
    h.update(data);
    return h.finish();
}
inline Digest sha256(const Bytes& data) { return sha256(std::span<const uint8_t>(data)); }

inline std::string hex(const Digest& d) { return to_hex(std::span<const uint8_t>(d.data(), d.size())); }
inline Bytes digest_bytes(const Digest& d) { return Bytes(d.begin(), d.end()); }
inline Digest digest_from(const Bytes& b) {
    if (b.size() != 32) throw DecodeError("digest must be 32 bytes");
    Digest d;
    std::memcpy(d.data(), b.data(), 32);
    return d;
}

enum class PartyKind : uint8_t { User = 1, Operator = 2, Enclave = 3 };

inline const char* kind_prefix(PartyKind k) {
    switch (k) {
        case PartyKind::User: return "usr";
        case PartyKind::Operator: return "opr";
        case PartyKind::Enclave: return "enc";
    }
    return "???";
}

struct PartyId {
    PartyKind kind = PartyKind::User;
    Digest id = kZeroDigest;

    auto operator<=>(const PartyId&) const = default;

    void encode(Encoder& e) const {
        e.u8(static_cast<uint8_t>(kind));
        e.field(std::span<const uint8_t>(id.data(), id.size()));
    }
    static PartyId decode(Decoder& d) {
        PartyId p;
        uint8_t k = d.u8();
        if (k < 1 || k > 3) throw DecodeError("bad party kind");
        p.kind = static_cast<PartyKind>(k);
        p.id = digest_from(d.field());
        return p;
    }
    Bytes encoded() const {
        Encoder e;
        encode(e);
        return e.take();
    }
    std::string str() const {
        return std::string(kind_prefix(kind)) + ":" + hex(id).substr(0, 12);
    }
};

// Stand-in for authenticated symmetric (and enveloped asymmetric)
// encryption. Deterministic: the nonce is derived from key and plaintext, so
// re-encrypting the same request yields the same bytes. key_id names the key
// without revealing it; the mac detects wrong-key decryption.
struct Ciphertext {
    Digest key_id = kZeroDigest;
    Digest nonce = kZeroDigest;
    Bytes body;
    Digest mac = kZeroDigest;

    bool operator==(const Ciphertext&) const = default;

    void encode(Encoder& e) const {
        e.field(digest_bytes(key_id)).field(digest_bytes(nonce)).field(body).field(digest_bytes(mac));
    }
    static Ciphertext decode(Decoder& d) {
        Ciphertext c;
        c.key_id = digest_from(d.field());
        c.nonce = digest_from(d.field());
        c.body = d.field();
        c.mac = digest_from(d.field());
        return c;
    }
};

struct AttestationQuote {
    PartyId enclave;
    Digest program = kZeroDigest;
    Digest tag = kZeroDigest;

    void encode(Encoder& e) const {
        enclave.encode(e);
        e.field(digest_bytes(program)).field(digest_bytes(tag));
    }
    static AttestationQuote decode(Decoder& d) {
        AttestationQuote q;
        q.enclave = PartyId::decode(d);
        q.program = digest_from(d.field());
        q.tag = digest_from(d.field());
        return q;
    }
};

struct UnknownSigner : std::runtime_error {
    explicit UnknownSigner(const std::string& who) : std::runtime_error("unknown signer " + who) {}
};

inline Digest key_id_of(const SymKey& key) {
    Hasher h;
    h.update("pose.kid");
    h.update(std::span<const uint8_t>(key.data(), key.size()));
    return h.finish();
}

inline Ciphertext seal(const SymKey& key, std::span<const uint8_t> pt) {
    Ciphertext c;
    c.key_id = key_id_of(key);
    {
        Hasher h;
        h.update("pose.nonce").update(std::span<const uint8_t>(key.data(), key.size())).update(pt);
        c.nonce = h.finish();
    }
    c.body.resize(pt.size());
    Digest block{};
    for (size_t i = 0; i < pt.size(); i++) {
        if (i % block.size() == 0) {
            Hasher h;
            h.update("pose.ks").update(std::span<const uint8_t>(key.data(), key.size())).update(c.nonce);
            h.update_u64(i / block.size());
            block = h.finish();
        }
        c.body[i] = pt[i] ^ block[i % block.size()];
    }
    {
        Hasher h;
        h.update("pose.mac").update(std::span<const uint8_t>(key.data(), key.size())).update(c.nonce).update(pt);
        c.mac = h.finish();
    }
    return c;
}
inline Ciphertext seal(const SymKey& key, const Bytes& pt) { return seal(key, std::span<const uint8_t>(pt)); }

inline std::optional<Bytes> open(const SymKey& key, const Ciphertext& c) {
    if (c.key_id != key_id_of(key)) return std::nullopt;
    Bytes pt(c.body.size());
    Digest block{};
    for (size_t i = 0; i < c.body.size(); i++) {
        if (i % block.size() == 0) {
            Hasher h;
            h.update("pose.ks").update(std::span<const uint8_t>(key.data(), key.size())).update(c.nonce);
            h.update_u64(i / block.size());
            block = h.finish();
        }
        pt[i] = c.body[i] ^ block[i % block.size()];
    }
    Hasher h;
    h.update("pose.mac").update(std::span<const uint8_t>(key.data(), key.size())).update(c.nonce).update(pt);
    if (h.finish() != c.mac) return std::nullopt;
    return pt;
}

// Scenario-wide key table. Parties are minted deterministically from the
// scenario seed; secrets never leave this object.
class CryptoContext {
  public:
    explicit CryptoContext(uint64_t seed) {
        Hasher h;
        h.update("pose.seed").update_u64(seed);
        seed_ = h.finish();
        Hasher r;
        r.update("pose.tee-root").update(seed_);
        tee_root_ = r.finish();
    }

    PartyId new_party(PartyKind kind, std::string_view label) {
        PartyId p;
        p.kind = kind;
        Hasher h;
        h.update("pose.party").update(seed_).update_u64(static_cast<uint64_t>(kind)).update(label);
        p.id = h.finish();
        if (sign_keys_.count(p)) throw std::logic_error("duplicate party label: " + std::string(label));
        sign_keys_[p] = derive("sk", p.id);
        enc_keys_[p] = derive("ek", p.id);
        return p;
    }

    bool known(const PartyId& p) const { return sign_keys_.count(p) != 0; }

    Digest sign(const PartyId& signer, std::span<const uint8_t> payload) const {
        auto it = sign_keys_.find(signer);
        if (it == sign_keys_.end()) throw UnknownSigner(signer.str());
        Hasher h;
        h.update("pose.sig").update(it->second).update(payload);
        return h.finish();
    }

    bool verify(const PartyId& signer, std::span<const uint8_t> payload, const Digest& tag) const {
        auto it = sign_keys_.find(signer);
        if (it == sign_keys_.end()) return false;
        Hasher h;
        h.update("pose.sig").update(it->second).update(payload);
        return h.finish() == tag;
    }

    Ciphertext encrypt_for(const PartyId& to, std::span<const uint8_t> pt) const {
        auto it = enc_keys_.find(to);
        if (it == enc_keys_.end()) throw UnknownSigner(to.str());
        return seal(it->second, pt);
    }
    Ciphertext encrypt_for(const PartyId& to, const Bytes& pt) const {
        return encrypt_for(to, std::span<const uint8_t>(pt));
    }
    std::optional<Bytes> decrypt_as(const PartyId& to, const Ciphertext& c) const {
        auto it = enc_keys_.find(to);
        if (it == enc_keys_.end()) return std::nullopt;
        return open(it->second, c);
    }

    AttestationQuote quote(const PartyId& enclave, const Digest& program) const {
        AttestationQuote q;
        q.enclave = enclave;
        q.program = program;
        Hasher h;
        h.update("pose.quote").update(tee_root_).update(enclave.encoded()).update(program);
        q.tag = h.finish();
        return q;
    }
    bool verify_quote(const AttestationQuote& q, const Digest& expected_program) const {
        if (q.program != expected_program) return false;
        Hasher h;
        h.update("pose.quote").update(tee_root_).update(q.enclave.encoded()).update(q.program);
        return h.finish() == q.tag;
    }

    const Digest& seed_digest() const { return seed_; }

  private:
    SymKey derive(std::string_view label, const Digest& id) const {
        Hasher h;
        h.update("pose.derive").update(seed_).update(label).update(id);
        return h.finish();
    }

    Digest seed_;
    SymKey tee_root_;
    std::map<PartyId, SymKey> sign_keys_;
    std::map<PartyId, SymKey> enc_keys_;
};

// PRF-style digest-keyed rng stream (pool sampling, contract randomness).
class DigestRng {
  public:
    DigestRng(const Digest& key, std::string_view label) {
        Hasher h;
        h.update("pose.prf").update(key).update(label);
        state_ = h.finish();
    }
    uint64_t next() {
        if (used_ == 4) {
            Hasher h;
            h.update("pose.prf.step").update(state_);
            state_ = h.finish();
            used_ = 0;
        }
        uint64_t v = 0;
        for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(state_[used_ * 8 + i]) << (8 * i);
        used_++;
        return v;
    }
    uint64_t below(uint64_t n) {
        if (n == 0) throw std::logic_error("DigestRng::below(0)");
        uint64_t limit = ~uint64_t{0} - ~uint64_t{0} % n;
        uint64_t v;
        do {
            v = next();
        } while (v >= limit);
        return v % n;
    }

  private:
    Digest state_;
    int used_ = 4;
};

}  // namespace pose
