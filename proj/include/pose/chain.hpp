#pragma once

// Simulated host blockchain. Blocks carry only what the protocol needs:
// linked headers, the accepted relevant transactions, and a two-leaf state
// commitment over (incremental tx hash, manager state digest) so both can be
// proven against a header independently. The chain owns the authoritative
// ManagerState and snapshots it per block, which makes historical queries
// and sidechain forks cheap at desk scale.

#include <deque>
#include <stdexcept>

#include "pose/manager.hpp"

namespace pose {

struct BlockHeader {
    uint64_t number = 0;
    Digest parent = kZeroDigest;
    int64_t timestamp = 0;
    Digest state_root = kZeroDigest;
    Digest tx_root = kZeroDigest;

    bool operator==(const BlockHeader&) const = default;

    void encode(Encoder& e) const {
        e.u64(number);
        e.field(digest_bytes(parent));
        e.i64(timestamp);
        e.field(digest_bytes(state_root));
        e.field(digest_bytes(tx_root));
    }
    static BlockHeader decode(Decoder& d) {
        BlockHeader h;
        h.number = d.u64();
        h.parent = digest_from(d.field());
        h.timestamp = d.i64();
        h.state_root = digest_from(d.field());
        h.tx_root = digest_from(d.field());
        return h;
    }
    Digest digest() const {
        Encoder e;
        encode(e);
        return sha256(e.bytes());
    }
};

// state_root = H(incr_leaf || mgr_leaf) where each leaf is the hash of a
// domain-tagged encoding. A proof for one leaf is the other leaf plus side.
inline Digest incr_leaf(const Digest& incr) {
    Hasher h;
    h.update("pose.leaf.incr");
    h.update(incr);
    return h.finish();
}
inline Digest mgr_leaf(const Digest& mgr) {
    Hasher h;
    h.update("pose.leaf.mgr");
    h.update(mgr);
    return h.finish();
}
inline Digest state_root_of(const Digest& incr, const Digest& mgr) {
    Hasher h;
    h.update(incr_leaf(incr));
    h.update(mgr_leaf(mgr));
    return h.finish();
}

struct IncrProof {
    uint64_t height = 0;
    Digest incr = kZeroDigest;     // claimed incremental hash after `height`
    Digest sibling = kZeroDigest;  // manager leaf

    bool verify(const BlockHeader& hdr) const {
        if (hdr.number != height) return false;
        Hasher h;
        h.update(incr_leaf(incr));
        h.update(sibling);
        return h.finish() == hdr.state_root;
    }
};

struct Block {
    BlockHeader header;
    std::vector<RelevantTx> txs;       // accepted only
    std::vector<ApplyOutcome> outcomes;
    Digest incr_after = kZeroDigest;
    Digest mgr_digest_after = kZeroDigest;
};

struct ChainParams {
    uint64_t gamma = 15;  // confirmation depth: block n is final once tip >= n + gamma
    int64_t genesis_time = 1'000'000;
};

class Chain {
  public:
    Chain(ChainParams params, ManagerConfig mcfg, const CryptoContext* ctx)
        : params_(params), ctx_(ctx) {
        mgr_.cfg = mcfg;
        Block genesis;
        genesis.header.number = 0;
        genesis.header.timestamp = params_.genesis_time;
        genesis.incr_after = kZeroDigest;
        genesis.mgr_digest_after = mgr_.digest();
        genesis.header.state_root = state_root_of(genesis.incr_after, genesis.mgr_digest_after);
        genesis.header.tx_root = kZeroDigest;
        blocks_.push_back(std::move(genesis));
        snapshots_.push_back(mgr_);
    }

    const ManagerState& manager() const { return mgr_; }
    const ManagerState& manager_at(uint64_t height) const { return snapshots_.at(height); }

    uint64_t height() const { return blocks_.size() - 1; }
    uint64_t finalized_height() const {
        return height() >= params_.gamma ? height() - params_.gamma : 0;
    }
    const Block& block(uint64_t n) const { return blocks_.at(n); }
    const BlockHeader& header(uint64_t n) const { return blocks_.at(n).header; }
    const BlockHeader& tip() const { return blocks_.back().header; }
    uint64_t gamma() const { return params_.gamma; }

    std::vector<BlockHeader> headers(uint64_t from, uint64_t to) const {
        std::vector<BlockHeader> out;
        for (uint64_t n = from; n <= to && n <= height(); n++) out.push_back(blocks_[n].header);
        return out;
    }

    // All accepted relevant txs in heights (from, to], with inclusion heights.
    std::vector<std::pair<uint64_t, RelevantTx>> tx_log(uint64_t from_excl, uint64_t to_incl) const {
        std::vector<std::pair<uint64_t, RelevantTx>> out;
        for (uint64_t n = from_excl + 1; n <= to_incl && n <= height(); n++)
            for (const auto& tx : blocks_[n].txs) out.emplace_back(n, tx);
        return out;
    }

    IncrProof prove_incr(uint64_t height_at) const {
        const Block& b = blocks_.at(height_at);
        return IncrProof{height_at, b.incr_after, mgr_leaf(b.mgr_digest_after)};
    }

    void submit(RelevantTx tx) { mempool_.push_back(std::move(tx)); }
    size_t mempool_size() const { return mempool_.size(); }

    // Mine one block at `now`, including every pending transaction whose
    // inclusion delay has elapsed. Returns the per-tx outcomes.
    const Block& mine_block(int64_t now) {
        if (now <= tip().timestamp) throw std::logic_error("block timestamp must increase");
        Block b;
        b.header.number = height() + 1;
        b.header.parent = tip().digest();
        b.header.timestamp = now;

        Digest incr = blocks_.back().incr_after;
        Hasher txh;
        txh.update("pose.txroot");
        auto pending = std::move(mempool_);
        mempool_.clear();
        for (auto& tx : pending) {
            ApplyOutcome out = mgr_.apply(tx, b.header.number, header_lookup(), *ctx_);
            if (out.accepted) {
                incr = incr_hash_update(incr, tx);
                Encoder e;
                tx.encode(e);
                txh.update(e.bytes());
                b.txs.push_back(std::move(tx));
            }
            b.outcomes.push_back(std::move(out));
        }
        b.incr_after = incr;
        b.mgr_digest_after = mgr_.digest();
        b.header.state_root = state_root_of(b.incr_after, b.mgr_digest_after);
        b.header.tx_root = txh.finish();
        blocks_.push_back(std::move(b));
        snapshots_.push_back(mgr_);
        return blocks_.back();
    }

    HeaderLookup header_lookup() const {
        return [this](uint64_t n) -> std::optional<Digest> {
            if (n > height()) return std::nullopt;
            // During mining n == height()+1 is the block under construction;
            // evidence can only reference sealed blocks.
            return blocks_[n].header.digest();
        };
    }

  private:
    ChainParams params_;
    const CryptoContext* ctx_;
    ManagerState mgr_;
    std::vector<Block> blocks_;
    std::vector<ManagerState> snapshots_;
    std::vector<RelevantTx> mempool_;
};

// A fake chain extension grafted onto a real prefix, used by withholding and
// sidechain feeds. Headers link correctly but commit to whatever state the
// forger wants, so they fail proof checks and carry no valid new txs.
class SidechainForger {
  public:
    SidechainForger(const Chain& base, uint64_t fork_height) {
        BlockHeader prev = base.header(fork_height);
        parent_digest_ = prev.digest();
        next_number_ = fork_height + 1;
        last_ts_ = prev.timestamp;
    }

    BlockHeader forge(int64_t now, uint64_t salt = 0) {
        Hasher fake;
        fake.update("pose.sidechain");
        fake.update_u64(next_number_);
        fake.update_u64(salt);
        return forge_root(now, fake.finish());
    }

    // The strongest forgery: a header whose state root genuinely commits to
    // the chosen incr digest and manager digest. Proofs against it verify,
    // so a feed built on it passes every structural check. What the forger
    // still cannot do is forge the signatures inside transactions, so the
    // only consistent claim is "no new relevant transactions happened".
    BlockHeader forge_committing(int64_t now, const Digest& incr, const Digest& mgr) {
        return forge_root(now, state_root_of(incr, mgr));
    }

  private:
    BlockHeader forge_root(int64_t now, const Digest& root) {
        BlockHeader h;
        h.number = next_number_++;
        h.parent = parent_digest_;
        h.timestamp = now > last_ts_ ? now : last_ts_ + 1;
        last_ts_ = h.timestamp;
        h.state_root = root;
        h.tx_root = kZeroDigest;
        parent_digest_ = h.digest();
        return h;
    }

    Digest parent_digest_;
    uint64_t next_number_ = 0;
    int64_t last_ts_ = 0;
};

}  // namespace pose
