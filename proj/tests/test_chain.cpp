#include <gtest/gtest.h>

#include "pose/chain.hpp"

using namespace pose;

namespace {

struct ChainFx : ::testing::Test {
    CryptoContext ctx{13};
    Digest program = sha256(str_bytes("prog"));
    ChainParams params{3, 1000};
    ManagerConfig mcfg;
    PartyId op = ctx.new_party(PartyKind::Operator, "op");
    PartyId e0 = ctx.new_party(PartyKind::Enclave, "e0");
    PartyId e1 = ctx.new_party(PartyKind::Enclave, "e1");

    ChainFx() {
        mcfg.expected_program = program;
        mcfg.slack_on_blocks = 10;
    }

    RelevantTx register_tx(Chain& chain, const PartyId& enclave) {
        RegisterMsg r;
        r.enclave = enclave;
        r.quote = ctx.quote(enclave, program);
        uint64_t at = chain.height();
        r.evidence = make_signed(ctx, enclave, ChainEvidence{at, chain.header(at).digest()});
        RelevantTx tx;
        tx.data = encode_call(CallKind::Register, make_signed(ctx, op, r));
        tx.sender = op;
        return tx;
    }
};

TEST_F(ChainFx, GenesisCommitsToEmptyState) {
    Chain chain(params, mcfg, &ctx);
    EXPECT_EQ(chain.height(), 0u);
    EXPECT_EQ(chain.finalized_height(), 0u);
    const Block& g = chain.block(0);
    EXPECT_EQ(g.incr_after, kZeroDigest);
    EXPECT_EQ(g.header.state_root, state_root_of(kZeroDigest, chain.manager().digest()));
    EXPECT_TRUE(chain.prove_incr(0).verify(g.header));
}

TEST_F(ChainFx, HeadersLinkAndTimestampsIncrease) {
    Chain chain(params, mcfg, &ctx);
    chain.mine_block(1015);
    chain.mine_block(1030);
    EXPECT_EQ(chain.height(), 2u);
    EXPECT_EQ(chain.header(1).parent, chain.header(0).digest());
    EXPECT_EQ(chain.header(2).parent, chain.header(1).digest());
    EXPECT_EQ(chain.header(2).number, 2u);
    EXPECT_THROW(chain.mine_block(1030), std::logic_error);
    EXPECT_THROW(chain.mine_block(900), std::logic_error);
}

TEST_F(ChainFx, FinalityLagsByGamma) {
    Chain chain(params, mcfg, &ctx);
    for (int i = 1; i <= 5; i++) chain.mine_block(1000 + 15 * i);
    EXPECT_EQ(chain.height(), 5u);
    EXPECT_EQ(chain.finalized_height(), 2u);  // gamma = 3
}

TEST_F(ChainFx, AcceptedTxFoldsIntoIncrHash) {
    Chain chain(params, mcfg, &ctx);
    chain.submit(register_tx(chain, e0));
    const Block& b = chain.mine_block(1015);
    ASSERT_EQ(b.txs.size(), 1u);
    ASSERT_EQ(b.outcomes.size(), 1u);
    EXPECT_TRUE(b.outcomes[0].accepted);
    EXPECT_TRUE(chain.manager().is_registered(e0));

    Digest expect = incr_hash_update(kZeroDigest, b.txs[0]);
    EXPECT_EQ(b.incr_after, expect);
    EXPECT_EQ(b.header.state_root, state_root_of(expect, chain.manager().digest()));

    IncrProof proof = chain.prove_incr(1);
    EXPECT_TRUE(proof.verify(chain.header(1)));
    IncrProof bent = proof;
    bent.incr[0] ^= 1;
    EXPECT_FALSE(bent.verify(chain.header(1)));
    EXPECT_FALSE(proof.verify(chain.header(0)));
}

TEST_F(ChainFx, RejectedTxLeavesNoTrace) {
    Chain chain(params, mcfg, &ctx);
    RelevantTx junk;
    junk.data = str_bytes("junk");
    junk.sender = op;
    chain.submit(junk);
    const Block& b = chain.mine_block(1015);
    EXPECT_TRUE(b.txs.empty());
    ASSERT_EQ(b.outcomes.size(), 1u);
    EXPECT_FALSE(b.outcomes[0].accepted);
    EXPECT_EQ(b.outcomes[0].reason, Reject::ParseError);
    EXPECT_EQ(b.incr_after, kZeroDigest);
    EXPECT_EQ(b.header.state_root, chain.header(0).state_root);
}

TEST_F(ChainFx, FoldDetectsOmissionAndReorder) {
    Chain chain(params, mcfg, &ctx);
    chain.submit(register_tx(chain, e0));
    chain.submit(register_tx(chain, e1));
    const Block& b = chain.mine_block(1015);
    ASSERT_EQ(b.txs.size(), 2u);

    Digest full = incr_hash_update(incr_hash_update(kZeroDigest, b.txs[0]), b.txs[1]);
    EXPECT_EQ(b.incr_after, full);

    Digest omitted0 = incr_hash_update(kZeroDigest, b.txs[1]);
    Digest omitted1 = incr_hash_update(kZeroDigest, b.txs[0]);
    Digest reordered = incr_hash_update(incr_hash_update(kZeroDigest, b.txs[1]), b.txs[0]);
    EXPECT_NE(omitted0, full);
    EXPECT_NE(omitted1, full);
    EXPECT_NE(reordered, full);
}

TEST_F(ChainFx, TxLogSlicesByHeight) {
    Chain chain(params, mcfg, &ctx);
    chain.submit(register_tx(chain, e0));
    chain.mine_block(1015);
    chain.mine_block(1030);
    chain.submit(register_tx(chain, e1));
    chain.mine_block(1045);

    auto all = chain.tx_log(0, chain.height());
    ASSERT_EQ(all.size(), 2u);
    EXPECT_EQ(all[0].first, 1u);
    EXPECT_EQ(all[1].first, 3u);

    EXPECT_TRUE(chain.tx_log(1, 2).empty());
    EXPECT_EQ(chain.tx_log(2, 3).size(), 1u);
    EXPECT_EQ(chain.tx_log(3, 3).size(), 0u);
}

TEST_F(ChainFx, SnapshotsAreImmutable) {
    Chain chain(params, mcfg, &ctx);
    chain.submit(register_tx(chain, e0));
    chain.mine_block(1015);
    EXPECT_FALSE(chain.manager_at(0).is_registered(e0));
    EXPECT_TRUE(chain.manager_at(1).is_registered(e0));
    chain.mine_block(1030);
    EXPECT_TRUE(chain.manager_at(2).is_registered(e0));
    EXPECT_FALSE(chain.manager_at(0).is_registered(e0));
}

TEST_F(ChainFx, MempoolDrainsOnMine) {
    Chain chain(params, mcfg, &ctx);
    chain.submit(register_tx(chain, e0));
    EXPECT_EQ(chain.mempool_size(), 1u);
    chain.mine_block(1015);
    EXPECT_EQ(chain.mempool_size(), 0u);
    const Block& b = chain.mine_block(1030);
    EXPECT_TRUE(b.txs.empty());
}

TEST_F(ChainFx, HeaderRangeClamps) {
    Chain chain(params, mcfg, &ctx);
    chain.mine_block(1015);
    chain.mine_block(1030);
    auto hs = chain.headers(1, 10);
    ASSERT_EQ(hs.size(), 2u);
    EXPECT_EQ(hs[0].number, 1u);
    EXPECT_EQ(hs[1].number, 2u);
    EXPECT_TRUE(chain.headers(5, 9).empty());
}

TEST_F(ChainFx, SidechainLinksButLies) {
    Chain chain(params, mcfg, &ctx);
    for (int i = 1; i <= 4; i++) chain.mine_block(1000 + 15 * i);

    SidechainForger forger(chain, 2);
    BlockHeader f3 = forger.forge(1100);
    BlockHeader f4 = forger.forge(1120);
    EXPECT_EQ(f3.number, 3u);
    EXPECT_EQ(f3.parent, chain.header(2).digest());
    EXPECT_EQ(f4.parent, f3.digest());
    EXPECT_NE(f3.digest(), chain.header(3).digest());
    // Forged roots do not verify any honest proof.
    EXPECT_FALSE(chain.prove_incr(3).verify(f3));
}

TEST_F(ChainFx, HeaderEncodingRoundTrip) {
    Chain chain(params, mcfg, &ctx);
    chain.mine_block(1015);
    BlockHeader h = chain.header(1);
    Encoder e;
    h.encode(e);
    Decoder d(e.bytes());
    BlockHeader back = BlockHeader::decode(d);
    EXPECT_EQ(back, h);
    EXPECT_EQ(back.digest(), h.digest());
}

}  // namespace
