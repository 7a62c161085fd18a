#include <gtest/gtest.h>

#include "pose/manager.hpp"

using namespace pose;

namespace {

// Fast block-unit deadlines so expiry is easy to stage.
ManagerConfig fast_cfg(const Digest& program) {
    ManagerConfig cfg;
    cfg.expected_program = program;
    cfg.slack_on_blocks = 10;
    cfg.on_exec_blocks = 20;
    cfg.on_prop_blocks = 4;
    cfg.on_create_blocks = 20;
    cfg.on_create_prop_blocks = 4;
    return cfg;
}

struct ManagerFx : ::testing::Test {
    CryptoContext ctx{7};
    Digest program = sha256(str_bytes("enclave-program"));
    ManagerState mgr;
    PartyId user = ctx.new_party(PartyKind::User, "user");
    PartyId op = ctx.new_party(PartyKind::Operator, "op");
    PartyId e0 = ctx.new_party(PartyKind::Enclave, "e0");
    PartyId e1 = ctx.new_party(PartyKind::Enclave, "e1");
    PartyId e2 = ctx.new_party(PartyKind::Enclave, "e2");
    PartyId e3 = ctx.new_party(PartyKind::Enclave, "e3");
    Bytes code = str_bytes("counter");
    HeaderLookup no_headers = [](uint64_t) { return std::nullopt; };

    ManagerFx() { mgr.cfg = fast_cfg(program); }

    template <typename M>
    RelevantTx tx_signed(CallKind kind, const PartyId& signer, M msg, uint64_t value = 0) {
        RelevantTx tx;
        tx.data = encode_call(kind, make_signed(ctx, signer, std::move(msg)));
        tx.sender = signer;
        tx.value = value;
        return tx;
    }
    template <typename M>
    RelevantTx tx_plain(CallKind kind, const PartyId& sender, M msg) {
        RelevantTx tx;
        tx.data = encode_call(kind, std::move(msg));
        tx.sender = sender;
        tx.value = 0;
        return tx;
    }

    // Installs a finalized record directly; registration and creation have
    // their own tests.
    ContractId install(std::vector<PartyId> pool, uint64_t balance = 0) {
        ContractId cid = 0;
        while (mgr.contracts.count(cid)) cid++;
        ManagerRecord rec;
        rec.code_hash = sha256(code);
        rec.pool = std::move(pool);
        rec.balance = balance;
        rec.created_at = 1;
        mgr.contracts.emplace(cid, rec);
        return cid;
    }

    ContractId pending_creation(const PartyId& creator) {
        ContractId cid = 0;
        while (mgr.contracts.count(cid)) cid++;
        ManagerRecord rec;
        rec.creator = creator;
        rec.code_hash = sha256(code);
        rec.created_at = 1;
        mgr.contracts.emplace(cid, rec);
        return cid;
    }

    ApplyOutcome apply(const RelevantTx& tx, uint64_t height) {
        return mgr.apply(tx, height, no_headers, ctx);
    }

    Signed<ExecuteMsg> exec_msg(ContractId cid, uint64_t nonce = 1) {
        ExecuteMsg m;
        m.cid = cid;
        m.nonce = nonce;
        return make_signed(ctx, user, m);
    }
    Signed<UpdateMsg> update_msg(ContractId cid, const Digest& h) {
        UpdateMsg m;
        m.cid = cid;
        m.h = h;
        return make_signed(ctx, mgr.contracts.at(cid).pool.at(0), m);
    }
};

// --- registration ---

TEST_F(ManagerFx, RegisterHappyPath) {
    Digest blk = sha256(str_bytes("block-5"));
    HeaderLookup lookup = [&](uint64_t n) -> std::optional<Digest> {
        return n == 5 ? std::optional(blk) : std::nullopt;
    };
    RegisterMsg r;
    r.enclave = e0;
    r.quote = ctx.quote(e0, program);
    r.evidence = make_signed(ctx, e0, ChainEvidence{5, blk});
    RelevantTx tx;
    tx.data = encode_call(CallKind::Register, make_signed(ctx, op, r));
    tx.sender = op;
    auto out = mgr.apply(tx, 8, lookup, ctx);
    EXPECT_TRUE(out.accepted);
    ASSERT_TRUE(out.registered.has_value());
    EXPECT_EQ(*out.registered, e0);
    EXPECT_TRUE(mgr.is_registered(e0));

    // Same enclave cannot register twice.
    auto dup = mgr.apply(tx, 9, lookup, ctx);
    EXPECT_FALSE(dup.accepted);
    EXPECT_EQ(dup.reason, Reject::DuplicateTee);
}

TEST_F(ManagerFx, RegisterRejections) {
    Digest blk = sha256(str_bytes("block-5"));
    HeaderLookup lookup = [&](uint64_t n) -> std::optional<Digest> {
        return n == 5 ? std::optional(blk) : std::nullopt;
    };
    auto base = [&]() {
        RegisterMsg r;
        r.enclave = e0;
        r.quote = ctx.quote(e0, program);
        r.evidence = make_signed(ctx, e0, ChainEvidence{5, blk});
        return r;
    };
    auto submit = [&](const RegisterMsg& r, uint64_t height) {
        RelevantTx tx;
        tx.data = encode_call(CallKind::Register, make_signed(ctx, op, r));
        tx.sender = op;
        return mgr.apply(tx, height, lookup, ctx);
    };

    // Quote for a different program digest.
    RegisterMsg wrong_prog = base();
    wrong_prog.quote = ctx.quote(e0, sha256(str_bytes("evil-program")));
    EXPECT_EQ(submit(wrong_prog, 8).reason, Reject::BadQuote);

    // Quote naming a different enclave than the registration.
    RegisterMsg wrong_enclave = base();
    wrong_enclave.quote = ctx.quote(e1, program);
    EXPECT_EQ(submit(wrong_enclave, 8).reason, Reject::BadQuote);

    // Evidence signed by a party other than the enclave.
    RegisterMsg foreign_ev = base();
    foreign_ev.evidence = make_signed(ctx, e1, ChainEvidence{5, blk});
    EXPECT_EQ(submit(foreign_ev, 8).reason, Reject::BadEvidence);

    // Evidence older than the freshness slack.
    EXPECT_EQ(submit(base(), 5 + mgr.cfg.slack_on_blocks + 1).reason, Reject::StaleEvidence);
    EXPECT_TRUE(submit(base(), 5 + mgr.cfg.slack_on_blocks).accepted);

    mgr.tees.clear();
    // Evidence digest disagreeing with the chain.
    RegisterMsg bad_digest = base();
    bad_digest.evidence = make_signed(ctx, e0, ChainEvidence{5, sha256(str_bytes("lie"))});
    EXPECT_EQ(submit(bad_digest, 8).reason, Reject::BadEvidence);

    // Evidence referencing a block the chain cannot resolve.
    RegisterMsg unknown_block = base();
    unknown_block.evidence = make_signed(ctx, e0, ChainEvidence{6, blk});
    EXPECT_EQ(submit(unknown_block, 8).reason, Reject::BadEvidence);

    // Operator signature must cover the registration payload.
    RegisterMsg ok = base();
    auto s = make_signed(ctx, op, ok);
    s.tag[0] ^= 1;
    RelevantTx tx;
    tx.data = encode_call(CallKind::Register, s);
    tx.sender = op;
    EXPECT_EQ(mgr.apply(tx, 8, lookup, ctx).reason, Reject::BadSignature);
}

TEST_F(ManagerFx, GarbageTxRejected) {
    RelevantTx tx;
    tx.data = str_bytes("not a call");
    tx.sender = user;
    auto out = apply(tx, 3);
    EXPECT_FALSE(out.accepted);
    EXPECT_EQ(out.reason, Reject::ParseError);
}

// --- creation record allocation ---

TEST_F(ManagerFx, CreationInitAllocatesSmallestFreeId) {
    mgr.tees = {e0, e1};
    auto out0 = apply(tx_plain(CallKind::CreationInit, op, CreationInitMsg{e0, sha256(code)}), 4);
    ASSERT_TRUE(out0.accepted);
    EXPECT_EQ(*out0.cid, 0u);
    auto out1 = apply(tx_plain(CallKind::CreationInit, op, CreationInitMsg{e1, sha256(code)}), 4);
    EXPECT_EQ(*out1.cid, 1u);

    const ManagerRecord* rec = mgr.find(0);
    ASSERT_NE(rec, nullptr);
    EXPECT_EQ(*rec->creator, e0);
    EXPECT_EQ(rec->code_hash, sha256(code));
    EXPECT_EQ(rec->created_at, 4u);
    EXPECT_TRUE(rec->pool.empty());

    auto bad = apply(tx_plain(CallKind::CreationInit, op, CreationInitMsg{e2, sha256(code)}), 4);
    EXPECT_EQ(bad.reason, Reject::UnknownEnclave);
}

// --- coins ---

TEST_F(ManagerFx, DepositChecksValueMatchesAmount) {
    ContractId cid = install({e0, e1});
    EXPECT_EQ(apply(tx_signed(CallKind::Deposit, user, DepositMsg{cid, 100}, 100), 5).accepted, true);
    EXPECT_EQ(mgr.find(cid)->balance, 100u);
    EXPECT_EQ(apply(tx_signed(CallKind::Deposit, user, DepositMsg{cid, 100}, 99), 5).reason,
              Reject::ValueMismatch);
    EXPECT_EQ(apply(tx_signed(CallKind::Deposit, user, DepositMsg{cid + 7, 1}, 1), 5).reason,
              Reject::UnknownContract);
    EXPECT_EQ(mgr.find(cid)->balance, 100u);
}

TEST_F(ManagerFx, PayoutLevelsAndOverdraw) {
    ContractId cid = install({e0, e1}, 100);
    PayoutMsg pay;
    pay.cid = cid;
    pay.level = 0;
    pay.entries = {{60, user}, {30, op}};

    EXPECT_EQ(apply(tx_signed(CallKind::Payout, e1, pay), 6).reason, Reject::NotExecutor);

    PayoutMsg wrong_level = pay;
    wrong_level.level = 1;
    EXPECT_EQ(apply(tx_signed(CallKind::Payout, e0, wrong_level), 6).reason, Reject::WrongLevel);

    PayoutMsg too_much = pay;
    too_much.entries.push_back({11, user});
    EXPECT_EQ(apply(tx_signed(CallKind::Payout, e0, too_much), 6).reason, Reject::Overdraw);

    auto out = apply(tx_signed(CallKind::Payout, e0, pay), 6);
    ASSERT_TRUE(out.accepted);
    EXPECT_EQ(out.paid.size(), 2u);
    EXPECT_EQ(mgr.find(cid)->balance, 10u);
    EXPECT_EQ(mgr.find(cid)->payout_level, 1u);

    // The same level cannot be paid twice.
    EXPECT_EQ(apply(tx_signed(CallKind::Payout, e0, pay), 7).reason, Reject::WrongLevel);
}

// --- execution challenge (cases 1..3) ---

TEST_F(ManagerFx, ExecutorChallengeLifecycle) {
    ContractId cid = install({e0, e1, e2});
    auto chal = exec_msg(cid);
    RelevantTx ctx_tx;
    ctx_tx.data = encode_call(CallKind::ChallengeExecutor, chal);
    ctx_tx.sender = user;
    auto out = apply(ctx_tx, 10);
    ASSERT_TRUE(out.accepted);
    EXPECT_EQ(out.validate_case, 1);
    const ManagerRecord* rec = mgr.find(cid);
    ASSERT_TRUE(rec->exec_chal.msg.has_value());
    EXPECT_EQ(*rec->exec_chal.msg, chal.encoded());
    EXPECT_EQ(*rec->exec_chal.block, 10u);

    // A second challenge while one is open is refused.
    EXPECT_EQ(apply(ctx_tx, 11).reason, Reject::ChallengeRunning);

    // Response must reference the stored challenge by hash.
    OkMsg ok;
    ok.cid = cid;
    ok.h = chal.digest();
    auto resp = make_signed(ctx, e0, ok);
    RelevantTx rtx;
    rtx.data = encode_call(CallKind::ExecutorResponse, resp);
    rtx.sender = op;

    OkMsg wrong;
    wrong.cid = cid;
    wrong.h = sha256(str_bytes("other"));
    EXPECT_EQ(apply(tx_signed(CallKind::ExecutorResponse, e0, wrong), 12).reason, Reject::WrongHash);
    EXPECT_EQ(apply(tx_signed(CallKind::ExecutorResponse, e1, ok), 12).reason, Reject::NotExecutor);

    // Deadline is strict: challenge at 10 with window 20 accepts through 29.
    EXPECT_EQ(apply(rtx, 10 + mgr.cfg.on_exec_blocks).reason, Reject::Expired);
    auto ok_out = apply(rtx, 10 + mgr.cfg.on_exec_blocks - 1);
    ASSERT_TRUE(ok_out.accepted);
    EXPECT_EQ(ok_out.validate_case, 2);
    rec = mgr.find(cid);
    EXPECT_FALSE(rec->exec_chal.block.has_value());
    EXPECT_FALSE(rec->exec_chal.msg.has_value());
    ASSERT_TRUE(rec->exec_chal.res.has_value());
    EXPECT_EQ(*rec->exec_chal.res, resp.encoded());

    // With the challenge answered, finalize has nothing to do.
    EXPECT_EQ(apply(tx_plain(CallKind::FinalizeTimeout, user, FinalizeMsg{1, cid}), 40).reason,
              Reject::NoChallenge);
    // And a fresh challenge may open again.
    EXPECT_TRUE(apply(ctx_tx, 41).accepted);
}

TEST_F(ManagerFx, ExecutorKickOnTimeout) {
    ContractId cid = install({e0, e1, e2});
    auto chal = exec_msg(cid);
    RelevantTx ctx_tx;
    ctx_tx.data = encode_call(CallKind::ChallengeExecutor, chal);
    ctx_tx.sender = user;
    ASSERT_TRUE(apply(ctx_tx, 10).accepted);

    auto fin = tx_plain(CallKind::FinalizeTimeout, user, FinalizeMsg{1, cid});
    EXPECT_EQ(apply(fin, 10 + mgr.cfg.on_exec_blocks - 1).reason, Reject::NotExpired);

    auto out = apply(fin, 10 + mgr.cfg.on_exec_blocks);
    ASSERT_TRUE(out.accepted);
    EXPECT_EQ(out.validate_case, 3);
    ASSERT_EQ(out.kicked.size(), 1u);
    EXPECT_EQ(out.kicked[0], e0);
    const ManagerRecord* rec = mgr.find(cid);
    EXPECT_EQ(rec->pool, (std::vector<PartyId>{e1, e2}));
    EXPECT_FALSE(rec->exec_chal.block.has_value());
    // Challenge message stays: the user resends the same bytes to e1, and a
    // successor response must still hash against it.
    EXPECT_TRUE(rec->exec_chal.msg.has_value());
    EXPECT_FALSE(rec->dead);

    // Successive timeouts drain the pool and kill the contract.
    mgr.contracts.at(cid).exec_chal.block = 50;
    EXPECT_TRUE(apply(fin, 50 + mgr.cfg.on_exec_blocks).accepted);
    mgr.contracts.at(cid).exec_chal.block = 90;
    EXPECT_TRUE(apply(fin, 90 + mgr.cfg.on_exec_blocks).accepted);
    rec = mgr.find(cid);
    EXPECT_TRUE(rec->pool.empty());
    EXPECT_TRUE(rec->dead);
}

// --- watchdog challenge (cases 4..6) ---

TEST_F(ManagerFx, WatchdogChallengeKeepsResponders) {
    ContractId cid = install({e0, e1, e2, e3});
    Digest h = sha256(str_bytes("request"));
    auto pre = update_msg(cid, h);
    RelevantTx pre_tx;
    pre_tx.data = encode_call(CallKind::ChallengeWatchdogs, pre);
    pre_tx.sender = op;

    // Only the executor can open it.
    UpdateMsg um;
    um.cid = cid;
    um.h = h;
    EXPECT_EQ(apply(tx_signed(CallKind::ChallengeWatchdogs, e1, um), 10).reason, Reject::NotExecutor);

    ASSERT_TRUE(apply(pre_tx, 10).accepted);
    EXPECT_EQ(apply(pre_tx, 11).reason, Reject::ChallengeRunning);

    auto confirm = [&](const PartyId& who, const Digest& ch) {
        return tx_signed(CallKind::WatchdogResponse, who, ConfirmExecMsg{cid, ch});
    };
    EXPECT_EQ(apply(confirm(e1, sha256(str_bytes("bogus"))), 11).reason, Reject::WrongHash);
    EXPECT_EQ(apply(confirm(e3, h), 10 + mgr.cfg.on_prop_blocks).reason, Reject::Expired);
    EXPECT_EQ(apply(tx_signed(CallKind::WatchdogResponse, user, ConfirmExecMsg{cid, h}), 11).reason,
              Reject::NotInPool);

    ASSERT_TRUE(apply(confirm(e2, h), 11).accepted);
    ASSERT_TRUE(apply(confirm(e2, h), 12).accepted);  // duplicate confirm is harmless
    EXPECT_EQ(mgr.find(cid)->watch_chal.responders.size(), 1u);

    auto fin = tx_plain(CallKind::FinalizeTimeout, op, FinalizeMsg{2, cid});
    EXPECT_EQ(apply(fin, 12).reason, Reject::NotExpired);
    auto out = apply(fin, 10 + mgr.cfg.on_prop_blocks);
    ASSERT_TRUE(out.accepted);
    EXPECT_EQ(out.validate_case, 6);
    // Executor survives by construction, e2 responded, e1 and e3 are out.
    EXPECT_EQ(mgr.find(cid)->pool, (std::vector<PartyId>{e0, e2}));
    EXPECT_EQ(out.kicked, (std::vector<PartyId>{e1, e3}));
    EXPECT_FALSE(mgr.find(cid)->watch_chal.block.has_value());
    EXPECT_FALSE(mgr.find(cid)->dead);
}

TEST_F(ManagerFx, WatchdogOrderPreservedOnFinalize) {
    ContractId cid = install({e0, e1, e2, e3});
    Digest h = sha256(str_bytes("r"));
    auto pre = update_msg(cid, h);
    RelevantTx pre_tx;
    pre_tx.data = encode_call(CallKind::ChallengeWatchdogs, pre);
    pre_tx.sender = op;
    ASSERT_TRUE(apply(pre_tx, 10).accepted);
    // Confirm in reverse order; the surviving pool keeps the original order.
    ASSERT_TRUE(apply(tx_signed(CallKind::WatchdogResponse, e3, ConfirmExecMsg{cid, h}), 11).accepted);
    ASSERT_TRUE(apply(tx_signed(CallKind::WatchdogResponse, e1, ConfirmExecMsg{cid, h}), 11).accepted);
    ASSERT_TRUE(apply(tx_plain(CallKind::FinalizeTimeout, op, FinalizeMsg{2, cid}),
                      10 + mgr.cfg.on_prop_blocks)
                    .accepted);
    EXPECT_EQ(mgr.find(cid)->pool, (std::vector<PartyId>{e0, e1, e3}));
}

// --- creation challenges (cases 7..12) ---

TEST_F(ManagerFx, CreatorChallengeAndStatement) {
    ContractId cid = pending_creation(e0);

    CreateRequestMsg req;
    req.cid = cid;
    req.code = code;
    auto chal_tx = tx_plain(CallKind::ChallengeCreator, user, req);

    CreateRequestMsg wrong;
    wrong.cid = cid;
    wrong.code = str_bytes("different code");
    EXPECT_EQ(apply(tx_plain(CallKind::ChallengeCreator, user, wrong), 10).reason, Reject::WrongCode);

    ASSERT_TRUE(apply(chal_tx, 10).accepted);
    EXPECT_EQ(apply(chal_tx, 11).reason, Reject::ChallengeRunning);

    // Statement from a non-creator enclave is refused.
    CreationStatementMsg st;
    st.cid = cid;
    st.pool = {e0, e1, e2};
    EXPECT_EQ(apply(tx_signed(CallKind::FinalizeCreation, e1, st), 12).reason, Reject::NotCreator);

    // Late statement is refused, timely one finalizes the record.
    EXPECT_EQ(apply(tx_signed(CallKind::FinalizeCreation, e0, st), 10 + mgr.cfg.on_create_blocks).reason,
              Reject::Expired);
    auto out = apply(tx_signed(CallKind::FinalizeCreation, e0, st), 12);
    ASSERT_TRUE(out.accepted);
    EXPECT_EQ(out.validate_case, 8);
    const ManagerRecord* rec = mgr.find(cid);
    EXPECT_FALSE(rec->creator.has_value());
    EXPECT_EQ(rec->pool, st.pool);
    EXPECT_FALSE(rec->exec_chal.msg.has_value());
    EXPECT_FALSE(rec->dead);
}

TEST_F(ManagerFx, StatementWithoutChallengeFinalizes) {
    ContractId cid = pending_creation(e0);
    CreationStatementMsg st;
    st.cid = cid;
    st.pool = {e0, e1};
    EXPECT_TRUE(apply(tx_signed(CallKind::FinalizeCreation, e0, st), 5).accepted);
    EXPECT_EQ(mgr.find(cid)->pool, st.pool);
}

TEST_F(ManagerFx, CreatorTimeoutKillsCreation) {
    ContractId cid = pending_creation(e0);
    CreateRequestMsg req;
    req.cid = cid;
    req.code = code;
    ASSERT_TRUE(apply(tx_plain(CallKind::ChallengeCreator, user, req), 10).accepted);

    auto fin = tx_plain(CallKind::FinalizeTimeout, user, FinalizeMsg{1, cid});
    EXPECT_EQ(apply(fin, 10 + mgr.cfg.on_create_blocks - 1).reason, Reject::NotExpired);
    auto out = apply(fin, 10 + mgr.cfg.on_create_blocks);
    ASSERT_TRUE(out.accepted);
    EXPECT_EQ(out.validate_case, 9);
    EXPECT_TRUE(mgr.find(cid)->pool.empty());
    EXPECT_TRUE(mgr.find(cid)->dead);

    // A statement after the kill is still guarded by the (kept) creator and
    // expired challenge.
    CreationStatementMsg st;
    st.cid = cid;
    st.pool = {e0};
    EXPECT_EQ(apply(tx_signed(CallKind::FinalizeCreation, e0, st), 35).reason, Reject::Expired);
}

TEST_F(ManagerFx, CreationFailedMarksCrashed) {
    ContractId cid = pending_creation(e0);
    auto out = apply(tx_signed(CallKind::CreationFailed, e0, CreationFailedMsg{cid}), 6);
    ASSERT_TRUE(out.accepted);
    const ManagerRecord* rec = mgr.find(cid);
    EXPECT_TRUE(rec->dead);
    EXPECT_TRUE(rec->pool.empty());
    EXPECT_FALSE(rec->creator.has_value());
}

TEST_F(ManagerFx, CreationPoolChallenge) {
    ContractId cid = pending_creation(e0);
    PoolInitMsg pi;
    pi.cid = cid;
    pi.pool = {e1, e2, e3};
    pi.code = code;
    auto pre = make_signed(ctx, e0, pi);
    RelevantTx pre_tx;
    pre_tx.data = encode_call(CallKind::ChallengePool, pre);
    pre_tx.sender = op;

    // Only the creator can open a creation pool challenge.
    EXPECT_EQ(apply(tx_signed(CallKind::ChallengePool, e1, pi), 10).reason, Reject::NotCreator);

    ASSERT_TRUE(apply(pre_tx, 10).accepted);
    EXPECT_EQ(mgr.find(cid)->pool, pi.pool);  // provisional, for membership checks
    EXPECT_EQ(apply(pre_tx, 11).reason, Reject::ChallengeRunning);

    EXPECT_EQ(apply(tx_signed(CallKind::PoolResponse, e0, ConfirmCreateMsg{cid, false}), 11).reason,
              Reject::NotInPool);
    ASSERT_TRUE(apply(tx_signed(CallKind::PoolResponse, e2, ConfirmCreateMsg{cid, false}), 11).accepted);
    EXPECT_EQ(apply(tx_signed(CallKind::PoolResponse, e3, ConfirmCreateMsg{cid, false}),
                    10 + mgr.cfg.on_create_prop_blocks)
                  .reason,
              Reject::Expired);

    auto fin = tx_plain(CallKind::FinalizeTimeout, op, FinalizeMsg{2, cid});
    auto out = apply(fin, 10 + mgr.cfg.on_create_prop_blocks);
    ASSERT_TRUE(out.accepted);
    EXPECT_EQ(out.validate_case, 12);
    // No head privilege during creation: only responders survive.
    EXPECT_EQ(mgr.find(cid)->pool, (std::vector<PartyId>{e2}));
    EXPECT_EQ(out.kicked, (std::vector<PartyId>{e1, e3}));
    ASSERT_TRUE(mgr.find(cid)->creator.has_value());  // creation still pending
}

TEST_F(ManagerFx, OnChainFailConfirmationCrashesContract) {
    ContractId cid = pending_creation(e0);
    PoolInitMsg pi;
    pi.cid = cid;
    pi.pool = {e1, e2};
    pi.code = code;
    ASSERT_TRUE(apply(tx_signed(CallKind::ChallengePool, e0, pi), 10).accepted);
    auto out = apply(tx_signed(CallKind::PoolResponse, e1, ConfirmCreateMsg{cid, true}), 11);
    ASSERT_TRUE(out.accepted);
    const ManagerRecord* rec = mgr.find(cid);
    EXPECT_TRUE(rec->dead);
    EXPECT_TRUE(rec->pool.empty());
    EXPECT_FALSE(rec->creator.has_value());
}

// --- dynamic timeout extensions ---

TEST_F(ManagerFx, DynamicExtensionsGrowDeadline) {
    mgr.cfg.dynamic_timeouts = true;
    mgr.cfg.ext_challenge_blocks = 6;
    mgr.cfg.ext_kick_blocks = 9;
    ContractId cid = install({e0, e1, e2});

    auto chal = exec_msg(cid);
    RelevantTx chal_tx;
    chal_tx.data = encode_call(CallKind::ChallengeExecutor, chal);
    chal_tx.sender = user;
    ASSERT_TRUE(apply(chal_tx, 10).accepted);

    // Nested watchdog challenge extends the executor deadline, at most twice.
    Digest h = chal.digest();
    for (int round = 0; round < 3; round++) {
        auto pre = update_msg(cid, h);
        RelevantTx pre_tx;
        pre_tx.data = encode_call(CallKind::ChallengeWatchdogs, pre);
        pre_tx.sender = op;
        ASSERT_TRUE(apply(pre_tx, 11 + round * 5).accepted);
        auto out = apply(tx_plain(CallKind::FinalizeTimeout, op, FinalizeMsg{2, cid}),
                         11 + round * 5 + mgr.cfg.on_prop_blocks);
        ASSERT_TRUE(out.accepted);
    }
    const ManagerRecord* rec = mgr.find(cid);
    // Challenge extensions are capped at two; the kick extension fired only
    // in round 0, after which the pool held just the executor and later
    // finalizations kicked nobody.
    EXPECT_EQ(rec->exec_chal.extension_blocks, 2u * 6 + 1u * 9);
    EXPECT_EQ(rec->exec_chal.extensions_used, 2);

    // The executor-challenge expiry honors the extension.
    uint64_t base_deadline = 10 + mgr.cfg.on_exec_blocks;
    auto fin1 = tx_plain(CallKind::FinalizeTimeout, user, FinalizeMsg{1, cid});
    EXPECT_EQ(apply(fin1, base_deadline).reason, Reject::NotExpired);
    EXPECT_TRUE(apply(fin1, base_deadline + rec->exec_chal.extension_blocks).accepted);
}

TEST_F(ManagerFx, NoExtensionsWhenDynamicDisabled) {
    ContractId cid = install({e0, e1});
    auto chal = exec_msg(cid);
    RelevantTx chal_tx;
    chal_tx.data = encode_call(CallKind::ChallengeExecutor, chal);
    chal_tx.sender = user;
    ASSERT_TRUE(apply(chal_tx, 10).accepted);
    auto pre = update_msg(cid, chal.digest());
    RelevantTx pre_tx;
    pre_tx.data = encode_call(CallKind::ChallengeWatchdogs, pre);
    pre_tx.sender = op;
    ASSERT_TRUE(apply(pre_tx, 11).accepted);
    EXPECT_EQ(mgr.find(cid)->exec_chal.extension_blocks, 0u);
}

// --- state digest ---

TEST_F(ManagerFx, DigestTracksState) {
    Digest d0 = mgr.digest();
    ContractId cid = install({e0, e1});
    Digest d1 = mgr.digest();
    EXPECT_NE(d0, d1);
    ManagerState copy = mgr;
    EXPECT_EQ(copy.digest(), d1);
    ASSERT_TRUE(apply(tx_signed(CallKind::Deposit, user, DepositMsg{cid, 5}, 5), 4).accepted);
    EXPECT_NE(mgr.digest(), d1);
    EXPECT_EQ(copy.digest(), d1);
}

// --- independent guard oracle ---
//
// A second, deliberately flat implementation of the twelve guard sets,
// written as one boolean expression per case. Randomized records and
// messages, including near-deadline boundaries and tampered signatures, must
// produce the same accept/reject verdicts from both implementations.
bool oracle_ok(int c, const ManagerCall& call, const ManagerRecord* r, uint64_t L,
               const ManagerConfig& cfg, const CryptoContext& ctx) {
    if (!r) return false;
    uint64_t d1 = cfg.on_exec_blocks + r->exec_chal.extension_blocks;
    auto head_is = [&](const PartyId& p) { return !r->pool.empty() && r->pool[0] == p; };
    auto in_pool = [&](const PartyId& p) { return r->in_pool(p); };
    switch (c) {
        case 1: {
            const auto& m = std::get<Signed<ExecuteMsg>>(call.body);
            return !r->creator && !r->exec_chal.block && verify_signed(ctx, m);
        }
        case 2: {
            const auto& m = std::get<Signed<OkMsg>>(call.body);
            return !r->creator && r->exec_chal.msg && sha256(*r->exec_chal.msg) == m.msg.h &&
                   r->exec_chal.block && *r->exec_chal.block + d1 > L && verify_signed(ctx, m) &&
                   head_is(m.signer);
        }
        case 3:
            return !r->creator && r->exec_chal.msg && r->exec_chal.block &&
                   *r->exec_chal.block + d1 <= L;
        case 4: {
            const auto& m = std::get<Signed<UpdateMsg>>(call.body);
            return !r->creator && !r->watch_chal.block && head_is(m.signer) && verify_signed(ctx, m);
        }
        case 5: {
            const auto& m = std::get<Signed<ConfirmExecMsg>>(call.body);
            if (r->creator || !r->watch_chal.msg || !r->watch_chal.block) return false;
            Digest h;
            try {
                h = Signed<UpdateMsg>::decode_from(*r->watch_chal.msg).msg.h;
            } catch (const DecodeError&) {
                return false;
            }
            return m.msg.h == h && *r->watch_chal.block + cfg.on_prop_blocks > L &&
                   verify_signed(ctx, m) && in_pool(m.signer);
        }
        case 6:
            return !r->creator && r->watch_chal.block && *r->watch_chal.block + cfg.on_prop_blocks <= L;
        case 7: {
            const auto& m = std::get<CreateRequestMsg>(call.body);
            return r->creator && !r->exec_chal.block && sha256(m.code) == r->code_hash;
        }
        case 8: {
            if (call.kind == CallKind::FinalizeCreation) {
                const auto& m = std::get<Signed<CreationStatementMsg>>(call.body);
                return r->creator && m.signer == *r->creator &&
                       (!r->exec_chal.block || *r->exec_chal.block + cfg.on_create_blocks > L) &&
                       verify_signed(ctx, m);
            }
            const auto& m = std::get<Signed<CreationFailedMsg>>(call.body);
            return r->creator && m.signer == *r->creator &&
                   (!r->exec_chal.block || *r->exec_chal.block + cfg.on_create_blocks > L) &&
                   verify_signed(ctx, m);
        }
        case 9:
            return r->creator && r->exec_chal.block && *r->exec_chal.block + cfg.on_create_blocks <= L;
        case 10: {
            const auto& m = std::get<Signed<PoolInitMsg>>(call.body);
            return r->creator && m.signer == *r->creator && !r->watch_chal.block &&
                   verify_signed(ctx, m);
        }
        case 11: {
            const auto& m = std::get<Signed<ConfirmCreateMsg>>(call.body);
            return r->creator && r->watch_chal.block &&
                   *r->watch_chal.block + cfg.on_create_prop_blocks > L && verify_signed(ctx, m) &&
                   in_pool(m.signer);
        }
        case 12:
            return r->creator && r->watch_chal.block &&
                   *r->watch_chal.block + cfg.on_create_prop_blocks <= L;
    }
    return false;
}

TEST_F(ManagerFx, ValidateAgreesWithGuardOracle) {
    Rng rng(20240816);
    std::vector<PartyId> parties = {user, op, e0, e1, e2, e3};
    ManagerState probe;
    probe.cfg = mgr.cfg;

    int checked = 0;
    for (int iter = 0; iter < 4000; iter++) {
        ManagerRecord rec;
        if (rng.below(2)) rec.creator = parties[rng.below(parties.size())];
        rec.code_hash = rng.below(2) ? sha256(code) : sha256(str_bytes("other"));
        size_t pool_n = rng.below(4);
        for (size_t i = 0; i < pool_n; i++) rec.pool.push_back(parties[2 + rng.below(4)]);

        uint64_t latest = 100;
        auto maybe_block = [&](uint64_t window) -> std::optional<uint64_t> {
            if (rng.below(3) == 0) return std::nullopt;
            // Land near the deadline boundary on purpose: block + window
            // ends up in latest-2 .. latest+2.
            uint64_t start = latest > window + 2 ? latest - window - 2 : 0;
            return start + rng.below(5);
        };
        Digest req_h = sha256(str_bytes("req"));
        auto stored_exec = make_signed(ctx, user, ExecuteMsg{0, rng.below(3), {}, {}});
        if (rng.below(2)) {
            rec.exec_chal.msg = rng.below(4) ? stored_exec.encoded() : str_bytes("junk");
            rec.exec_chal.block = maybe_block(probe.cfg.on_exec_blocks);
            rec.exec_chal.extension_blocks = rng.below(2) * 3;
        }
        UpdateMsg upm;
        upm.cid = 0;
        upm.h = rng.below(2) ? req_h : sha256(str_bytes("other-h"));
        auto stored_pre = make_signed(ctx, rec.pool.empty() ? e0 : rec.pool[0], upm);
        if (rng.below(2)) {
            rec.watch_chal.msg = rng.below(4) ? stored_pre.encoded() : str_bytes("junk");
            rec.watch_chal.block = maybe_block(probe.cfg.on_prop_blocks);
        }

        auto signer = [&]() { return parties[rng.below(parties.size())]; };
        auto maybe_tamper = [&](auto s) {
            if (rng.below(4) == 0) s.tag[0] ^= 1;
            return s;
        };

        for (int c = 1; c <= 12; c++) {
            ManagerCall call;
            switch (c) {
                case 1:
                    call.kind = CallKind::ChallengeExecutor;
                    call.body = maybe_tamper(make_signed(ctx, signer(), ExecuteMsg{0, 1, {}, {}}));
                    break;
                case 2: {
                    OkMsg ok;
                    ok.cid = 0;
                    ok.h = rng.below(2) ? stored_exec.digest() : sha256(str_bytes("wrong"));
                    call.kind = CallKind::ExecutorResponse;
                    call.body = maybe_tamper(make_signed(ctx, signer(), ok));
                    break;
                }
                case 3:
                case 9:
                    call.kind = CallKind::FinalizeTimeout;
                    call.body = FinalizeMsg{1, 0};
                    break;
                case 6:
                case 12:
                    call.kind = CallKind::FinalizeTimeout;
                    call.body = FinalizeMsg{2, 0};
                    break;
                case 4: {
                    UpdateMsg m;
                    m.cid = 0;
                    m.h = req_h;
                    call.kind = CallKind::ChallengeWatchdogs;
                    call.body = maybe_tamper(make_signed(ctx, signer(), m));
                    break;
                }
                case 5: {
                    ConfirmExecMsg m{0, rng.below(2) ? upm.h : sha256(str_bytes("zz"))};
                    call.kind = CallKind::WatchdogResponse;
                    call.body = maybe_tamper(make_signed(ctx, signer(), m));
                    break;
                }
                case 7: {
                    CreateRequestMsg m;
                    m.cid = 0;
                    m.code = rng.below(2) ? code : str_bytes("other");
                    call.kind = CallKind::ChallengeCreator;
                    call.body = m;
                    break;
                }
                case 8:
                    if (rng.below(2)) {
                        CreationStatementMsg m;
                        m.cid = 0;
                        m.pool = {e0};
                        call.kind = CallKind::FinalizeCreation;
                        call.body = maybe_tamper(make_signed(ctx, signer(), m));
                    } else {
                        call.kind = CallKind::CreationFailed;
                        call.body = maybe_tamper(make_signed(ctx, signer(), CreationFailedMsg{0}));
                    }
                    break;
                case 10: {
                    PoolInitMsg m;
                    m.cid = 0;
                    m.pool = {e1, e2};
                    m.code = code;
                    call.kind = CallKind::ChallengePool;
                    call.body = maybe_tamper(make_signed(ctx, signer(), m));
                    break;
                }
                case 11: {
                    ConfirmCreateMsg m{0, false};
                    call.kind = CallKind::PoolResponse;
                    call.body = maybe_tamper(make_signed(ctx, signer(), m));
                    break;
                }
            }
            bool impl_ok = probe.validate(c, call, &rec, latest, ctx) == Reject::None;
            bool oracle = oracle_ok(c, call, &rec, latest, probe.cfg, ctx);
            ASSERT_EQ(impl_ok, oracle) << "case " << c << " iter " << iter;
            checked++;
        }
    }
    EXPECT_EQ(checked, 4000 * 12);
}

// --- call codec ---

TEST_F(ManagerFx, CallCodecRoundTrip) {
    auto chal = exec_msg(3);
    Bytes b = encode_call(CallKind::ChallengeExecutor, chal);
    ManagerCall c = decode_call(b);
    EXPECT_EQ(c.kind, CallKind::ChallengeExecutor);
    EXPECT_EQ(std::get<Signed<ExecuteMsg>>(c.body).encoded(), chal.encoded());
    EXPECT_EQ(encode_call(c), b);

    Bytes fin = encode_call(CallKind::FinalizeTimeout, FinalizeMsg{2, 9});
    ManagerCall f = decode_call(fin);
    EXPECT_EQ(std::get<FinalizeMsg>(f.body).cid, 9u);

    EXPECT_THROW(decode_call(str_bytes("xx")), DecodeError);
    Encoder bad;
    bad.u8(99);
    bad.field(Bytes{});
    EXPECT_THROW(decode_call(bad.take()), DecodeError);
}

}  // namespace
