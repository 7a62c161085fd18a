#pragma once

// Offline trace verification. Every monitor re-derives one protocol
// guarantee from a finished trace, with no access to simulator internals:
// identities are rebuilt from the roster line, chain state is replayed from
// the transaction bytes embedded in block lines, and contract state is
// recomputed by a sequential oracle. A clean run yields zero violations.
//
// The trace records plaintext moves and scenario data as *metadata* for
// exactly this replay; the privacy monitor scans only "bytes" fields, which
// are the messages an adversary could actually observe.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pose/harness.hpp"

namespace pose {

struct Violation {
    std::string monitor;
    uint64_t line = 0;  // trace line index "i" nearest the problem
    std::string detail;
};

// Parsed once and shared by all monitors: the scenario, the rebuilt
// identities, and a few cross-line indexes.
class TraceView {
  public:
    explicit TraceView(const std::vector<Json>& lines)
        : lines_(lines),
          scenario_(Scenario::from_json(find(lines, "scenario").at("scenario"))),
          ctx_(find(lines, "roster").at("ctx_seed").get<uint64_t>()) {
        const Json& roster = find(lines, "roster");
        for (const auto& o : roster.at("operators")) {
            std::string op = o.at("op").get<std::string>();
            PartyId party = ctx_.new_party(PartyKind::Operator,
                                           o.at("party_label").get<std::string>());
            PartyId enc = ctx_.new_party(PartyKind::Enclave,
                                         o.at("enclave_label").get<std::string>());
            if (party.str() != o.at("party").get<std::string>() ||
                enc.str() != o.at("enclave").get<std::string>())
                throw MalformedTrace("roster identities do not rebuild from ctx_seed");
            party_[party.str()] = party;
            party_[enc.str()] = enc;
            enclave_of_op_[op] = enc;
            op_of_enclave_[enc.str()] = op;
        }
        for (const auto& u : roster.at("users")) {
            PartyId party = ctx_.new_party(PartyKind::User, u.at("label").get<std::string>());
            if (party.str() != u.at("party").get<std::string>())
                throw MalformedTrace("roster identities do not rebuild from ctx_seed");
            party_[party.str()] = party;
            user_of_party_[party.str()] = u.at("name").get<std::string>();
        }
        for (const auto& l : lines_) {
            const std::string kind = l.at("kind").get<std::string>();
            if (kind == "block") {
                blocks_.push_back(&l);
            } else if (kind == "user" && l.at("event") == "announced") {
                cid_contract_[l.at("cid").get<ContractId>()] =
                    l.at("contract").get<std::string>();
            } else if (kind == "end") {
                quiescent_ = l.at("quiescent").get<bool>();
            }
        }
        for (const auto& w : scenario_.workload)
            if (w.action == "create") code_of_contract_[w.contract] = w.code;
    }

    const std::vector<Json>& lines() const { return lines_; }
    const Scenario& scenario() const { return scenario_; }
    const CryptoContext& ctx() const { return ctx_; }
    const std::vector<const Json*>& blocks() const { return blocks_; }
    bool quiescent() const { return quiescent_; }

    const PartyId& party(const std::string& s) const {
        auto it = party_.find(s);
        if (it == party_.end()) throw MalformedTrace("unknown party in trace: " + s);
        return it->second;
    }
    // Enclave identity of "opN"; throws on an unknown label.
    const PartyId& enclave_of(const std::string& op) const {
        auto it = enclave_of_op_.find(op);
        if (it == enclave_of_op_.end()) throw MalformedTrace("unknown operator label: " + op);
        return it->second;
    }
    std::optional<std::string> user_of(const std::string& party_str) const {
        auto it = user_of_party_.find(party_str);
        if (it == user_of_party_.end()) return std::nullopt;
        return it->second;
    }
    std::optional<std::string> contract_of(ContractId cid) const {
        auto it = cid_contract_.find(cid);
        if (it == cid_contract_.end()) return std::nullopt;
        return it->second;
    }
    std::optional<std::string> code_of(ContractId cid) const {
        auto c = contract_of(cid);
        if (!c) return std::nullopt;
        auto it = code_of_contract_.find(*c);
        if (it == code_of_contract_.end()) return std::nullopt;
        return it->second;
    }

  private:
    static const Json& find(const std::vector<Json>& lines, const char* kind) {
        for (const auto& l : lines)
            if (l.at("kind") == kind) return l;
        throw MalformedTrace(std::string("trace has no ") + kind + " line");
    }

    const std::vector<Json>& lines_;
    Scenario scenario_;
    CryptoContext ctx_;
    std::map<std::string, PartyId> party_;
    std::map<std::string, PartyId> enclave_of_op_;
    std::map<std::string, std::string> op_of_enclave_;
    std::map<std::string, std::string> user_of_party_;
    std::map<ContractId, std::string> cid_contract_;
    std::map<std::string, std::string> code_of_contract_;
    std::vector<const Json*> blocks_;
    bool quiescent_ = false;
};

namespace detail {

inline uint64_t line_no(const Json& l) { return l.value("i", uint64_t(0)); }

inline Digest digest_of_hex(const std::string& s) { return digest_from(from_hex(s)); }

inline std::set<std::string> str_set(const Json& arr) {
    std::set<std::string> out;
    for (const auto& e : arr) out.insert(e.get<std::string>());
    return out;
}

}  // namespace detail

// Replays every accepted transaction through a fresh manager and chain and
// demands the same per-transaction outcomes and the same per-block digests
// (incremental tx hash, manager digest, state root) the trace recorded. This
// re-runs the full on-chain validation offline.
inline std::vector<Violation> monitor_chain_replay(const TraceView& tv) {
    std::vector<Violation> v;
    auto bad = [&](const Json& l, std::string d) {
        v.push_back({"chain_replay", detail::line_no(l), std::move(d)});
    };
    Chain chain({tv.scenario().chain.gamma_blocks, Sim::kGenesisTime},
                manager_config_for(tv.scenario(), sim_program()), &tv.ctx());
    for (const Json* bp : tv.blocks()) {
        const Json& b = *bp;
        std::vector<const Json*> accepted;
        for (const auto& e : b.at("txs")) {
            if (!e.at("accepted").get<bool>()) continue;
            accepted.push_back(&e);
            RelevantTx tx;
            tx.data = from_hex(e.at("bytes").get<std::string>());
            tx.sender = tv.party(e.at("sender").get<std::string>());
            tx.value = e.value("value", uint64_t(0));
            if (hex(sha256(tx.data)) != e.at("txd").get<std::string>()) {
                bad(b, "tx bytes do not match the submitted digest");
                return v;
            }
            chain.submit(std::move(tx));
        }
        const Block& rb = chain.mine_block(b.at("time").get<int64_t>());
        if (rb.header.number != b.at("height").get<uint64_t>()) {
            bad(b, "replay height diverged");
            return v;
        }
        if (rb.outcomes.size() != accepted.size()) {
            bad(b, "replay produced a different transaction count");
            return v;
        }
        for (size_t k = 0; k < accepted.size(); k++) {
            const Json& e = *accepted[k];
            const ApplyOutcome& out = rb.outcomes[k];
            const std::string kind = e.at("kind").get<std::string>();
            if (!out.accepted) {
                bad(b, kind + " accepted on-chain but rejected in replay: " +
                           reject_name(out.reason));
                continue;
            }
            if (std::string(call_kind_name(out.kind)) != kind)
                bad(b, "replayed kind mismatch for " + kind);
            if (out.validate_case != e.at("vcase").get<int>())
                bad(b, kind + " validate case mismatch");
            if (out.cid.has_value() != e.contains("cid") ||
                (out.cid && *out.cid != e.at("cid").get<ContractId>()))
                bad(b, kind + " contract id mismatch");
            if (out.deposit_amount != e.value("deposit", uint64_t(0)))
                bad(b, kind + " deposit amount mismatch");
            if (e.contains("paid") &&
                out.payout_level != e.at("payout_level").get<uint64_t>())
                bad(b, kind + " payout level mismatch");
            if (out.registered.has_value() != e.contains("registered"))
                bad(b, kind + " registration mismatch");
            std::set<std::string> kicked;
            for (const auto& p : out.kicked) kicked.insert(p.str());
            std::set<std::string> traced_kicked;
            if (e.contains("kicked")) traced_kicked = detail::str_set(e.at("kicked"));
            if (kicked != traced_kicked) bad(b, kind + " kick set mismatch");
            std::vector<std::pair<uint64_t, std::string>> paid, traced_paid;
            for (const auto& w : out.paid) paid.emplace_back(w.coins, w.payee.str());
            if (e.contains("paid"))
                for (const auto& w : e.at("paid"))
                    traced_paid.emplace_back(w.at("coins").get<uint64_t>(),
                                             w.at("payee").get<std::string>());
            if (paid != traced_paid) bad(b, kind + " payout entries mismatch");
        }
        if (hex(rb.incr_after) != b.at("incr").get<std::string>())
            bad(b, "incremental tx hash diverged");
        if (hex(rb.mgr_digest_after) != b.at("mgr").get<std::string>())
            bad(b, "manager digest diverged");
        if (hex(rb.header.state_root) != b.at("state_root").get<std::string>())
            bad(b, "state root diverged");
        if (!v.empty()) return v;  // later blocks only compound the divergence
    }
    return v;
}

// Every submitted transaction must land in a block within the inclusion
// bound; the simulated chain never censors.
inline std::vector<Violation> monitor_inclusion(const TraceView& tv) {
    std::vector<Violation> v;
    std::map<std::string, std::pair<uint64_t, uint64_t>> pending;  // txd -> (line, blocks seen)
    for (const auto& l : tv.lines()) {
        const std::string kind = l.at("kind").get<std::string>();
        if (kind == "submit") {
            pending[l.at("txd").get<std::string>()] = {detail::line_no(l), 0};
        } else if (kind == "block") {
            for (const auto& e : l.at("txs")) pending.erase(e.at("txd").get<std::string>());
            for (auto& [txd, st] : pending) {
                st.second++;
                if (st.second > tv.scenario().chain.alpha_blocks)
                    v.push_back({"inclusion", st.first,
                                 "transaction " + txd + " not included within " +
                                     std::to_string(tv.scenario().chain.alpha_blocks) +
                                     " blocks"});
            }
        }
    }
    if (tv.quiescent())
        for (const auto& [txd, st] : pending)
            v.push_back({"inclusion", st.first, "transaction " + txd + " never included"});
    return v;
}

// No result may reach a user before the full pool confirmed the state update
// that produced it: every OK emission (off-chain send or on-chain response)
// needs an earlier replication round for the same request hash whose
// confirmer set, plus the executor itself, covers that round's pool.
inline std::vector<Violation> monitor_replication_gate(const TraceView& tv) {
    std::vector<Violation> v;
    std::set<std::string> replicated;  // request hashes with a covered round
    for (const auto& l : tv.lines()) {
        const std::string kind = l.at("kind").get<std::string>();
        if (kind == "enclave" && l.at("call") == "confirms") {
            std::set<std::string> have = detail::str_set(l.at("confirmers"));
            have.insert(tv.enclave_of(l.at("op").get<std::string>()).str());
            std::set<std::string> pool = detail::str_set(l.at("pool"));
            bool covered = std::includes(have.begin(), have.end(), pool.begin(), pool.end());
            if (!covered) {
                v.push_back({"replication_gate", detail::line_no(l),
                             "round closed without full pool confirmation for h=" +
                                 l.at("h").get<std::string>()});
                continue;
            }
            replicated.insert(l.at("h").get<std::string>());
        } else if (kind == "send" && l.at("msg") == "ok") {
            const std::string h = l.at("h").get<std::string>();
            if (!replicated.count(h))
                v.push_back({"replication_gate", detail::line_no(l),
                             "ok sent before replication completed for h=" + h});
        } else if (kind == "block") {
            for (const auto& e : l.at("txs")) {
                if (e.at("kind") != "executor_response" || !e.at("accepted").get<bool>())
                    continue;
                auto call = decode_call(from_hex(e.at("bytes").get<std::string>()));
                const auto& ok = std::get<Signed<OkMsg>>(call.body);
                if (!replicated.count(hex(ok.msg.h)))
                    v.push_back({"replication_gate", detail::line_no(l),
                                 "on-chain response before replication for h=" +
                                     hex(ok.msg.h)});
            }
        }
    }
    return v;
}

// Private-partition plaintext must never appear in adversary-visible bytes:
// off-chain wires and on-chain transaction payloads. Markers come from the
// scenario's explicit list plus every hidden-move token in the workload.
inline std::vector<Violation> monitor_privacy(const TraceView& tv) {
    std::vector<Violation> v;
    std::set<std::string> markers(tv.scenario().privacy_markers.begin(),
                                  tv.scenario().privacy_markers.end());
    std::map<std::string, std::string> code_of;
    for (const auto& w : tv.scenario().workload)
        if (w.action == "create") code_of[w.contract] = w.code;
    for (const auto& w : tv.scenario().workload) {
        if (w.action != "execute" || code_of[w.contract] != "rps") continue;
        auto sp = w.move.find(' ');
        if (sp != std::string::npos && sp + 1 < w.move.size())
            markers.insert(w.move.substr(sp + 1));
    }
    std::vector<std::string> needles;
    for (const auto& m : markers)
        if (m.size() >= 4)  // shorter strings collide with random bytes
            needles.push_back(to_hex(std::span<const uint8_t>(
                reinterpret_cast<const uint8_t*>(m.data()), m.size())));
    if (needles.empty()) return v;

    auto scan = [&](const Json& l, const std::string& bytes_hex, const char* where) {
        for (const auto& n : needles)
            if (bytes_hex.find(n) != std::string::npos)
                v.push_back({"privacy", detail::line_no(l),
                             std::string("private plaintext visible in ") + where});
    };
    for (const auto& l : tv.lines()) {
        const std::string kind = l.at("kind").get<std::string>();
        if (kind == "send" && l.contains("bytes"))
            scan(l, l.at("bytes").get<std::string>(), "an off-chain message");
        else if (kind == "block")
            for (const auto& e : l.at("txs"))
                if (e.contains("bytes"))
                    scan(l, e.at("bytes").get<std::string>(), "an on-chain transaction");
    }
    return v;
}

// Requests apply exactly once: every completed request hash is present in
// every surviving pool member's output cache exactly once, and no member
// caches an output for a request nobody issued.
inline std::vector<Violation> monitor_exactly_once(const TraceView& tv) {
    std::vector<Violation> v;
    std::map<std::string, ContractId> issued;  // h -> cid
    std::set<std::string> completed;
    for (const auto& l : tv.lines()) {
        if (l.at("kind") != "user") continue;
        const std::string ev = l.at("event").get<std::string>();
        if (ev == "exec_sent")
            issued[l.at("h").get<std::string>()] = l.at("cid").get<ContractId>();
        else if (ev == "ok")
            completed.insert(l.at("h").get<std::string>());
    }
    for (const auto& l : tv.lines()) {
        if (l.at("kind") != "final_state" || !l.at("member").get<bool>()) continue;
        ContractId cid = l.at("cid").get<ContractId>();
        std::map<std::string, size_t> houts;
        for (const auto& h : l.at("houts")) houts[h.get<std::string>()]++;
        for (const auto& [h, n] : houts) {
            auto it = issued.find(h);
            if (it == issued.end() || it->second != cid)
                v.push_back({"exactly_once", detail::line_no(l),
                             "member caches an output for an unissued request h=" + h});
            if (n != 1)
                v.push_back({"exactly_once", detail::line_no(l),
                             "member caches duplicate outputs for h=" + h});
        }
        if (!tv.quiescent()) continue;
        for (const auto& [h, hcid] : issued) {
            auto hit = houts.find(h);
            if (hcid == cid && completed.count(h) &&
                (hit == houts.end() || hit->second != 1))
                v.push_back({"exactly_once", detail::line_no(l),
                             "completed request missing from a member replica, h=" + h});
        }
    }
    return v;
}

// Sequential oracle: rebuilds each contract's state by applying the
// surviving execution lineage one request at a time, with coin state synced
// to each execution's recorded finalized height. Every surviving fresh
// execution must produce the recorded state digest, and every surviving
// member's final state must equal the oracle's byte for byte.
inline std::vector<Violation> monitor_state_oracle(const TraceView& tv) {
    std::vector<Violation> v;
    struct Exec {
        const Json* line;
        std::string h;
    };
    struct Request {
        PartyId signer;
        std::string move;
    };
    std::map<ContractId, uint64_t> created_at;
    std::map<ContractId, std::vector<CoinEvent>> coins;
    for (const Json* bp : tv.blocks()) {
        uint64_t height = bp->at("height").get<uint64_t>();
        for (const auto& e : bp->at("txs")) {
            if (!e.at("accepted").get<bool>() || !e.contains("cid")) continue;
            ContractId cid = e.at("cid").get<ContractId>();
            const std::string kind = e.at("kind").get<std::string>();
            if (kind == "creation_init") {
                created_at.emplace(cid, height);
            } else if (kind == "deposit") {
                CoinEvent ev;
                ev.height = height;
                ev.is_deposit = true;
                ev.amount = e.at("deposit").get<uint64_t>();
                coins[cid].push_back(ev);
            } else if (kind == "payout") {
                CoinEvent ev;
                ev.height = height;
                ev.level = e.at("payout_level").get<uint64_t>();
                for (const auto& w : e.at("paid")) {
                    Withdrawal wd;
                    wd.coins = w.at("coins").get<uint64_t>();
                    wd.payee.kind = static_cast<PartyKind>(w.at("payee_kind").get<int>());
                    wd.payee.id = detail::digest_of_hex(w.at("payee_id").get<std::string>());
                    ev.entries.push_back(std::move(wd));
                }
                coins[cid].push_back(std::move(ev));
            }
        }
    }
    // The surviving lineage is the last fresh execution of each request
    // hash, in trace order: a superseded branch died with its executor.
    std::map<ContractId, std::vector<Exec>> lineage;
    std::map<std::string, const Json*> last_fresh;
    std::map<std::string, Request> request;
    for (const auto& l : tv.lines()) {
        const std::string kind = l.at("kind").get<std::string>();
        if (kind == "user" && l.at("event") == "exec_sent") {
            Request r;
            r.signer.kind = PartyKind::User;
            r.signer.id = detail::digest_of_hex(l.at("signer_id").get<std::string>());
            r.move = l.at("move").get<std::string>();
            request[l.at("h").get<std::string>()] = std::move(r);
        }
        if (kind == "enclave" && l.at("call") == "execute" && l.value("result", "") == "update")
            last_fresh[l.at("h").get<std::string>()] = &l;
    }
    std::map<ContractId, std::vector<std::pair<uint64_t, Exec>>> ordered;
    for (const auto& [h, lp] : last_fresh)
        ordered[lp->at("cid").get<ContractId>()].push_back(
            {detail::line_no(*lp), Exec{lp, h}});
    for (auto& [cid, ex] : ordered) {
        std::sort(ex.begin(), ex.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        for (auto& [_, e] : ex) lineage[cid].push_back(e);
    }

    std::map<ContractId, std::string> final_digest;
    for (const auto& [cid, execs] : lineage) {
        auto code = tv.code_of(cid);
        auto cit = created_at.find(cid);
        if (!code || cit == created_at.end()) {
            v.push_back({"state_oracle", 0,
                         "contract " + std::to_string(cid) + " has executions but no creation"});
            continue;
        }
        auto inst = ContractInstance::install(cid, str_bytes(*code), cit->second,
                                              tv.scenario().install_budget);
        if (!inst) {
            v.push_back({"state_oracle", 0, "oracle failed to install " + *code});
            continue;
        }
        for (const Exec& e : execs) {
            auto rit = request.find(e.h);
            if (rit == request.end()) {
                v.push_back({"state_oracle", detail::line_no(*e.line),
                             "execution of a request no user sent, h=" + e.h});
                continue;
            }
            const Request& req = rit->second;
            inst->sync_coins(coins[cid], e.line->at("final_height").get<uint64_t>());
            DigestRng rng(detail::digest_of_hex(e.h), "move.rng");
            inst->execute(detail::digest_of_hex(e.h), req.signer, str_bytes(req.move),
                          tv.scenario().exec_budget, rng);
            std::string got = hex(sha256(inst->encoded()));
            if (got != e.line->at("state").get<std::string>())
                v.push_back({"state_oracle", detail::line_no(*e.line),
                             "surviving execution state diverges from the oracle, h=" + e.h});
        }
        final_digest[cid] = hex(sha256(inst->encoded()));
    }
    if (!tv.quiescent()) return v;
    for (const auto& l : tv.lines()) {
        if (l.at("kind") != "final_state" || !l.at("member").get<bool>()) continue;
        ContractId cid = l.at("cid").get<ContractId>();
        auto it = final_digest.find(cid);
        if (it == final_digest.end()) continue;  // no executions: nothing to compare
        if (l.at("state").get<std::string>() != it->second)
            v.push_back({"state_oracle", detail::line_no(l),
                         "final member state diverges from the oracle on contract " +
                             std::to_string(cid)});
    }
    return v;
}

// Surviving pool members must agree byte for byte on every contract's final
// state once the run settles.
inline std::vector<Violation> monitor_convergence(const TraceView& tv) {
    std::vector<Violation> v;
    if (!tv.quiescent()) return v;
    std::map<ContractId, std::set<std::string>> states;
    std::map<ContractId, uint64_t> first_line;
    for (const auto& l : tv.lines()) {
        if (l.at("kind") != "final_state" || !l.at("member").get<bool>()) continue;
        ContractId cid = l.at("cid").get<ContractId>();
        states[cid].insert(l.at("state").get<std::string>());
        first_line.emplace(cid, detail::line_no(l));
    }
    for (const auto& [cid, st] : states)
        if (st.size() > 1)
            v.push_back({"convergence", first_line[cid],
                         "surviving members disagree on contract " + std::to_string(cid) +
                             " (" + std::to_string(st.size()) + " distinct states)"});
    return v;
}

// A synced enclave's manager mirror must equal the chain's manager digest at
// the enclave's finalized height.
inline std::vector<Violation> monitor_mirror(const TraceView& tv) {
    std::vector<Violation> v;
    std::map<uint64_t, std::string> mgr_at;
    mgr_at[0] = "";  // genesis digest is not traced; skip height 0
    for (const Json* b : tv.blocks())
        mgr_at[b->at("height").get<uint64_t>()] = b->at("mgr").get<std::string>();
    for (const auto& l : tv.lines()) {
        if (l.at("kind") != "final_enclave" || !l.at("synced").get<bool>()) continue;
        uint64_t fheight = l.at("final").get<uint64_t>();
        auto it = mgr_at.find(fheight);
        if (it == mgr_at.end() || it->second.empty()) continue;
        if (l.at("mirror").get<std::string>() != it->second)
            v.push_back({"mirror", detail::line_no(l),
                         l.at("op").get<std::string>() +
                             " mirror diverges from the chain at height " +
                             std::to_string(fheight)});
    }
    return v;
}

// Coin safety, checked purely from on-chain data: per contract the paid
// total never exceeds the deposited total at any prefix, and every payout
// level is spent at most once, in increasing order.
inline std::vector<Violation> monitor_coins(const TraceView& tv) {
    std::vector<Violation> v;
    std::map<ContractId, uint64_t> deposited, paid;
    std::map<ContractId, std::set<uint64_t>> levels;
    std::map<ContractId, int64_t> last_level;
    for (const Json* bp : tv.blocks()) {
        for (const auto& e : bp->at("txs")) {
            if (!e.at("accepted").get<bool>() || !e.contains("cid")) continue;
            ContractId cid = e.at("cid").get<ContractId>();
            const std::string kind = e.at("kind").get<std::string>();
            if (kind == "deposit") {
                deposited[cid] += e.at("deposit").get<uint64_t>();
            } else if (kind == "payout") {
                uint64_t level = e.at("payout_level").get<uint64_t>();
                if (!levels[cid].insert(level).second)
                    v.push_back({"coins", detail::line_no(*bp),
                                 "payout level " + std::to_string(level) +
                                     " spent twice on contract " + std::to_string(cid)});
                if (last_level.count(cid) && int64_t(level) <= last_level[cid])
                    v.push_back({"coins", detail::line_no(*bp),
                                 "payout levels not increasing on contract " +
                                     std::to_string(cid)});
                last_level[cid] = int64_t(level);
                for (const auto& w : e.at("paid")) paid[cid] += w.at("coins").get<uint64_t>();
                if (paid[cid] > deposited[cid])
                    v.push_back({"coins", detail::line_no(*bp),
                                 "contract " + std::to_string(cid) +
                                     " paid more than was deposited"});
            }
        }
    }
    return v;
}

// In a settled run every issued request completed unless its contract died,
// and every creation settled one way or the other.
inline std::vector<Violation> monitor_liveness(const TraceView& tv) {
    std::vector<Violation> v;
    if (!tv.quiescent()) return v;
    std::set<ContractId> dead;
    std::map<std::string, std::set<ContractId>> crashed_for;  // user -> cids
    std::set<std::string> ok_h;
    std::map<std::string, std::pair<ContractId, uint64_t>> sent;  // h -> cid, line
    std::map<std::string, uint64_t> created, create_failed, submitted;
    for (const auto& l : tv.lines()) {
        const std::string kind = l.at("kind").get<std::string>();
        if (kind == "contract" && l.at("event") == "dead")
            dead.insert(l.at("cid").get<ContractId>());
        if (kind != "user") continue;
        const std::string ev = l.at("event").get<std::string>();
        if (ev == "exec_sent")
            sent[l.at("h").get<std::string>()] = {l.at("cid").get<ContractId>(),
                                                  detail::line_no(l)};
        else if (ev == "ok")
            ok_h.insert(l.at("h").get<std::string>());
        else if (ev == "contract_crashed")
            crashed_for[l.at("user").get<std::string>()].insert(l.at("cid").get<ContractId>());
        else if (ev == "create_submitted")
            submitted[l.at("contract").get<std::string>()] = detail::line_no(l);
        else if (ev == "created")
            created[l.at("contract").get<std::string>()] = detail::line_no(l);
        else if (ev == "creation_failed")
            create_failed[l.at("contract").get<std::string>()] = detail::line_no(l);
    }
    for (const auto& [h, where] : sent)
        if (!ok_h.count(h) && !dead.count(where.first))
            v.push_back({"liveness", where.second,
                         "request never completed on a live contract, h=" + h});
    for (const auto& [name, line] : submitted)
        if (!created.count(name) && !create_failed.count(name))
            v.push_back({"liveness", line, "creation of " + name + " never settled"});
    return v;
}

// Pools only shrink, kicks are final, and the final membership equals the
// creation pool minus everyone kicked on the way.
inline std::vector<Violation> monitor_pool(const TraceView& tv) {
    std::vector<Violation> v;
    std::map<ContractId, std::set<std::string>> pool, kicked;
    std::map<ContractId, bool> dead;
    for (const auto& l : tv.lines()) {
        const std::string kind = l.at("kind").get<std::string>();
        if (kind == "contract" && l.at("event") == "ready") {
            pool[l.at("cid").get<ContractId>()] = detail::str_set(l.at("pool"));
        } else if (kind == "contract" && l.at("event") == "dead") {
            dead[l.at("cid").get<ContractId>()] = true;
        } else if (kind == "block") {
            for (const auto& e : l.at("txs")) {
                if (!e.at("accepted").get<bool>() || !e.contains("kicked") ||
                    !e.contains("cid"))
                    continue;
                ContractId cid = e.at("cid").get<ContractId>();
                for (const auto& p : e.at("kicked")) {
                    std::string ps = p.get<std::string>();
                    if (!kicked[cid].insert(ps).second)
                        v.push_back({"pool", detail::line_no(l),
                                     ps + " kicked twice from contract " +
                                         std::to_string(cid)});
                }
            }
        } else if (kind == "enclave" && l.at("call") == "confirms") {
            ContractId cid = l.at("cid").get<ContractId>();
            if (!pool.count(cid)) continue;
            std::set<std::string> now = detail::str_set(l.at("pool"));
            for (const auto& p : now) {
                if (!pool[cid].count(p))
                    v.push_back({"pool", detail::line_no(l),
                                 p + " appears in a round pool but never joined contract " +
                                     std::to_string(cid)});
                if (kicked[cid].count(p))
                    v.push_back({"pool", detail::line_no(l),
                                 p + " still in a round pool after being kicked from " +
                                     std::to_string(cid)});
            }
        }
    }
    if (!tv.quiescent()) return v;
    std::map<ContractId, std::set<std::string>> final_members;
    for (const auto& l : tv.lines()) {
        if (l.at("kind") != "final_state" || !l.at("member").get<bool>()) continue;
        final_members[l.at("cid").get<ContractId>()].insert(
            tv.enclave_of(l.at("op").get<std::string>()).str());
    }
    for (const auto& [cid, p0] : pool) {
        if (dead[cid]) continue;
        std::set<std::string> expect;
        for (const auto& p : p0)
            if (!kicked[cid].count(p)) expect.insert(p);
        auto it = final_members.find(cid);
        std::set<std::string> got = it == final_members.end() ? std::set<std::string>{}
                                                              : it->second;
        if (got != expect)
            v.push_back({"pool", 0,
                         "final members of contract " + std::to_string(cid) +
                             " are not creation pool minus kicks"});
    }
    return v;
}

// A run with no misbehaving operator stays off the challenge paths
// completely: creation, deposits, and payouts are the only transactions any
// contract needs.
inline std::vector<Violation> monitor_benign_interactions(const TraceView& tv) {
    std::vector<Violation> v;
    if (tv.scenario().byzantine_count() > 0) return v;
    static const std::set<std::string> benign = {"register", "creation_init",
                                                 "finalize_creation", "deposit", "payout"};
    for (const Json* bp : tv.blocks())
        for (const auto& e : bp->at("txs")) {
            const std::string kind = e.at("kind").get<std::string>();
            if (!benign.count(kind))
                v.push_back({"benign_interactions", detail::line_no(*bp),
                             "honest run used the " + kind + " path"});
        }
    return v;
}

inline std::vector<Violation> run_monitors(const std::vector<Json>& lines) {
    if (auto broken = verify_trace_chain(lines))
        return {{"trace_chain", 0, *broken}};
    std::vector<Violation> all;
    try {
        TraceView tv(lines);
        using Monitor = std::vector<Violation> (*)(const TraceView&);
        static constexpr std::pair<const char*, Monitor> kMonitors[] = {
            {"chain_replay", monitor_chain_replay},
            {"inclusion", monitor_inclusion},
            {"replication_gate", monitor_replication_gate},
            {"privacy", monitor_privacy},
            {"exactly_once", monitor_exactly_once},
            {"state_oracle", monitor_state_oracle},
            {"convergence", monitor_convergence},
            {"mirror", monitor_mirror},
            {"coins", monitor_coins},
            {"liveness", monitor_liveness},
            {"pool", monitor_pool},
            {"benign_interactions", monitor_benign_interactions},
        };
        for (const auto& [name, fn] : kMonitors) {
            try {
                auto v = fn(tv);
                all.insert(all.end(), std::make_move_iterator(v.begin()),
                           std::make_move_iterator(v.end()));
            } catch (const std::exception& ex) {
                // A monitor that cannot even parse its inputs has found a
                // malformed trace; that is a failure, not a pass.
                all.push_back({name, 0, std::string("monitor aborted: ") + ex.what()});
            }
        }
    } catch (const std::exception& ex) {
        all.push_back({"trace_view", 0, std::string("trace does not parse: ") + ex.what()});
    }
    return all;
}

// ---- metrics ----

struct TxTally {
    uint64_t accepted = 0;
    uint64_t rejected = 0;
};

struct ContractMetrics {
    std::string name;
    bool ready = false;
    bool dead = false;
    std::map<std::string, TxTally> txs;
    uint64_t deposited = 0;
    uint64_t paid = 0;
    uint64_t kicks = 0;
    uint64_t fresh_execs = 0;
    uint64_t replay_execs = 0;
    uint64_t adopts = 0;
    uint64_t rounds_closed = 0;
};

struct UserMetrics {
    uint64_t oks = 0;
    uint64_t resends = 0;
    uint64_t crashes = 0;
    int64_t latency_max = 0;
    int64_t latency_sum = 0;
};

struct Metrics {
    uint64_t blocks = 0;
    bool quiescent = false;
    uint64_t onchain_txs = 0;
    std::map<std::string, TxTally> txs;  // by call kind, chain-wide
    std::map<ContractId, ContractMetrics> contracts;
    std::map<std::string, UserMetrics> users;
    uint64_t sends = 0;
    uint64_t drops = 0;
    uint64_t forged_accepted = 0;
    uint64_t forged_rejected = 0;

    Json to_json() const {
        Json j{{"blocks", blocks},
               {"quiescent", quiescent},
               {"onchain_txs", onchain_txs},
               {"sends", sends},
               {"drops", drops},
               {"forged_accepted", forged_accepted},
               {"forged_rejected", forged_rejected}};
        for (const auto& [k, t] : txs)
            j["txs"][k] = {{"accepted", t.accepted}, {"rejected", t.rejected}};
        for (const auto& [cid, c] : contracts) {
            Json e{{"name", c.name},       {"ready", c.ready},
                   {"dead", c.dead},       {"deposited", c.deposited},
                   {"paid", c.paid},       {"kicks", c.kicks},
                   {"fresh_execs", c.fresh_execs}, {"replay_execs", c.replay_execs},
                   {"adopts", c.adopts},   {"rounds_closed", c.rounds_closed}};
            for (const auto& [k, t] : c.txs)
                e["txs"][k] = {{"accepted", t.accepted}, {"rejected", t.rejected}};
            j["contracts"][std::to_string(cid)] = std::move(e);
        }
        for (const auto& [name, u] : users)
            j["users"][name] = {{"oks", u.oks},
                                {"resends", u.resends},
                                {"crashes", u.crashes},
                                {"latency_max", u.latency_max},
                                {"latency_avg",
                                 u.oks ? double(u.latency_sum) / double(u.oks) : 0.0}};
        return j;
    }
};

inline Metrics measure(const std::vector<Json>& lines) {
    Metrics m;
    for (const auto& l : lines) {
        const std::string kind = l.at("kind").get<std::string>();
        if (kind == "block") {
            for (const auto& e : l.at("txs")) {
                bool acc = e.at("accepted").get<bool>();
                const std::string tk = e.at("kind").get<std::string>();
                (acc ? m.txs[tk].accepted : m.txs[tk].rejected)++;
                if (acc) m.onchain_txs++;
                if (!e.contains("cid")) continue;
                ContractMetrics& c = m.contracts[e.at("cid").get<ContractId>()];
                (acc ? c.txs[tk].accepted : c.txs[tk].rejected)++;
                if (!acc) continue;
                if (e.contains("deposit")) c.deposited += e.at("deposit").get<uint64_t>();
                if (e.contains("paid"))
                    for (const auto& w : e.at("paid")) c.paid += w.at("coins").get<uint64_t>();
                if (e.contains("kicked")) c.kicks += e.at("kicked").size();
            }
        } else if (kind == "contract") {
            ContractMetrics& c = m.contracts[l.at("cid").get<ContractId>()];
            c.name = l.at("name").get<std::string>();
            if (l.at("event") == "ready") c.ready = true;
            if (l.at("event") == "dead") c.dead = true;
        } else if (kind == "enclave") {
            const std::string call = l.at("call").get<std::string>();
            if (call == "execute" && l.value("result", "") == "update")
                m.contracts[l.at("cid").get<ContractId>()].fresh_execs++;
            else if (call == "execute" && l.value("result", "") == "replay")
                m.contracts[l.at("cid").get<ContractId>()].replay_execs++;
            else if (call == "update_adopt" && l.value("result", "") == "confirm")
                m.contracts[l.at("cid").get<ContractId>()].adopts++;
            else if (call == "confirms" && l.value("result", "") == "ok")
                m.contracts[l.at("cid").get<ContractId>()].rounds_closed++;
            else if (call == "ingest_forged")
                (l.at("err") == "none" ? m.forged_accepted : m.forged_rejected)++;
        } else if (kind == "user") {
            const std::string ev = l.at("event").get<std::string>();
            UserMetrics& u = m.users[l.at("user").get<std::string>()];
            if (ev == "ok") {
                u.oks++;
                int64_t lat = l.at("latency").get<int64_t>();
                u.latency_sum += lat;
                u.latency_max = std::max(u.latency_max, lat);
            } else if (ev == "resend") {
                u.resends++;
            } else if (ev == "contract_crashed") {
                u.crashes++;
            }
        } else if (kind == "send") {
            m.sends++;
        } else if (kind == "drop") {
            m.drops++;
        } else if (kind == "end") {
            m.blocks = l.at("blocks").get<uint64_t>();
            m.quiescent = l.at("quiescent").get<bool>();
        }
    }
    return m;
}

}  // namespace pose
