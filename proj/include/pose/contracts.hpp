#pragma once

// Contract programs and their replicated state. A ContractInstance is the
// full state_all that travels sealed inside state updates: install params,
// the output cache that doubles as replay protection, coin bookkeeping, and
// the private/public key-value partitions. Execution is metered; running out
// of budget rolls the application state back but still records the request
// as processed, so a hostile request cannot be used to wedge a pool member.

#include <map>
#include <set>
#include <sstream>

#include "pose/messages.hpp"

namespace pose {

struct BudgetExhausted {};

class StepMeter {
  public:
    explicit StepMeter(uint64_t budget) : left_(budget) {}
    void charge(uint64_t n = 1) {
        if (n > left_) {
            left_ = 0;
            throw BudgetExhausted{};
        }
        left_ -= n;
    }
    uint64_t left() const { return left_; }

  private:
    uint64_t left_;
};

// What the user gets back: the move's result plus the public partition as it
// stands after the move. Sealed under the request's result key in the OK.
struct PublicOutput {
    Bytes result;
    std::map<std::string, Bytes> pub_state;

    bool operator==(const PublicOutput&) const = default;

    Bytes encoded() const {
        Encoder e;
        e.field(result);
        e.u64(pub_state.size());
        for (const auto& [k, v] : pub_state) e.str(k).field(v);
        return e.take();
    }
    static PublicOutput from(const Bytes& b) {
        Decoder d(b);
        PublicOutput o;
        o.result = d.field();
        uint64_t n = d.u64();
        for (uint64_t i = 0; i < n; i++) {
            std::string k = d.str();
            o.pub_state[k] = d.field();
        }
        d.expect_done();
        return o;
    }
};

class ContractInstance;

class ContractLogic {
  public:
    virtual ~ContractLogic() = default;
    virtual void init(ContractInstance& inst, StepMeter& meter) = 0;
    virtual Bytes move(ContractInstance& inst, const PartyId& caller, const std::string& input,
                       StepMeter& meter, DigestRng& rng) = 0;
};

ContractLogic* find_logic(const std::string& name);

// One deposit or payout the chain finalized for this contract, in inclusion
// order. Instances consume these to keep coin state in lockstep with the
// manager.
struct CoinEvent {
    uint64_t height = 0;
    bool is_deposit = false;
    uint64_t amount = 0;                // deposit
    uint64_t level = 0;                 // payout
    std::vector<Withdrawal> entries;    // payout
};

struct ExecResult {
    Bytes output;  // encoded PublicOutput
    bool budget_exceeded = false;
};

class ContractInstance {
  public:
    ContractId cid = 0;
    std::string code_name;
    uint64_t created_at = 0;

    // Coin state, advanced only by finalized chain events.
    uint64_t processed_height = 0;
    uint64_t credited = 0;
    uint64_t payout_level = 0;
    std::vector<Withdrawal> unspent;  // issued but not yet paid out on-chain

    // Output cache keyed by request hash; doubles as the replay guard.
    std::map<Digest, Bytes> outputs;

    std::map<std::string, Bytes> priv;
    std::map<std::string, Bytes> pub;

    // nullptr and budget_fail=true distinguish a metered-out install from an
    // unknown program; both end in a fail confirmation.
    static std::optional<ContractInstance> install(ContractId cid, const Bytes& code,
                                                   uint64_t created_at, uint64_t budget,
                                                   bool* budget_fail = nullptr) {
        if (budget_fail) *budget_fail = false;
        ContractInstance inst;
        inst.cid = cid;
        inst.code_name = std::string(code.begin(), code.end());
        inst.created_at = created_at;
        inst.processed_height = created_at > 0 ? created_at - 1 : 0;
        ContractLogic* logic = find_logic(inst.code_name);
        if (!logic) return std::nullopt;
        StepMeter meter(budget);
        try {
            logic->init(inst, meter);
        } catch (const BudgetExhausted&) {
            if (budget_fail) *budget_fail = true;
            return std::nullopt;
        }
        return inst;
    }

    bool seen(const Digest& h) const { return outputs.count(h) != 0; }

    // Runs one request. The caller must have checked seen(h) first; the
    // request hash is recorded as processed even when the budget runs out.
    ExecResult execute(const Digest& h, const PartyId& caller, const Bytes& input, uint64_t budget,
                       DigestRng& rng) {
        if (seen(h)) throw std::logic_error("execute called for a processed request");
        ContractLogic* logic = find_logic(code_name);
        if (!logic) throw std::logic_error("instance with unknown program");

        auto priv_snap = priv;
        auto pub_snap = pub;
        auto unspent_snap = unspent;
        uint64_t credited_snap = credited;

        ExecResult res;
        StepMeter meter(budget);
        std::string move_str(input.begin(), input.end());
        PublicOutput out;
        try {
            out.result = logic->move(*this, caller, move_str, meter, rng);
        } catch (const BudgetExhausted&) {
            priv = std::move(priv_snap);
            pub = std::move(pub_snap);
            unspent = std::move(unspent_snap);
            credited = credited_snap;
            out.result = str_bytes("error: step budget exhausted");
            res.budget_exceeded = true;
        }
        out.pub_state = pub;
        res.output = out.encoded();
        outputs[h] = res.output;
        return res;
    }

    // Applies finalized deposits and payouts in (processed_height, upto].
    void sync_coins(const std::vector<CoinEvent>& events, uint64_t upto) {
        for (const auto& ev : events) {
            if (ev.height <= processed_height || ev.height > upto) continue;
            if (ev.is_deposit) {
                credited += ev.amount;
            } else {
                // Remove exactly the paid entries from the issued list; the
                // chain may confirm a payout another replica issued.
                for (const auto& w : ev.entries) {
                    for (auto it = unspent.begin(); it != unspent.end(); ++it) {
                        if (*it == w) {
                            unspent.erase(it);
                            break;
                        }
                    }
                }
                payout_level = ev.level + 1;
            }
        }
        if (upto > processed_height) processed_height = upto;
    }

    std::optional<PayoutMsg> pending_payout() const {
        if (unspent.empty()) return std::nullopt;
        PayoutMsg m;
        m.cid = cid;
        m.level = payout_level;
        m.entries = unspent;
        return m;
    }

    // Coin issue API for contract programs: moves value from the credited
    // balance to the issued list. Withdrawals only reach the chain through a
    // later payout transaction.
    bool issue(uint64_t coins, const PartyId& payee) {
        if (coins > credited) return false;
        credited -= coins;
        unspent.push_back({coins, payee});
        return true;
    }

    // Key-value helpers for contract programs.
    static uint64_t get_u64(const std::map<std::string, Bytes>& m, const std::string& k,
                            uint64_t fallback = 0) {
        auto it = m.find(k);
        if (it == m.end() || it->second.size() != 8) return fallback;
        uint64_t v = 0;
        for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(it->second[i]) << (8 * i);
        return v;
    }
    static void set_u64(std::map<std::string, Bytes>& m, const std::string& k, uint64_t v) {
        Bytes b(8);
        for (int i = 0; i < 8; i++) b[i] = static_cast<uint8_t>(v >> (8 * i));
        m[k] = b;
    }
    static std::string get_str(const std::map<std::string, Bytes>& m, const std::string& k) {
        auto it = m.find(k);
        return it == m.end() ? std::string() : std::string(it->second.begin(), it->second.end());
    }
    static void set_str(std::map<std::string, Bytes>& m, const std::string& k,
                        const std::string& v) {
        m[k] = str_bytes(v);
    }

    // Full replicated state; this is what travels sealed in a state update.
    Bytes encoded() const {
        Encoder e;
        e.u64(cid).str(code_name).u64(created_at);
        e.u64(processed_height).u64(credited).u64(payout_level);
        e.u64(unspent.size());
        for (const auto& w : unspent) w.encode(e);
        e.u64(outputs.size());
        for (const auto& [h, out] : outputs) e.field(digest_bytes(h)).field(out);
        auto put_map = [&](const std::map<std::string, Bytes>& m) {
            e.u64(m.size());
            for (const auto& [k, v] : m) e.str(k).field(v);
        };
        put_map(priv);
        put_map(pub);
        return e.take();
    }
    static ContractInstance from(const Bytes& b) {
        Decoder d(b);
        ContractInstance inst;
        inst.cid = d.u64();
        inst.code_name = d.str();
        inst.created_at = d.u64();
        inst.processed_height = d.u64();
        inst.credited = d.u64();
        inst.payout_level = d.u64();
        uint64_t nw = d.u64();
        if (nw > 65536) throw DecodeError("too many withdrawals");
        for (uint64_t i = 0; i < nw; i++) inst.unspent.push_back(Withdrawal::decode(d));
        uint64_t no = d.u64();
        if (no > 1u << 20) throw DecodeError("output cache too large");
        for (uint64_t i = 0; i < no; i++) {
            Digest h = digest_from(d.field());
            inst.outputs[h] = d.field();
        }
        auto get_map = [&](std::map<std::string, Bytes>& m) {
            uint64_t n = d.u64();
            if (n > 1u << 20) throw DecodeError("state map too large");
            for (uint64_t i = 0; i < n; i++) {
                std::string k = d.str();
                m[k] = d.field();
            }
        };
        get_map(inst.priv);
        get_map(inst.pub);
        d.expect_done();
        if (!find_logic(inst.code_name)) throw DecodeError("unknown program in state");
        return inst;
    }
};

namespace detail {

inline std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

inline bool parse_u64(const std::string& s, uint64_t* out) {
    if (s.empty() || s.size() > 20) return false;
    uint64_t v = 0;
    for (char c : s) {
        if (c < '0' || c > '9') return false;
        uint64_t digit = static_cast<uint64_t>(c - '0');
        if (v > (~uint64_t{0} - digit) / 10) return false;
        v = v * 10 + digit;
    }
    *out = v;
    return true;
}

// A shared counter with an adjustable-cost busy loop, the simplest program
// that exercises state, results, and the step meter.
class CounterLogic final : public ContractLogic {
  public:
    void init(ContractInstance& inst, StepMeter& meter) override {
        meter.charge(1);
        ContractInstance::set_u64(inst.pub, "count", 0);
    }
    Bytes move(ContractInstance& inst, const PartyId&, const std::string& input, StepMeter& meter,
               DigestRng&) override {
        meter.charge(1);
        auto words = split_words(input);
        uint64_t count = ContractInstance::get_u64(inst.pub, "count");
        if (words.size() == 1 && words[0] == "inc") {
            ContractInstance::set_u64(inst.pub, "count", count + 1);
            return str_bytes(std::to_string(count + 1));
        }
        uint64_t k = 0;
        if (words.size() == 2 && words[0] == "add" && parse_u64(words[1], &k)) {
            ContractInstance::set_u64(inst.pub, "count", count + k);
            return str_bytes(std::to_string(count + k));
        }
        if (words.size() == 2 && words[0] == "spin" && parse_u64(words[1], &k)) {
            meter.charge(k);
            return str_bytes("spun " + words[1]);
        }
        if (words.size() == 1 && words[0] == "get") return str_bytes(std::to_string(count));
        return str_bytes("error: bad move");
    }
};

// Two-player game with hidden moves and stakes: the committed move lives in
// the private partition until the second player resolves the round.
class RpsLogic final : public ContractLogic {
  public:
    static constexpr uint64_t kStake = 5;

    void init(ContractInstance& inst, StepMeter& meter) override {
        meter.charge(1);
        ContractInstance::set_u64(inst.pub, "rounds", 0);
    }
    Bytes move(ContractInstance& inst, const PartyId& caller, const std::string& input,
               StepMeter& meter, DigestRng&) override {
        meter.charge(2);
        auto words = split_words(input);
        // A move may carry a salt after ':' ("rock:x7..."); the salt stays in
        // the private partition with the move and never reaches the output.
        if (words.size() != 2 || words[0] != "play" || rank(base_move(words[1])) < 0)
            return str_bytes("error: bad move");

        std::string pending = ContractInstance::get_str(inst.priv, "pending_player");
        if (pending.empty()) {
            if (inst.credited < kStake) return str_bytes("error: stake not funded");
            ContractInstance::set_str(inst.priv, "pending_player", to_hex(caller.encoded()));
            ContractInstance::set_str(inst.priv, "pending_move", words[1]);
            return str_bytes("waiting");
        }

        Bytes enc = from_hex(pending);
        Decoder d(enc);
        PartyId first = PartyId::decode(d);
        if (first == caller) return str_bytes("error: already played");
        // Resolution pays out both stakes, so both must be on deposit.
        if (inst.credited < 2 * kStake) return str_bytes("error: stake not funded");

        std::string move1 = ContractInstance::get_str(inst.priv, "pending_move");
        inst.priv.erase("pending_player");
        inst.priv.erase("pending_move");
        ContractInstance::set_u64(inst.pub, "rounds",
                                  ContractInstance::get_u64(inst.pub, "rounds") + 1);

        int r1 = rank(base_move(move1)), r2 = rank(base_move(words[1]));
        if (r1 == r2) {
            inst.issue(kStake, first);
            inst.issue(kStake, caller);
            return str_bytes("tie");
        }
        bool first_wins = (r1 - r2 + 3) % 3 == 1;
        inst.issue(2 * kStake, first_wins ? first : caller);
        return str_bytes(first_wins ? "p1" : "p2");
    }

  private:
    static std::string base_move(const std::string& m) {
        return m.substr(0, m.find(':'));
    }
    static int rank(const std::string& m) {
        if (m == "rock") return 0;
        if (m == "paper") return 1;
        if (m == "scissors") return 2;
        return -1;
    }
};

// Pays arbitrary amounts out of the deposited balance on request; the
// workhorse for coin-conservation scenarios.
class EscrowLogic final : public ContractLogic {
  public:
    void init(ContractInstance& inst, StepMeter& meter) override {
        meter.charge(1);
        ContractInstance::set_u64(inst.pub, "released_total", 0);
    }
    Bytes move(ContractInstance& inst, const PartyId& caller, const std::string& input,
               StepMeter& meter, DigestRng&) override {
        meter.charge(2);
        auto words = split_words(input);
        uint64_t coins = 0;
        if (words.size() != 3 || words[0] != "release" || !parse_u64(words[1], &coins))
            return str_bytes("error: bad move");
        PartyId payee;
        if (words[2] == "self") {
            payee = caller;
        } else {
            try {
                Bytes enc = from_hex(words[2]);
                Decoder d(enc);
                payee = PartyId::decode(d);
                d.expect_done();
            } catch (const DecodeError&) {
                return str_bytes("error: bad payee");
            }
        }
        if (!inst.issue(coins, payee)) return str_bytes("error: insufficient funds");
        ContractInstance::set_u64(inst.pub, "released_total",
                                  ContractInstance::get_u64(inst.pub, "released_total") + coins);
        return str_bytes("released " + words[1]);
    }
};

// Heavy compute workload: 2048 integers, explicit quicksort charged per
// comparison, reshuffle via the per-request randomness.
class Quicksort2048Logic final : public ContractLogic {
  public:
    static constexpr size_t kN = 2048;

    void init(ContractInstance& inst, StepMeter& meter) override {
        Bytes data(kN * 8);
        uint64_t x = 88172645463325252ULL;
        for (size_t i = 0; i < kN; i++) {
            meter.charge(1);
            x = x * 6364136223846793005ULL + 1442695040888963407ULL;
            for (int b = 0; b < 8; b++) data[i * 8 + b] = static_cast<uint8_t>(x >> (8 * b));
        }
        inst.priv["data"] = std::move(data);
    }
    Bytes move(ContractInstance& inst, const PartyId&, const std::string& input, StepMeter& meter,
               DigestRng& rng) override {
        meter.charge(1);
        auto data = load(inst);
        if (input == "sort") {
            quicksort(data, 0, static_cast<int64_t>(data.size()) - 1, meter);
            store(inst, data);
            return str_bytes("sorted " + checksum(data));
        }
        if (input == "shuffle") {
            for (size_t i = data.size() - 1; i > 0; i--) {
                meter.charge(1);
                size_t j = rng.below(i + 1);
                std::swap(data[i], data[j]);
            }
            store(inst, data);
            return str_bytes("shuffled " + checksum(data));
        }
        if (input == "check") {
            for (size_t i = 1; i < data.size(); i++) {
                meter.charge(1);
                if (data[i - 1] > data[i]) return str_bytes("unsorted");
            }
            return str_bytes("sorted");
        }
        return str_bytes("error: bad move");
    }

  private:
    static std::vector<uint64_t> load(const ContractInstance& inst) {
        const Bytes& raw = inst.priv.at("data");
        std::vector<uint64_t> v(raw.size() / 8);
        for (size_t i = 0; i < v.size(); i++)
            for (int b = 0; b < 8; b++) v[i] |= static_cast<uint64_t>(raw[i * 8 + b]) << (8 * b);
        return v;
    }
    static void store(ContractInstance& inst, const std::vector<uint64_t>& v) {
        Bytes raw(v.size() * 8);
        for (size_t i = 0; i < v.size(); i++)
            for (int b = 0; b < 8; b++) raw[i * 8 + b] = static_cast<uint8_t>(v[i] >> (8 * b));
        inst.priv["data"] = std::move(raw);
    }
    static std::string checksum(const std::vector<uint64_t>& v) {
        Hasher h;
        for (uint64_t x : v) h.update_u64(x);
        return hex(h.finish()).substr(0, 8);
    }
    static void quicksort(std::vector<uint64_t>& a, int64_t lo, int64_t hi, StepMeter& meter) {
        while (lo < hi) {
            uint64_t pivot = a[lo + (hi - lo) / 2];
            int64_t i = lo, j = hi;
            while (i <= j) {
                while (meter.charge(1), a[i] < pivot) i++;
                while (meter.charge(1), a[j] > pivot) j--;
                if (i <= j) std::swap(a[i++], a[j--]);
            }
            // Recurse into the smaller side to bound the stack.
            if (j - lo < hi - i) {
                quicksort(a, lo, j, meter);
                lo = i;
            } else {
                quicksort(a, i, hi, meter);
                hi = j;
            }
        }
    }
};

}  // namespace detail

inline ContractLogic* find_logic(const std::string& name) {
    static detail::CounterLogic counter;
    static detail::RpsLogic rps;
    static detail::EscrowLogic escrow;
    static detail::Quicksort2048Logic quicksort;
    if (name == "counter") return &counter;
    if (name == "rps") return &rps;
    if (name == "escrow") return &escrow;
    if (name == "quicksort2048") return &quicksort;
    return nullptr;
}

}  // namespace pose
