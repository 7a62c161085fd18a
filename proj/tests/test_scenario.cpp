// Scenario files: serialization round-trips, defaulting, and the validation
// that rejects configs the simulator cannot honor.

#include <gtest/gtest.h>

#include "pose/scenario.hpp"

using namespace pose;

namespace {

Scenario sample() {
    Scenario sc;
    sc.name = "sample";
    sc.seed = 42;
    sc.operators = 5;
    sc.pool_size = 3;
    WorkItem c;
    c.action = "create";
    c.user = "alice";
    c.contract = "game";
    c.code = "rps";
    c.creator = 1;
    WorkItem e;
    e.action = "execute";
    e.user = "alice";
    e.contract = "game";
    e.move = "play rock";
    e.at = 60;
    e.jitter_secs = 30;
    sc.workload = {c, e};
    PolicySpec pol;
    pol.kind = "delay";
    pol.delay_secs = 20;
    sc.policies[2] = pol;
    sc.role_policies.push_back({"game", 1, PolicySpec{"silent"}});
    sc.privacy_markers = {"MARKER_abc123"};
    return sc;
}

}  // namespace

TEST(Scenario, JsonRoundTripIsExact) {
    Scenario sc = sample();
    Scenario back = Scenario::from_json(sc.to_json());
    EXPECT_EQ(back.to_json(), sc.to_json());
    EXPECT_EQ(back.name, "sample");
    EXPECT_EQ(back.policies.at(2).kind, "delay");
    ASSERT_EQ(back.role_policies.size(), 1u);
    EXPECT_EQ(back.role_policies[0].contract, "game");
    EXPECT_EQ(back.role_policies[0].pool_index, 1u);
    EXPECT_EQ(back.role_policies[0].policy.kind, "silent");
    EXPECT_EQ(back.privacy_markers, sc.privacy_markers);
}

TEST(Scenario, LoadsAppliesDefaults) {
    Scenario sc = Scenario::loads(R"({
        "schema_version": 1,
        "name": "tiny",
        "workload": [
            {"action": "create", "user": "u", "contract": "c", "code": "counter"}
        ]
    })");
    EXPECT_EQ(sc.operators, 4u);
    EXPECT_EQ(sc.pool_size, 3u);
    EXPECT_EQ(sc.chain.tau_secs, 15);
    EXPECT_EQ(sc.timeouts.off_exec_secs, 270u);
    EXPECT_TRUE(sc.policies.empty());
}

TEST(Scenario, RejectsBadConfigs) {
    EXPECT_THROW(Scenario::loads("not json"), ConfigInvalid);
    EXPECT_THROW(Scenario::loads("{\"schema_version\": 2}"), ConfigInvalid);

    Scenario sc = sample();
    sc.pool_size = 9;  // larger than the operator count
    EXPECT_THROW(sc.validate(), ConfigInvalid);

    sc = sample();
    sc.workload[1].contract = "unknown";  // executes before any create
    EXPECT_THROW(sc.validate(), ConfigInvalid);

    sc = sample();
    sc.workload[0].code = "no-such-program";
    EXPECT_THROW(sc.validate(), ConfigInvalid);

    sc = sample();
    sc.policies[2] = PolicySpec{"mystery"};
    EXPECT_THROW(sc.validate(), ConfigInvalid);

    sc = sample();
    sc.timeouts.on_exec_blocks = 1;  // under the challenge-response arithmetic floor
    EXPECT_THROW(sc.validate(), ConfigInvalid);

    sc = sample();
    sc.role_policies[0].pool_index = 99;
    EXPECT_THROW(sc.validate(), ConfigInvalid);

    sc = sample();
    sc.role_policies[0].policy = PolicySpec{"honest"};  // role overrides must misbehave
    EXPECT_THROW(sc.validate(), ConfigInvalid);
}
