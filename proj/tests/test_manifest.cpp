#include <gtest/gtest.h>

#include "seqrl/manifest.hpp"

using namespace seqrl;

namespace {

const char* kMinimal = R"({
  "problem": {"type": "radar", "N": 13, "ell": 1},
  "schedule": {"segments": [{"lo": 0, "hi": 37}]}
})";

std::string error_of(const std::string& text) {
  try {
    parse_manifest(json::parse(text));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string with(const std::string& extra) {
  return R"({"problem": {"type": "radar", "N": 13, "ell": 1},
             "schedule": {"segments": [{"lo": 0, "hi": 37}]}, )" + extra + "}";
}

}  // namespace

TEST(Manifest, MinimalDerivesNetworkShape) {
  const auto m = parse_manifest(json::parse(kMinimal));
  const auto s = m.train_setup();
  EXPECT_EQ(s.net.rows, s.features.rows);
  EXPECT_EQ(s.net.cols, s.features.cols);
  EXPECT_EQ(s.net.policy_size, 2);
  EXPECT_EQ(s.schedule.direction, Direction::kMaximize);
  EXPECT_EQ(s.problem.game.N, 13);
}

TEST(Manifest, ErrorsNameTheField) {
  EXPECT_NE(error_of(R"({"seed": 1})").find("problem"), std::string::npos);
  EXPECT_NE(error_of(with(R"("network": {"filterz": 3})")).find("network.filterz"), std::string::npos);
  EXPECT_NE(error_of(with(R"("search": {"q": "many"})")).find("search.q"), std::string::npos);
  EXPECT_NE(error_of(with(R"("search": {"q": 0})")).find("search"), std::string::npos);
  EXPECT_NE(error_of(with(R"("trainer": {"batch_mode": "sometimes"})")).find("trainer.batch_mode"),
            std::string::npos);
  EXPECT_NE(error_of(with(R"("baselines": {"dqn": {"fifo_capacity": 2, "batch_size": 8}})"))
                .find("baselines.dqn"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"problem": {"type": "sonar", "N": 5}})").find("problem.type"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"problem": {"type": "radar", "N": 13},
                         "schedule": {"segments": [{"lo": 0, "hi": 10}, {"lo": 20, "hi": 37}]}})")
                .find("overlap"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"problem": {"type": "radar", "N": 13},
                         "schedule": {"segments": [{"lo": 0, "hi": 37, "width": 2}]}})")
                .find("schedule.segments[0].width"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"problem": {"type": "radar", "N": 13}, "trainer": {"calibrate_mu": true}})")
                .find("calibrate_mu"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"problem": {"type": "radar", "N": 13}})").find("schedule.segments"),
            std::string::npos);
}

TEST(Manifest, HalvingSchedule) {
  const auto m = parse_manifest(json::parse(R"({"problem": {"type": "radar", "N": 13},
      "schedule": {"halving": [0, 37]}})"));
  ASSERT_EQ(m.schedule.segments.size(), 3u);
  EXPECT_DOUBLE_EQ(m.schedule.segments[0].hi, 18.5);
  EXPECT_DOUBLE_EQ(m.schedule.segments[1].lo, 9.25);
  EXPECT_DOUBLE_EQ(m.schedule.segments[2].hi, 37.0);
}

TEST(Manifest, JsonRoundTrip) {
  const auto m = parse_manifest(json::parse(with(R"("seed": 99,
      "trainer": {"G": 7, "stop_at": 37},
      "baselines": {"dqn": {"reward": {"lo": 1, "hi": 2}}})")));
  const json j = to_json(m);
  const auto back = parse_manifest(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.trainer.G, 7);
  ASSERT_TRUE(back.trainer.stop_at.has_value());
  EXPECT_EQ(*back.trainer.stop_at, 37.0);
  ASSERT_TRUE(back.dqn.reward.has_value());
  EXPECT_EQ(back.dqn.reward->hi, 2.0);
}

TEST(Manifest, BundledConfigs) {
  const std::string dir = SEQRL_CONFIG_DIR;
  const auto ccc = load_manifest(dir + "/ccc-2x2x8.json");
  EXPECT_EQ(ccc.trainer.G, 100);
  EXPECT_EQ(ccc.trainer.z, 3);
  EXPECT_EQ(ccc.search.q, 400);
  EXPECT_EQ(ccc.search.alpha, 0.05);
  EXPECT_EQ(ccc.problem.ell, 4);
  EXPECT_TRUE(ccc.trainer.calibrate_mu);
  EXPECT_EQ(ccc.train_setup().problem.game.steps(), 8);

  const auto r59 = load_manifest(dir + "/radar-59.json");
  EXPECT_EQ(r59.trainer.G, 300);
  EXPECT_EQ(r59.trainer.z, 2);
  EXPECT_EQ(r59.problem.ell, 5);
  ASSERT_EQ(r59.schedule.segments.size(), 3u);
  EXPECT_EQ(r59.schedule.segments[0].hi, 15.0);
  EXPECT_EQ(r59.schedule.segments[1].lo, 5.0);
  EXPECT_EQ(r59.schedule.segments[2].hi, 37.0);
  EXPECT_EQ(r59.train_setup().net.policy_size, 32);

  for (const char* toy : {"toy-cdma-2x2x4.json", "toy-radar-13.json"}) {
    const auto m = load_manifest(dir + "/" + toy);
    EXPECT_EQ(m.network.conv_layers, 2);
    EXPECT_EQ(m.network.filters, 16);
    EXPECT_EQ(m.search.q, 100);
    EXPECT_EQ(to_json(parse_manifest(to_json(m))), to_json(m));
  }
  EXPECT_THROW(load_manifest(dir + "/missing.json"), ConfigError);
}
