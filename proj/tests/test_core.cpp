// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "msft/config.hpp"
#include "msft/core.hpp"

using namespace msft;

TEST(ComputeGrid, BudgetOneQuarterSteps) {
  ComputeGrid g(1.0, 0.25);
  EXPECT_EQ(grid_points(g), (std::vector<double>{0.25, 0.5, 0.75, 1.0}));
}

TEST(ComputeGrid, BudgetThreeHasTwelvePoints) {
  ComputeGrid g(3.0, 0.25);
  auto pts = grid_points(g);
  ASSERT_EQ(pts.size(), 12u);
  EXPECT_EQ(pts.back(), 3.0);
}

TEST(ComputeGrid, SinglePoint) {
  ComputeGrid g(0.25, 0.25);
  EXPECT_EQ(grid_points(g), (std::vector<double>{0.25}));
}

TEST(ComputeGrid, RejectsOffGridAndNonPositive) {
  EXPECT_THROW(ComputeGrid(1.1, 0.25), ConfigError);
  EXPECT_THROW(ComputeGrid(0.0, 0.25), ConfigError);
  EXPECT_THROW(ComputeGrid(1.0, 0.0), ConfigError);
  EXPECT_THROW(ticks_for(0.3, 0.25), ConfigError);
  EXPECT_EQ(ticks_for(2.5, 0.25), 10);
}

TEST(Mixture, ValidatesEntries) {
  EXPECT_THROW(MixtureSpec(std::vector<SubDatasetSpec>{}), ConfigError);
  EXPECT_THROW(MixtureSpec({{"a", "A", 10, 1.0, 0, 0}, {"a", "B", 10, 1.0, 0, 0}}), ConfigError);
  EXPECT_THROW(MixtureSpec({{"a", "A", 0, 1.0, 0, 0}}), ConfigError);
  EXPECT_THROW(MixtureSpec({{"a", "A", 5, 0.0, 0, 0}}), ConfigError);
  EXPECT_THROW(MixtureSpec({{"a", "A", 5, 1.0, -1, 0}}), ConfigError);
  MixtureSpec m({{"a", "A", 10, 1.0, 100, 5}, {"b", "B", 30, 1.0, 300, 7}});
  EXPECT_EQ(m.total_size(), 40);
  EXPECT_EQ(m.require_index("b"), 1u);
  EXPECT_FALSE(m.index_of("c"));
  EXPECT_THROW(m.require_index("c"), Error);
}

TEST(Mixture, StepTokensRoundToNearest) {
  SubDatasetSpec s{"a", "A", 10, 1.0, 101, 0};
  EXPECT_EQ(step_train_tokens(s, 0.25), 25);  // 25.25
  s.train_tokens_per_epoch = 102;
  EXPECT_EQ(step_train_tokens(s, 0.25), 26);  // 25.5 rounds away from zero
}

TEST(CurveTable, RejectsGapsAndNonFinite) {
  CurveTable t;
  t.add({"a", 0, 1, 0.1});
  t.add({"a", 0, 2, 0.2});
  EXPECT_THROW(t.add({"a", 0, 4, 0.3}), Error);
  EXPECT_THROW(t.add({"b", 0, 1, std::nan("")}), Error);
  t.add({"a", 1, 2, 0.5});  // new stage may start anywhere
  EXPECT_EQ(t.at("a", 0, 2), 0.2);
  EXPECT_FALSE(t.at("a", 0, 3));
}

TEST(CurveTable, TruncateStage) {
  CurveTable t;
  for (Tick k = 1; k <= 4; ++k) t.add({"a", 0, k, 0.1 * static_cast<double>(k)});
  t.truncate_stage(0, 2);
  EXPECT_EQ(t.series("a").size(), 2u);
  t.add({"a", 0, 3, 0.9});
  EXPECT_EQ(t.at("a", 0, 3), 0.9);
}

TEST(Strategy, NamesRoundTrip) {
  for (auto s : {Strategy::SFT, Strategy::ContinualSFT, Strategy::SRO, Strategy::SoftSRO, Strategy::MSFT})
    EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_THROW(parse_strategy("dpo"), ConfigError);
}

TEST(Config, ParsesSectionsAndValues) {
  auto doc = ConfigDocument::parse("# comment\n[a]\nx = 1.5\nlist = p, q ,r\n\n[b.c]\nflag = true\nn = 7\n");
  const auto& a = doc.require("a");
  EXPECT_EQ(a.real_or("x", 0.0), 1.5);
  EXPECT_EQ(split_list(a.get("list")), (std::vector<std::string>{"p", "q", "r"}));
  EXPECT_TRUE(doc.require("b.c").boolean_or("flag", false));
  EXPECT_EQ(doc.require("b.c").integer_or("n", 0), 7);
  EXPECT_EQ(doc.with_prefix("b").size(), 1u);
  EXPECT_THROW(doc.require("missing"), ConfigError);
}

TEST(Config, RejectsMalformedValues) {
  EXPECT_THROW(parse_real("1.5x", "x"), ConfigError);
  EXPECT_THROW(parse_int("3.5", "n"), ConfigError);
  EXPECT_EQ(parse_int("1e6", "n"), 1000000);
  EXPECT_THROW(parse_bool("maybe", "b"), ConfigError);
  EXPECT_THROW(ConfigDocument::parse("[a]\nnovalue\n"), ConfigError);
}

TEST(Config, RoundTripsThroughText) {
  auto doc = ConfigDocument::parse("[a]\nx = 0.1\ny = hello\n");
  auto again = ConfigDocument::parse(doc.to_string());
  EXPECT_EQ(again.require("a").get("x"), "0.1");
  EXPECT_EQ(again.require("a").get("y"), "hello");
}

TEST(Config, RejectsDuplicates) {
  EXPECT_THROW(ConfigDocument::parse("[a]\nx = 1\nx = 2\n"), ConfigError);
  EXPECT_THROW(ConfigDocument::parse("[a]\n[a]\n"), ConfigError);
  EXPECT_THROW(ConfigDocument::parse("x = 1\n"), ConfigError);
}
