#include <gtest/gtest.h>

#include <cmath>

#include "mvccl/errors.hpp"
#include "mvccl/run_config.hpp"

using namespace mvccl;

TEST(RunConfigText, ParsesCommentsBlankLinesAndWhitespace) {
  const auto kv = parse_config_text("# desk run\n\nmodel.D = 32\n  train.lr=1e-3  \n");
  ASSERT_EQ(kv.size(), 2U);
  EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"model.D", "32"}));
  EXPECT_EQ(kv[1], (std::pair<std::string, std::string>{"train.lr", "1e-3"}));
}

TEST(RunConfigText, MalformedLineNamesLineNumber) {
  try {
    parse_config_text("model.D=4\nnot a setting\n");
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(RunConfigApply, RoutesKeysToSections) {
  RunConfig c;
  apply_setting(c, "model.D", "32");
  apply_setting(c, "train.epochs", "3");
  apply_setting(c, "data.split_seed", "9");
  EXPECT_EQ(c.model.feature_width, 32U);
  EXPECT_EQ(c.train.epochs, 3U);
  EXPECT_EQ(c.data.split_seed, 9U);
}

TEST(RunConfigApply, UnknownKeyIsUsageErrorNamingIt) {
  RunConfig c;
  try {
    apply_setting(c, "model.depth", "3");
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("model.depth"), std::string::npos);
  }
  EXPECT_THROW(split_setting("no-equals"), UsageError);
}

TEST(RunConfigLoad, OverridesWinAndResultIsValidated) {
  const auto c = load_run_config(RunConfig{}, std::nullopt, {"train.lr=0.01", "train.lr=0.02"});
  EXPECT_EQ(c.train.lr, 0.02);
  EXPECT_THROW(load_run_config(RunConfig{}, std::nullopt, {"train.batch_size=0"}), ConfigError);
  EXPECT_THROW(load_run_config(RunConfig{}, std::string("/nonexistent/cfg"), {}), IoError);
}

TEST(RunConfigEcho, EchoReloadsToSameConfig) {
  RunConfig c;
  c.model.heads = 2;
  c.train.seed = 77;
  c.data.val_fraction = 0.25;
  RunConfig d;
  for (const auto& [k, v] : parse_config_text(echo_config(c))) apply_setting(d, k, v);
  EXPECT_EQ(echo_config(c), echo_config(d));
  EXPECT_EQ(d.model, c.model);
}

TEST(DataConfigTest, DefaultsGiveFourToOneToOneSplit) {
  const DataConfig d;
  EXPECT_EQ(std::llround(600 * d.train_fraction), 400);
  EXPECT_EQ(std::llround(600 * d.val_fraction), 100);
}
