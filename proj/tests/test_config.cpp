#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "sdscl/config.hpp"
#include "sdscl/errors.hpp"

using namespace sdscl;
using json = nlohmann::json;

namespace {

json minimal() { return {{"base_lr", 0.01}, {"total_epochs", 20}, {"batch_size", 8}}; }

std::string error_of(const json& j) {
  try {
    parse_run_config(j.dump());
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, MinimalUsesDefaults) {
  auto c = parse_run_config(minimal().dump());
  EXPECT_DOUBLE_EQ(c.sgd.base_lr, 0.01);
  EXPECT_EQ(c.sgd.total_epochs, 20u);
  EXPECT_EQ(c.sgd.batch_size, 8u);
  EXPECT_DOUBLE_EQ(c.sgd.momentum, 0.9);
  EXPECT_TRUE(c.sgd.nesterov);
  EXPECT_DOUBLE_EQ(c.model.contrast.temperature, 0.07);
  EXPECT_EQ(c.model.channels, 16u);
  EXPECT_EQ(c.model.siia.channels, 16u);
  EXPECT_TRUE(c.model.losses.stl && c.model.losses.tsl && c.model.losses.gl);
}

TEST(Config, ChannelsPropagate) {
  auto j = minimal();
  j["channels"] = 8;
  j["heads"] = 2;
  auto c = parse_run_config(j.dump());
  EXPECT_EQ(c.model.siia.channels, 8u);
  EXPECT_EQ(c.model.contrast.channels, 8u);
}

TEST(Config, DumpParseRoundTrip) {
  auto j = minimal();
  j["total_epochs"] = 70;
  j["decay_milestones"] = {60};
  j["warmup_epochs"] = 5;
  j["labeled_fraction"] = 0.1;
  j["stop_grad_inter"] = true;
  j["pooling"] = "max";
  j["encoder"] = "linear_lift";
  j["gl"] = false;
  j["freeze_statistics"] = true;
  j["encoder_lr_scale"] = 1e-4;
  auto c = parse_run_config(j.dump());
  EXPECT_EQ(c.sgd.decay_milestones, (std::vector<std::size_t>{60}));
  EXPECT_EQ(c.sgd.total_epochs, 70u);
  EXPECT_DOUBLE_EQ(c.labeled_fraction, 0.1);
  auto text = dump_run_config(c);
  EXPECT_EQ(dump_run_config(parse_run_config(text)), text);
  auto dumped = json::parse(text);
  EXPECT_EQ(dumped.size(), config_keys().size());
  for (const auto& key : config_keys()) EXPECT_TRUE(dumped.contains(key)) << key;
}

TEST(Config, UnknownKeyIsNamed) {
  auto j = minimal();
  j["learning_rate"] = 0.1;
  EXPECT_NE(error_of(j).find("unknown key 'learning_rate'"), std::string::npos);
}

TEST(Config, MissingRequiredKeyIsNamed) {
  for (const auto& key : required_config_keys()) {
    auto j = minimal();
    j.erase(key);
    EXPECT_NE(error_of(j).find("missing required key '" + key + "'"), std::string::npos) << key;
  }
}

TEST(Config, TypeAndRangeErrorsNameTheKey) {
  auto j = minimal();
  j["batch_size"] = "eight";
  EXPECT_NE(error_of(j).find("batch_size"), std::string::npos);
  j = minimal();
  j["batch_size"] = 0;
  EXPECT_NE(error_of(j).find("batch_size"), std::string::npos);
  j = minimal();
  j["temperature"] = 0.0;
  EXPECT_NE(error_of(j).find("temperature"), std::string::npos);
  j = minimal();
  j["heads"] = 3;
  EXPECT_NE(error_of(j).find("heads"), std::string::npos);
  j = minimal();
  j["stl"] = j["tsl"] = j["gl"] = false;
  EXPECT_FALSE(error_of(j).empty());
  j = minimal();
  j["labeled_fraction"] = 0.0;
  EXPECT_NE(error_of(j).find("labeled_fraction"), std::string::npos);
}

TEST(Config, MalformedJsonIsParseError) {
  EXPECT_THROW(parse_run_config("{\"base_lr\": "), ParseError);
  EXPECT_THROW(parse_run_config("[1,2]"), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), IoError);
}
