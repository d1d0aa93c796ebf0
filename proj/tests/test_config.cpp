#include <gtest/gtest.h>

#include <filesystem>

#include "normlab/config.hpp"

using namespace normlab;
using nlohmann::json;

namespace {

std::string error_of(const json& j) {
  try {
    parse_run_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, EmptyObjectGivesDefaults) {
  const RunConfig c = parse_run_config(json::object());
  EXPECT_EQ(c.steps, 1000u);
  EXPECT_EQ(c.network.dims, (std::vector<std::size_t>{2, 32, 3}));
  EXPECT_EQ(c.regularizer.type, RegularizerType::L2);
  EXPECT_EQ(c.optimizer.kind, OptimizerKind::SGD);
}

TEST(Config, UnknownKeyNamesIt) {
  EXPECT_NE(error_of({{"stepz", 3}}).find("'stepz'"), std::string::npos);
  EXPECT_NE(error_of({{"optimizer", {{"lr", 0.1}}}}).find("'optimizer.lr'"), std::string::npos);
}

TEST(Config, WrongTypeNamesKey) {
  EXPECT_NE(error_of({{"steps", "many"}}).find("'steps'"), std::string::npos);
  EXPECT_NE(error_of({{"steps", -3}}).find("'steps'"), std::string::npos);
  EXPECT_NE(error_of({{"regularizer", {{"lambda", "big"}}}}).find("'regularizer.lambda'"),
            std::string::npos);
  EXPECT_NE(error_of({{"network", {{"hidden", "bn"}}}}).find("'network.hidden'"), std::string::npos);
  EXPECT_NE(error_of({{"network", {{"dims", {2}}}}}).find("'network.dims'"), std::string::npos);
}

TEST(Config, AdamDefaultsItsOwnStepSize) {
  EXPECT_DOUBLE_EQ(parse_run_config({{"optimizer", {{"kind", "adam"}}}}).optimizer.eta, 1e-3);
  EXPECT_DOUBLE_EQ(parse_run_config({{"optimizer", {{"kind", "adam"}, {"eta", 0.15}}}}).optimizer.eta, 0.15);
}

TEST(Config, RoundTrip) {
  const json in = {
      {"dataset", {{"type", "two_moons"}, {"points", 300}, {"noise", 0.2}, {"seed", 4}}},
      {"network", {{"dims", {2, 8, 2}}, {"hidden", "ws:1e-05"}, {"output", "cwn"}, {"bias", false}}},
      {"regularizer", {{"type", "eps"}, {"lambda", 0.01}, {"epsilon", 0.5}}},
      {"optimizer", {{"kind", "adam"}, {"eta", 0.15}, {"beta1", 0.5}}},
      {"schedule", {{"type", "step"}, {"factor", 0.5}, {"every", 100}}},
      {"steps", 250},
      {"seed", 9},
      {"telemetry_format", "jsonl"}};
  const RunConfig c = parse_run_config(in);
  EXPECT_EQ(to_json(parse_run_config(to_json(c))), to_json(c));
  EXPECT_EQ(c.network.hidden, ReparamKind::ws(1e-5));
  EXPECT_DOUBLE_EQ(c.optimizer.beta1, 0.5);
}

TEST(Config, DigestIgnoresOutputDirectory) {
  RunConfig a = parse_run_config(json::object());
  RunConfig b = a;
  b.out = "/somewhere/else";
  EXPECT_EQ(run_config_digest(a), run_config_digest(b));
  b.seed = 8;
  EXPECT_NE(run_config_digest(a), run_config_digest(b));
}

TEST(Config, MissingFileNamesPath) {
  try {
    load_run_config("no/such/config.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("no/such/config.json"), std::string::npos);
  }
}

TEST(Config, InvalidJson) {
  const auto p = std::filesystem::temp_directory_path() / "normlab_bad_config.json";
  write_text_file(p, "{\"steps\": ");
  EXPECT_THROW(load_run_config(p), ConfigError);
}

TEST(Config, TrainConfigCarriesRegularizer) {
  const RunConfig c = parse_run_config(
      {{"network", {{"dims", {2, 16, 3}}, {"hidden", "ws"}, {"output", "identity"}}},
       {"regularizer", {{"type", "eps"}, {"lambda", 0.1}, {"epsilon", 0.5}}}});
  const TrainConfig t = to_train_config(c);
  ASSERT_EQ(t.layers.size(), 2u);
  EXPECT_EQ(t.layers[0].regularizer.type, RegularizerType::EpsShiftedL2);
  EXPECT_EQ(t.layers[0].regularizer.style, ShiftStyle::MeanStd);
  EXPECT_EQ(t.layers[1].regularizer.type, RegularizerType::L2);
}

TEST(Config, DiagonalBackwardOnCwnIsRejected) {
  const RunConfig c = parse_run_config({{"network", {{"hidden", "cwn"}, {"backward", "diagonal"}}}});
  const TrainConfig t = to_train_config(c);
  RngStream rng(1);
  EXPECT_THROW(Network::build(t.layers, rng), UnsupportedVariantError);
}
