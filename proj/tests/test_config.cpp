#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include "aemlab/config.hpp"
#include "aemlab/errors.hpp"

using namespace aemlab;

namespace {

std::string thrown_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("parse_key_values handles comments, blanks and whitespace") {
  const auto kv = parse_key_values(
      "# header\n"
      "\n"
      "  env.kind = bandit-chain   # trailing\n"
      "train.lr=0.5\r\n"
      "train.steps =  7\n");
  REQUIRE(kv.size() == 3);
  CHECK(kv.at("env.kind") == "bandit-chain");
  CHECK(kv.at("train.lr") == "0.5");
  CHECK(kv.at("train.steps") == "7");

  const auto msg = thrown_message([] { parse_key_values("a = 1\n\nno equals sign\n"); });
  CHECK(msg.find("line 3") != std::string::npos);
  CHECK_THROWS_AS(parse_key_values(" = 4\n"), ConfigError);
}

TEST_CASE("format_double round trips") {
  for (double v : {0.05, 1e-8, 0.1 + 0.2, -3.0, 1.0 / 3.0, 6.02214076e23}) {
    const std::string s = format_double(v);
    CHECK(std::stod(s) == v);
  }
  CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("config round trips through key = value text") {
  TrainConfig cfg;
  cfg.env.kind = EnvKind::bandit_chain;
  cfg.env.arms = 3;
  cfg.env.depth = 4;
  cfg.env.reward.invalid_penalty = 0.25;
  cfg.estimator = Estimator::rloo;
  cfg.aem_mode = AemMode::batch_norm;
  cfg.loss = LossKind::gspo_seq;
  cfg.clip_high = 0.28;
  cfg.lr = 0.1 + 0.2;
  cfg.seed = 1234567890123ULL;
  cfg.mask = MaskMode::mask_pos_quadrants;
  cfg.force_unit_alpha = true;
  cfg.aem.lambda = -0.75;
  cfg.num_threads = 3;

  const std::string text = emit_key_values(train_config_to_key_values(cfg));
  const TrainConfig back = train_config_from_key_values(parse_key_values(text));
  CHECK(train_config_to_key_values(back) == train_config_to_key_values(cfg));
  CHECK(back.lr == cfg.lr);
  CHECK(back.seed == cfg.seed);
  CHECK(back.mask == MaskMode::mask_pos_quadrants);
  CHECK(back.env.kind == EnvKind::bandit_chain);

  const auto dir = std::filesystem::temp_directory_path() / "aemlab_test_config";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "c.txt").string();
  save_train_config(cfg, path);
  CHECK(train_config_to_key_values(load_train_config(path)) == train_config_to_key_values(cfg));
  std::filesystem::remove_all(dir);

  // every key appears exactly once
  CHECK(config_keys().size() == train_config_to_key_values(TrainConfig{}).size());
}

TEST_CASE("unknown keys and bad values name the key") {
  auto msg = thrown_message([] { train_config_from_key_values({{"train.lrr", "1"}}); });
  CHECK(msg.find("train.lrr") != std::string::npos);

  msg = thrown_message([] { train_config_from_key_values({{"train.steps", "ten"}}); });
  CHECK(msg.find("train.steps") != std::string::npos);
  msg = thrown_message([] { train_config_from_key_values({{"train.lr", "0.5x"}}); });
  CHECK(msg.find("train.lr") != std::string::npos);
  msg = thrown_message([] { train_config_from_key_values({{"train.force_unit_alpha", "yes"}}); });
  CHECK(msg.find("train.force_unit_alpha") != std::string::npos);
  msg = thrown_message([] { train_config_from_key_values({{"train.aem_mode", "sideways"}}); });
  CHECK(msg.find("train.aem_mode") != std::string::npos);

  CHECK_THROWS_AS(load_train_config("/nonexistent/dir/cfg.txt"), ConfigError);
}

TEST_CASE("overrides apply on top of a base") {
  TrainConfig cfg;
  apply_override(cfg, "train.lr=0.5");
  apply_override(cfg, " aem.lambda = 2 ");
  apply_override(cfg, "env.kind=bandit-chain");
  CHECK(cfg.lr == 0.5);
  CHECK(cfg.aem.lambda == 2.0);
  CHECK(cfg.env.kind == EnvKind::bandit_chain);
  CHECK(cfg.steps == TrainConfig{}.steps);
  CHECK_THROWS_AS(apply_override(cfg, "train.lr"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "nope=1"), ConfigError);
}

TEST_CASE("validate rejects out-of-range values") {
  CHECK_NOTHROW(TrainConfig{}.validate());
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return thrown_message([&] { c.validate(); });
  };
  CHECK_FALSE(bad([](TrainConfig& c) { c.group_size = 1; }).empty());
  CHECK_FALSE(bad([](TrainConfig& c) { c.lr = -1.0; }).empty());
  CHECK_FALSE(bad([](TrainConfig& c) { c.steps = -1; }).empty());
  CHECK_FALSE(bad([](TrainConfig& c) { c.num_threads = 0; }).empty());
}
