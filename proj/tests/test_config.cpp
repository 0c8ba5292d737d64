#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "doctest.h"
#include "lcye/config.hpp"

using namespace lcye;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string write_tmp(const std::string& name, const json& j) {
  const fs::path p = fs::temp_directory_path() / ("lcye_cfg_" + name + ".json");
  std::ofstream(p) << j.dump(2);
  return p.string();
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value) ::setenv("LCYE_SEED", value, 1);
    else ::unsetenv("LCYE_SEED");
  }
  ~EnvGuard() { ::unsetenv("LCYE_SEED"); }
};

}  // namespace

TEST_CASE("FNV-1a reference vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("defaults load and validate") {
  EnvGuard env(nullptr);
  ExperimentConfig c = load_config("");
  CHECK(c.seed == 0);
  CHECK(c.eps == 16);
  CHECK(c.attack.attack.epsilon == doctest::Approx(16.0 / 255.0));
  CHECK(c.ablate.eps == std::vector<int>{3, 5, 10, 16, 20, 40});
  CHECK(c.target.num_targets == 10);
  CHECK(c.target.gamma == 4);
}

TEST_CASE("unknown keys are rejected with their path") {
  EnvGuard env(nullptr);
  CHECK(error_of([] { load_config(write_tmp("unk_top", {{"sede", 3}})); }).find("sede") != std::string::npos);
  const std::string e = error_of([] { load_config(write_tmp("unk_nested", {{"attack", {{"alpha9", 1.0}}}})); });
  CHECK(e.find("unknown config key") != std::string::npos);
  CHECK(e.find("attack.alpha9") != std::string::npos);
}

TEST_CASE("type, enum and range errors name the key") {
  EnvGuard env(nullptr);
  CHECK(error_of([] { load_config(write_tmp("type", {{"attack", {{"epochs", "ten"}}}})); }).find("attack.epochs") !=
        std::string::npos);
  CHECK(error_of([] { load_config(write_tmp("enum", {{"attack", {{"mode", "sideways"}}}})); }).find("attack.mode") !=
        std::string::npos);
  CHECK(error_of([] { load_config(write_tmp("range", {{"attack", {{"pixel_ratio", 1.5}}}})); })
            .find("attack.pixel_ratio") != std::string::npos);
  CHECK_THROWS(load_config(write_tmp("notjson", json::array())));
}

TEST_CASE("zero or negative epsilon is rejected") {
  EnvGuard env(nullptr);
  ConfigOverrides ov;
  ov.eps = 0;
  const std::string e = error_of([&] { load_config("", ov); });
  CHECK(e.find("epsilon must be positive") != std::string::npos);
  ov.eps = -3;
  CHECK_THROWS_AS(load_config("", ov), std::invalid_argument);
  CHECK_THROWS_AS(load_config(write_tmp("eps0", {{"attack", {{"eps", 0}}}})), std::invalid_argument);
}

TEST_CASE("seed precedence: flag, file, LCYE_SEED, default") {
  const std::string with_seed = write_tmp("seeded", {{"seed", 11}});
  const std::string without = write_tmp("unseeded", json::object());
  ConfigOverrides flag;
  flag.seed = 5;
  {
    EnvGuard env("77");
    CHECK(load_config(with_seed, flag).seed == 5);
    CHECK(load_config(with_seed).seed == 11);
    CHECK(load_config(without).seed == 77);
  }
  {
    EnvGuard env(nullptr);
    CHECK(load_config(without).seed == 0);
  }
  {
    EnvGuard env("12abc");
    CHECK_THROWS_AS(load_config(without), std::invalid_argument);
  }
}

TEST_CASE("overrides reach the component configs") {
  EnvGuard env(nullptr);
  ConfigOverrides ov;
  ov.eps = 10;
  ov.ratio = 0.125;
  ov.relaxed = true;
  ov.mode = "targeted";
  ov.target_id = 2;
  ov.out_dir = "somewhere";
  ExperimentConfig c = load_config("", ov);
  CHECK(c.attack.attack.epsilon == doctest::Approx(10.0 / 255.0));
  CHECK(c.attack.attack.pixel_ratio == 0.125);
  CHECK(c.attack.attack.relaxed);
  CHECK(c.attack.mode == AttackMode::targeted);
  CHECK(c.target_id == 2);
  CHECK(c.out_dir == "somewhere");
  ov.target_id = c.dataset.params.num_train_ids;
  CHECK(error_of([&] { load_config("", ov); }).find("target_id") != std::string::npos);
  ov.mode = "sideways";
  CHECK_THROWS(load_config("", ov));
}

TEST_CASE("derived seeds differ per component and follow the root") {
  EnvGuard env(nullptr);
  ConfigOverrides ov;
  ov.seed = 3;
  ExperimentConfig a = load_config("", ov);
  CHECK(a.dataset.params.seed == 3);
  std::set<std::uint64_t> seeds = {a.victim.seed, a.mimic.seed, a.attack.seed, a.target.seed};
  CHECK(seeds.size() == 4);
  ov.seed = 4;
  ExperimentConfig b = load_config("", ov);
  CHECK(b.victim.seed != a.victim.seed);
  CHECK(b.attack.seed != a.attack.seed);
}

TEST_CASE("JSON round trip and hash") {
  EnvGuard env(nullptr);
  ConfigOverrides ov;
  ov.seed = 9;
  ExperimentConfig c = load_config("", ov);
  const std::string h = config_hash(c);
  CHECK(h.size() == 16);
  CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);

  ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
  back.resolve();
  CHECK(back.to_json() == c.to_json());
  CHECK(config_hash(back) == h);

  // Independent oracle: FNV-1a over the sorted compact dump without out_dir.
  json j = c.to_json();
  j.erase("out_dir");
  std::uint64_t ref = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    ref ^= ch;
    ref *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(ref));
  CHECK(h == buf);

  ExperimentConfig moved = c;
  moved.out_dir = "elsewhere";
  CHECK(config_hash(moved) == h);
  ExperimentConfig changed = c;
  changed.attack.weights.alpha2 += 1.0;
  CHECK(config_hash(changed) != h);
}

TEST_CASE("schema is a closed draft-07 object") {
  const json& s = config_schema();
  CHECK(s.at("type") == "object");
  CHECK(s.at("additionalProperties") == false);
  for (const auto& [key, sub] : s.at("properties").items()) {
    if (sub.value("type", "") == "object") CHECK_MESSAGE(sub.at("additionalProperties") == false, key);
  }
  // Every key the serializer emits is declared.
  EnvGuard env(nullptr);
  CHECK_NOTHROW(validate_against_schema(load_config("").to_json(), s));
}
