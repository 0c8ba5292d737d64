#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lcye/attack_trainer.hpp"
#include "lcye/synth_data.hpp"
#include "lcye/victim.hpp"

namespace lcye {

struct DatasetConfig {
  DatasetParams params;
  /// "synthetic" renders from the seed; "market" loads a Market-style layout.
  std::string source = "synthetic";
  std::string root;
};

/// Knowledge source for black-box attacks.
struct KnowledgeConfig {
  Arch arch = Arch::convnet_global;
  /// Train the knowledge source on a differently seeded synthetic dataset.
  bool cross_dataset = false;
};

struct AblationConfig {
  std::vector<int> eps = {3, 5, 10, 16, 20, 40};
  std::vector<double> ratios = {1.0, 0.5, 0.125, 0.0625};
  std::vector<double> relaxed_ratios = {0.0625};
  std::vector<MimicMode> mimic_modes;
  /// Retrain the attacker per cell instead of reusing one generator.
  bool retrain = false;
  bool pgd = true;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  DatasetConfig dataset;
  Arch victim_arch = Arch::convnet_global;
  TrainHParams victim;
  KnowledgeConfig knowledge;
  MimicMode mimic_mode = MimicMode::baseline;
  MimicHParams mimic;
  AttackTrainConfig attack;
  int eps = 16;  // in 1/255 units
  int target_id = -1;  // -1: random target per image in targeted mode
  TargetProtocol target;
  PgdParams pgd;
  AblationConfig ablate;

  /// Propagates the root seed and `eps` into the component configs.
  void resolve();
  /// Throws std::invalid_argument naming the offending key.
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

/// JSON schema of the config file (draft-07 subset).
const nlohmann::json& config_schema();

/// Validates `doc` against the subset of JSON schema used by config_schema():
/// type, properties, additionalProperties, enum, minimum, maximum,
/// exclusiveMinimum, items. Throws std::invalid_argument naming the path.
void validate_against_schema(const nlohmann::json& doc, const nlohmann::json& schema, const std::string& path = "");

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const std::string& bytes);
/// 16 hex digits of fnv1a64 over the canonical (sorted-key, compact) dump of
/// the resolved config without `out_dir`.
std::string config_hash(const ExperimentConfig& cfg);

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> eps;
  std::optional<double> ratio;
  bool relaxed = false;
  std::optional<std::string> mode;
  std::optional<int> target_id;
  std::optional<std::string> out_dir;
};

/// Loads `path` (empty: defaults), applies overrides, falls back to the
/// LCYE_SEED environment variable when neither the file nor the flags give a
/// seed, then resolves and validates.
ExperimentConfig load_config(const std::string& path, const ConfigOverrides& overrides = {});

}  // namespace lcye
