#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lcye/attacker.hpp"
#include "lcye/discriminator.hpp"
#include "lcye/losses.hpp"
#include "lcye/metrics.hpp"
#include "lcye/mimic.hpp"

namespace lcye {

enum class AttackMode { untargeted, targeted };
AttackMode parse_attack_mode(const std::string& s);
std::string to_string(AttackMode m);

/// white_box: the mis-ranking loss differentiates through the victim.
/// black_box: only through the knowledge source; the victim is never run
/// during training.
enum class Access { white_box, black_box };
Access parse_access(const std::string& s);
std::string to_string(Access a);

struct AttackTrainConfig {
  int epochs = 40;
  int batch_size = 32;
  int ids_per_batch = 4;
  double lr = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  loss::LossWeights weights;
  loss::MisRank mis_rank = loss::MisRank::xent_etri;
  loss::Perception perception = loss::Perception::ms_ssim;
  int ms_ssim_scales = 3;
  /// Average the adversarial triplet over anchors instead of summing.
  bool etri_mean = true;
  AttackConfig attack;
  AttackMode mode = AttackMode::untargeted;
  Access access = Access::white_box;
  /// Online mimicking: mimic steps per attack step.
  int mimic_steps_per_attack_step = 1;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

struct AttackEpochRecord {
  int epoch = 0;
  double loss_d = 0.0;
  double loss_g = 0.0;   // GAN generator term
  double loss_mr = 0.0;  // mis-ranking term
  double loss_vp = 0.0;  // 1 - (MS-)SSIM
  double total = 0.0;
  double mimic_loss = 0.0;
  int d_steps = 0;
  int g_steps = 0;
  int mimic_steps = 0;
  std::uint64_t victim_checksum = 0;
  std::uint64_t memory_checksum = 0;
  int freeze_violations = 0;
  nlohmann::json to_json() const;
};

struct AttackModels {
  Attacker attacker;
  MultiStageDiscriminator discriminator;
};

using AttackEpochCallback = std::function<void(const AttackEpochRecord&)>;

/// Fresh attacker and discriminator for a mimic state, seeded from `seed`.
AttackModels init_attack_models(MimicState& mimic, std::uint64_t seed, int height = 64, int width = 32);

/// Alternates a discriminator step and a generator/mask step on PK batches
/// of the train split, plus mimic steps in online mode. The victim and the
/// memory (during attack steps) are checked against their checksums after
/// every step; any change throws std::logic_error.
std::vector<AttackEpochRecord> train_attack(VictimModel& victim, VictimModel& knowledge_source, MimicState& mimic,
                                            AttackModels& models, const DatasetSplits& splits,
                                            const AttackTrainConfig& config,
                                            const AttackEpochCallback& on_epoch = {});

/// train_attack with the mis-ranking weight forced to zero.
std::vector<AttackEpochRecord> train_distill_probe(VictimModel& victim, VictimModel& knowledge_source,
                                                   MimicState& mimic, AttackModels& models,
                                                   const DatasetSplits& splits, AttackTrainConfig config,
                                                   const AttackEpochCallback& on_epoch = {});

struct AttackOutput {
  Tensor adversary;
  Tensor noise;
  Tensor mask;
  std::vector<int> claimed_ids;
};

/// Inference-mode attack of a batch of pixels, chunked internally.
AttackOutput run_attack(AttackModels& models, MimicState& mimic, const Tensor& pixels, const AttackConfig& config,
                        const std::vector<int>* targets = nullptr);

/// Attacked queries against the clean gallery, scored by the victim.
metrics::EvalReport evaluate_attack(VictimModel& victim, const DatasetSplits& splits, const Tensor& adv_query);
/// Clean queries against the clean gallery.
metrics::EvalReport evaluate_clean(VictimModel& victim, const DatasetSplits& splits);

struct TargetProtocol {
  int num_targets = 10;
  int gamma = 4;
  std::uint64_t seed = 0;
};

struct TargetEvaluation {
  metrics::ConsistencyResult consistency;
  double chance = 0.0;
  std::vector<int> targets;  // memory rows used as targets
  metrics::EvalReport ranking;  // queries attacked toward random targets
};

/// Draws `num_targets` memory rows and gamma distinct test images per target,
/// attacks each toward its target and measures leave-one-out consistency of
/// the victim embeddings. Also reports query ranking under target attacks.
TargetEvaluation evaluate_target_attack(VictimModel& victim, AttackModels& models, MimicState& mimic,
                                        const DatasetSplits& splits, const AttackConfig& config,
                                        const TargetProtocol& protocol);

/// Random target per sample among `num_ids` rows, never equal to `exclude`
/// when that is a valid row.
std::vector<int> draw_targets(const std::vector<int>& exclude, int num_ids, Rng& rng);

}  // namespace lcye
