#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "lcye/memory.hpp"
#include "lcye/victim.hpp"

namespace lcye {

/// baseline: M' frozen, memory learned before the attack.
/// offline:  the same two-phase schedule (mimic to completion, then attack).
/// online:   M' trainable, one mimic step interleaved with each attack step.
enum class MimicMode { baseline, online, offline };
MimicMode parse_mimic_mode(const std::string& s);
std::string to_string(MimicMode m);
inline bool freezes_subnet(MimicMode m) { return m != MimicMode::online; }

/// Spatial max-pool, batch norm and classifier shared by every victim.
class MimicHead {
 public:
  MimicHead() = default;
  MimicHead(int channels, int num_ids, Rng& rng);
  /// pooled memory read -> (embedding, logits)
  std::pair<ag::Var, ag::Var> operator()(const ag::Var& h, bool training);
  void collect(nn::ParamList& list, const std::string& prefix = "mimic.head.");

 private:
  nn::BatchNorm bn_;
  nn::Linear classifier_;
};

struct MimicHParams {
  int epochs = 60;
  double lr = 3e-4;
  int batch_size = 32;
  int ids_per_batch = 4;
  double beta1 = 1.0;
  double beta2 = 1.0;
  double margin = 0.3;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

/// Everything the mimicking branch owns. `source` is a private copy of the
/// knowledge-source model whose M' feeds the memory.
struct MimicState {
  MimicMode mode = MimicMode::baseline;
  VictimModel source;
  PrototypeMemory memory;
  MimicHead head;
  MimicHParams hp;

  nn::ParamList memory_params();
  nn::ParamList head_params();
  nn::ParamList trainable();  // memory + head (+ M' when online)
};

/// Memory rows = `num_ids`, channels = the source's feature channels.
MimicState init_mimic(MimicMode mode, VictimModel& knowledge_source, int num_ids, const MimicHParams& hp);

struct MimicOutput {
  ag::Var f;
  ag::Var h;
  ag::Var weights;
  ag::Var embedding;
  ag::Var logits;
};

/// f = M'(x); h = MRA(f, K); embedding = BN(MaxPool(h)); logits = classifier.
MimicOutput mimic_forward(const ag::Var& x, MimicState& s, bool training);
/// Same pipeline from precomputed features.
MimicOutput mimic_forward_features(const ag::Var& f, MimicState& s, bool training);

struct MimicStepStats {
  double loss = 0.0, ce = 0.0, triplet = 0.0;
  bool degenerate = false;
};

/// One optimizer step of the mimicking objective.
class MimicTrainer {
 public:
  MimicTrainer(MimicState& state);
  MimicStepStats step(const ImageBatch& batch);
  /// Step on precomputed M' features (frozen-subnet modes only).
  MimicStepStats step_features(const Tensor& features, const std::vector<int>& labels);

 private:
  MimicStepStats finish(const MimicOutput& out, const std::vector<int>& labels);
  MimicState& s_;
  std::unique_ptr<nn::Adam> opt_;
};

struct MimicEpoch {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // percent, inference mode on the train split
  nlohmann::json to_json() const;
};

/// Full-schedule mimicking on the train split. Frozen-subnet modes embed the
/// split once and train on the cached features; the subnet checksum is
/// asserted unchanged after every epoch.
std::vector<MimicEpoch> train_mimic(MimicState& s, const DatasetSplits& splits);

/// M' features of a batch in inference mode.
Tensor source_features(MimicState& s, const Tensor& pixels);

double mimic_accuracy(MimicState& s, const ImageBatch& batch);

/// Mean over identities of the largest per-row share of that identity's
/// address mass (1/N for uniform addressing).
double memory_selectivity(MimicState& s, const ImageBatch& batch);

}  // namespace lcye
