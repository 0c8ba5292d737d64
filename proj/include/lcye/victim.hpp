#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "lcye/nn.hpp"
#include "lcye/synth_data.hpp"

namespace lcye {

enum class Arch { convnet_global, convnet_parts };
Arch parse_arch(const std::string& name);
std::string to_string(Arch a);

struct FeatureDims {
  int h = 0, w = 0, c = 0;
};

/// Four stride-2 blocks (conv3x3/2 + BN + ReLU, conv3x3/1 + BN + ReLU). Maps
/// B x 3 x H x W to B x C x H/16 x W/16.
class Backbone {
 public:
  Backbone() = default;
  Backbone(int in_channels, const std::vector<int>& widths, Rng& rng);
  ag::Var operator()(const ag::Var& x, bool training);
  void collect(nn::ParamList& list, const std::string& prefix);
  int out_channels() const { return out_channels_; }

 private:
  struct Block {
    nn::Conv2d down, conv;
    nn::BatchNorm bn1, bn2;
  };
  std::vector<Block> blocks_;
  int out_channels_ = 0;
};

/// Toy ReID model: spatial subnet M' plus a max-pool / BN / classifier head.
/// convnet_parts splits the map into two horizontal stripes with separate
/// reduction, BN and classifier; its embedding concatenates the stripes and
/// its logits sum them.
class VictimModel {
 public:
  struct Output {
    ag::Var feature_map;  // M'(x)
    ag::Var pooled;       // pre-BN vector used by the triplet term
    ag::Var embedding;    // post-BN, dimension C
    ag::Var logits;       // B x num_classes
  };

  static VictimModel build(Arch arch, int num_classes, std::uint64_t seed);

  VictimModel() = default;
  VictimModel(VictimModel&&) = default;
  VictimModel& operator=(VictimModel&&) = default;
  // Parameters are shared handles; use clone() for an independent copy.
  VictimModel(const VictimModel&) = delete;
  VictimModel& operator=(const VictimModel&) = delete;
  VictimModel clone();

  Arch arch() const { return arch_; }
  int num_classes() const { return num_classes_; }
  int channels() const { return subnet_.out_channels(); }
  FeatureDims feature_dims(int height, int width) const;

  ag::Var features(const ag::Var& x, bool training);
  Output forward(const ag::Var& x, bool training);

  nn::ParamList subnet_params();
  nn::ParamList head_params();
  nn::ParamList all_params();

 private:
  struct Part {
    nn::Linear reduce;
    nn::BatchNorm bn;
    nn::Linear classifier;
  };
  Arch arch_ = Arch::convnet_global;
  int num_classes_ = 0;
  Backbone subnet_;
  nn::BatchNorm bn_;
  nn::Linear classifier_;
  std::vector<Part> parts_;
};

/// Inference-mode embeddings (B x C) and logits, batched internally.
Tensor embed(VictimModel& model, const ImageBatch& batch);
Tensor logits(VictimModel& model, const ImageBatch& batch);
Tensor embed_pixels(VictimModel& model, const Tensor& pixels);
Tensor logits_pixels(VictimModel& model, const Tensor& pixels);

struct TrainHParams {
  int batch_size = 32;
  int ids_per_batch = 4;
  double lr = 1e-3;
  int epochs = 30;
  double triplet_margin = 0.3;
  std::uint64_t seed = 0;
  bool augment = true;  // random horizontal flip and up to 4 px shift

  void validate() const;
};

/// Identity-balanced batches: P identities x K instances, identities drawn
/// without replacement per epoch, instances without replacement when enough.
std::vector<std::vector<int>> pk_batches(const std::vector<int>& labels, int ids_per_batch, int per_id, Rng& rng);

/// Flips and shifts each image with edge replication; deterministic in rng.
Tensor augment_batch(const Tensor& pixels, Rng& rng, int max_shift = 4);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double triplet = 0.0;
  double train_accuracy = 0.0;  // percent, inference mode on the train split
  double rank1 = -1.0;          // percent on query/gallery, -1 if not evaluated
  nlohmann::json to_json() const;
};

/// Cross-entropy plus batch-hard triplet with Adam. Throws on a non-finite
/// loss naming the epoch.
std::vector<EpochRecord> train_victim(VictimModel& model, const DatasetSplits& splits, const TrainHParams& hp);

/// Query Rank-1 of clean images, in percent.
double clean_rank1(VictimModel& model, const DatasetSplits& splits);

}  // namespace lcye
