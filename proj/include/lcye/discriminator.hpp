#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lcye/memory.hpp"
#include "lcye/nn.hpp"

namespace lcye {

/// Centered crop covering `area_fraction` of the image (each side scaled by
/// its square root), resized back to full resolution.
ag::Var center_crop_resized(const ag::Var& img, double area_fraction);

/// Three sub-discriminators on nested center crops of area {1, 1/4, 1/16}.
/// Each stage is five stride-2 conv3x3 + LeakyReLU layers; their maps at
/// ratios {1/32, 1/16, 1/8, 1/4} are projected to a common width, summed over
/// stages and fused top-down. The memory is read at the 1/4 level and every
/// stage scores N + 1 classes (index N = fake).
class MultiStageDiscriminator {
 public:
  static constexpr std::array<double, 3> kCropAreas = {1.0, 0.25, 1.0 / 16.0};
  static constexpr int kStages = 3;
  static constexpr int kLevels = 4;

  struct Output {
    std::vector<ag::Var> pyramid;      // coarsest (1/32) to finest (1/4)
    ag::Var h_d;                       // memory read at the 1/4 level
    std::vector<ag::Var> stage_logits;  // kStages x (B x N+1)
  };

  MultiStageDiscriminator() = default;
  MultiStageDiscriminator(int num_ids, int memory_channels, std::uint64_t seed);

  int num_ids() const { return num_ids_; }
  int fake_class() const { return num_ids_; }

  /// Pyramid only; requires H and W divisible by 32.
  std::vector<ag::Var> multi_stage_features(const ag::Var& img) const;
  /// `K` is read only; it is detached before use.
  Output operator()(const ag::Var& img, const ag::Var& K) const;

  nn::ParamList params();

 private:
  struct Stage {
    std::vector<nn::Conv2d> convs;
    nn::Linear head;
  };
  struct Features {
    std::vector<ag::Var> pyramid;
    std::vector<ag::Var> stage_top;  // deepest map of each stage
  };
  Features features(const ag::Var& img) const;

  int num_ids_ = 0;
  int width_ = 0;
  std::vector<Stage> stages_;
  std::vector<nn::Conv2d> laterals_;  // one per (stage, level)
};

}  // namespace lcye
