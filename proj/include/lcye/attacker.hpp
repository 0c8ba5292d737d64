#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lcye/memory.hpp"
#include "lcye/nn.hpp"
#include "lcye/victim.hpp"

namespace lcye {

/// conv3x3/2 -> LeakyReLU -> conv3x3 plus a strided 1x1 shortcut.
class ResBlockDown {
 public:
  ResBlockDown() = default;
  ResBlockDown(int in, int out, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
  void collect(nn::ParamList& list, const std::string& prefix);

 private:
  nn::Conv2d conv1_, conv2_, skip_;
};

/// Nearest 2x upsample, then conv3x3 -> LeakyReLU -> conv3x3 plus a 1x1 shortcut.
class ResBlockUp {
 public:
  ResBlockUp() = default;
  ResBlockUp(int in, int out, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
  void collect(nn::ParamList& list, const std::string& prefix);

 private:
  nn::Conv2d conv1_, conv2_, skip_;
};

/// Full-resolution stem -> encoder -> memory read -> fusion -> decoder.
/// Decoder stages add the matching encoder activations (U-Net style); the
/// output conv also sees the stem features. A learned 3 x H x W pattern is
/// added to the output, which is standardized per image before the tanh.
class Generator {
 public:
  struct Output {
    ag::Var noise;     // B x 3 x H x W in [-1, 1]
    ag::Var encoded;   // f_g, B x C x H/16 x W/16
    ag::Var h_attack;  // memory read of f_g
    ag::Var weights;   // address weights of that read
  };

  Generator() = default;
  Generator(int memory_channels, int height, int width, Rng& rng);
  /// `K` is read only; it is detached before use.
  Output operator()(const ag::Var& x, const ag::Var& K, const ReadOptions& read) const;
  void collect(nn::ParamList& list, const std::string& prefix = "attacker.generator.");
  bool skips = true;
  int height() const { return pattern_.value().dim(2); }
  int width() const { return pattern_.value().dim(3); }

 private:
  std::vector<ResBlockDown> encoder_;
  std::vector<ResBlockUp> decoder_;
  nn::Conv2d stem_, fusion_, out_;
  ag::Var pattern_;  // 1 x 3 x H x W
};

/// Projects victim features to one channel, upsamples bilinearly, squashes.
class MaskPredictor {
 public:
  MaskPredictor() = default;
  MaskPredictor(int feature_channels, Rng& rng);
  ag::Var operator()(const ag::Var& features, int height, int width) const;
  void collect(nn::ParamList& list, const std::string& prefix = "attacker.mask.");

  nn::Conv2d projection;
};

/// x' = clamp01(x + clamp(eps * m * n, -eps, eps)). Throws if eps <= 0.
ag::Var compose_adversary(const ag::Var& x, const ag::Var& noise, const ag::Var& mask, double epsilon);

/// Per-image multiplier for a B x 1 x H x W mask: 1 on the top
/// floor(ratio*H*W) entries (ties to the lower index), 0 elsewhere, or
/// `relax_factor` elsewhere in relaxed mode.
Tensor pixel_budget_multiplier(const Tensor& mask, double ratio, bool relaxed, double relax_factor = 0.1);
ag::Var apply_pixel_budget(const ag::Var& mask, double ratio, bool relaxed, double relax_factor = 0.1);

struct AttackConfig {
  double epsilon = 16.0 / 255.0;
  double pixel_ratio = 1.0;
  bool relaxed = false;
  double relax_factor = 0.1;
  double temperature = 1.0;

  void validate() const;
};

struct AttackArtifacts {
  ag::Var noise;
  ag::Var mask;  // after the pixel budget
  ag::Var adversary;
  ag::Var h_attack;
  ag::Var weights;
  double epsilon = 0.0;
  /// Identity each adversary claims: the target in target mode, otherwise
  /// the dominant prototype of the generator's memory read.
  std::vector<int> claimed_ids;
};

/// Generator G plus mask predictor O.
class Attacker {
 public:
  Attacker() = default;
  Attacker(int feature_channels, int memory_channels, std::uint64_t seed, int height = 64, int width = 32);

  /// `features` = M'(x) of the knowledge source. `targets` switches to the
  /// targeted read with a one-hot indicator per sample.
  AttackArtifacts operator()(const ag::Var& x, const ag::Var& features, const ag::Var& K, const AttackConfig& config,
                             const std::vector<int>* targets = nullptr) const;

  Generator generator;
  MaskPredictor mask;

  nn::ParamList params();
};

struct PgdParams {
  double epsilon = 16.0 / 255.0;
  int steps = 10;
  double step_size = 2.0 / 255.0;
};

/// Sign-gradient ascent on the victim's cross-entropy toward `labels`,
/// projected onto the epsilon ball and [0, 1] after every step. No random
/// start. The victim runs in inference mode and is not modified.
Tensor pgd_baseline(VictimModel& victim, const Tensor& x, const std::vector<int>& labels, const PgdParams& p);

}  // namespace lcye
