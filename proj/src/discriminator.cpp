#include "lcye/discriminator.hpp"

#include <cmath>
#include <stdexcept>

#include "lcye/ops.hpp"

namespace lcye {

namespace {
constexpr double kSlope = 0.2;
const std::vector<int> kStageWidths = {8, 16, 32, 64, 64};
}  // namespace

ag::Var center_crop_resized(const ag::Var& img, double area_fraction) {
  if (!(area_fraction > 0.0 && area_fraction <= 1.0)) throw std::invalid_argument("crop area must be in (0, 1]");
  if (area_fraction == 1.0) return img;
  const double side = std::sqrt(area_fraction);
  const int H = img.dim(2), W = img.dim(3);
  const int h = static_cast<int>(std::lround(H * side)), w = static_cast<int>(std::lround(W * side));
  return ag::resize_bilinear(ag::crop(img, (H - h) / 2, (W - w) / 2, h, w), H, W);
}

MultiStageDiscriminator::MultiStageDiscriminator(int num_ids, int memory_channels, std::uint64_t seed)
    : num_ids_(num_ids), width_(memory_channels) {
  if (num_ids < 1 || memory_channels < 1) throw std::invalid_argument("discriminator: bad dimensions");
  Rng root = Rng(seed).substream("discriminator");
  for (int s = 0; s < kStages; ++s) {
    Rng rng = root.substream("stage", static_cast<std::uint64_t>(s));
    Stage st;
    int c = 3;
    for (int w : kStageWidths) {
      st.convs.emplace_back(c, w, 3, 2, 1, true, rng);
      c = w;
    }
    st.head = nn::Linear(kStageWidths.back() + 2 * width_, num_ids + 1, true, rng);
    stages_.push_back(std::move(st));
    for (int l = 0; l < kLevels; ++l) {
      // Level 0 is the 1/32 map (conv index 4), level 3 the 1/4 map (conv index 1).
      laterals_.emplace_back(kStageWidths[static_cast<std::size_t>(4 - l)], width_, 1, 1, 0, true, rng);
    }
  }
}

MultiStageDiscriminator::Features MultiStageDiscriminator::features(const ag::Var& img) const {
  if (img.value().rank() != 4 || img.dim(1) != 3 || img.dim(2) % 32 != 0 || img.dim(3) % 32 != 0) {
    throw std::invalid_argument("discriminator expects B x 3 x H x W with H, W divisible by 32, got " +
                                shape_str(img.shape()));
  }
  Features f;
  std::vector<ag::Var> lateral_sum(kLevels);
  for (int s = 0; s < kStages; ++s) {
    ag::Var h = center_crop_resized(img, kCropAreas[static_cast<std::size_t>(s)]);
    std::vector<ag::Var> maps;
    for (const auto& conv : stages_[static_cast<std::size_t>(s)].convs) {
      h = ag::leaky_relu(conv(h), kSlope);
      maps.push_back(h);
    }
    f.stage_top.push_back(h);
    for (int l = 0; l < kLevels; ++l) {
      ag::Var lat = laterals_[static_cast<std::size_t>(s * kLevels + l)](maps[static_cast<std::size_t>(4 - l)]);
      lateral_sum[static_cast<std::size_t>(l)] =
          lateral_sum[static_cast<std::size_t>(l)].defined() ? ag::add(lateral_sum[static_cast<std::size_t>(l)], lat)
                                                             : lat;
    }
  }
  ag::Var p = lateral_sum[0];
  f.pyramid.push_back(p);
  for (int l = 1; l < kLevels; ++l) {
    p = ag::add(lateral_sum[static_cast<std::size_t>(l)], ag::upsample_nearest2x(p));
    f.pyramid.push_back(p);
  }
  return f;
}

std::vector<ag::Var> MultiStageDiscriminator::multi_stage_features(const ag::Var& img) const {
  return features(img).pyramid;
}

MultiStageDiscriminator::Output MultiStageDiscriminator::operator()(const ag::Var& img, const ag::Var& K) const {
  if (K.dim(1) != width_) {
    throw std::invalid_argument("discriminator: memory channels " + std::to_string(K.dim(1)) + " vs " +
                                std::to_string(width_));
  }
  if (K.dim(0) != num_ids_) {
    throw std::invalid_argument("discriminator: memory rows " + std::to_string(K.dim(0)) + " vs " +
                                std::to_string(num_ids_) + " identities");
  }
  Features f = features(img);
  Output o;
  o.pyramid = f.pyramid;
  o.h_d = mra_read(f.pyramid.back(), K.detach());
  ag::Var shared = ag::concat1({ag::global_avg_pool(f.pyramid.back()), ag::global_avg_pool(o.h_d)});
  for (int s = 0; s < kStages; ++s) {
    ag::Var in = ag::concat1({ag::global_avg_pool(f.stage_top[static_cast<std::size_t>(s)]), shared});
    o.stage_logits.push_back(stages_[static_cast<std::size_t>(s)].head(in));
  }
  return o;
}

nn::ParamList MultiStageDiscriminator::params() {
  nn::ParamList l;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const std::string p = "discriminator.stage" + std::to_string(s) + ".";
    for (std::size_t i = 0; i < stages_[s].convs.size(); ++i) stages_[s].convs[i].collect(l, p + "conv" + std::to_string(i) + ".");
    stages_[s].head.collect(l, p + "head.");
    for (int lv = 0; lv < kLevels; ++lv) {
      laterals_[s * kLevels + static_cast<std::size_t>(lv)].collect(l, p + "lateral" + std::to_string(lv) + ".");
    }
  }
  return l;
}

}  // namespace lcye
