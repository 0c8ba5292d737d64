#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lcye/tensor.hpp"

namespace lcye {

using Rgb = std::array<double, 3>;

struct IdentitySpec {
  int id = 0;
  Rgb shirt_color{};
  Rgb pants_color{};
  double body_scale = 1.0;  // in [0.8, 1.2]
  bool hat = false;
  Rgb skin_tone{};
};

/// B x C x H x W pixels in [0,1] with per-image labels.
struct ImageBatch {
  Tensor pixels;
  std::vector<int> person_ids;
  std::vector<int> camera_ids;

  int size() const { return static_cast<int>(person_ids.size()); }
  int channels() const { return pixels.dim(1); }
  int height() const { return pixels.dim(2); }
  int width() const { return pixels.dim(3); }
  ImageBatch select(const std::vector<int>& indices) const;
  ImageBatch range(int begin, int end) const;
  /// Throws if labels and pixels disagree or a pixel leaves [0,1].
  void validate() const;
};

struct DatasetSplits {
  ImageBatch train;
  ImageBatch query;
  ImageBatch gallery;
  int num_train_ids = 0;
};

struct DatasetParams {
  std::uint64_t seed = 0;
  int num_train_ids = 20;
  int num_test_ids = 10;
  int imgs_per_id = 12;
  int num_cameras = 4;
  int height = 64;
  int width = 32;
};

std::vector<IdentitySpec> generate_identity_specs(std::uint64_t seed, int id_count);

/// Integer pixel boxes of the rendered figure, [top, bottom) x [left, right).
struct Box {
  int top = 0, bottom = 0, left = 0, right = 0;
  bool contains(int y, int x) const { return y >= top && y < bottom && x >= left && x < right; }
  int area() const { return std::max(0, bottom - top) * std::max(0, right - left); }
};

struct PersonLayout {
  double head_cy = 0, head_cx = 0, head_ry = 0, head_rx = 0;
  Box hat;
  bool has_hat = false;
  Box torso;
  Box left_leg, right_leg;

  bool in_head(int y, int x) const;
  bool in_foreground(int y, int x) const;
};

/// Figure geometry for a spec and pose seed on an H x W canvas.
PersonLayout layout_person(const IdentitySpec& spec, std::uint64_t pose_seed, int height = 64, int width = 32);

/// 3 x H x W image of the person on a camera-tinted background.
Tensor render_person(const IdentitySpec& spec, int camera_id, std::uint64_t pose_seed, int height = 64,
                     int width = 32);

/// Per-image pose seed; depends only on (seed, id, index).
std::uint64_t pose_seed_for(std::uint64_t seed, int id, int index);

/// Train ids are 0..N-1 and test ids follow. Image k of identity id is seen by
/// camera (id + k) mod cameras; test images 0 and 1 are queries.
DatasetSplits build_dataset(const DatasetParams& params);

/// Throws unless train and test identities are disjoint and every query has a
/// same-identity gallery image under another camera.
void check_split_invariants(const DatasetSplits& splits);

struct ParsedName {
  int person_id = 0;
  int camera_id = 0;
  int sequence = 0;
};
/// Parses "<pid>_c<cam>_<seq>.<ext>" and the Market "<pid>_c<cam>s<k>_<seq>_<n>.<ext>" form.
bool parse_market_filename(const std::string& name, ParsedName& out);

struct LoadResult {
  DatasetSplits splits;
  std::vector<std::string> errors;  // one line per skipped file
};

LoadResult load_market_layout(const std::string& root_dir, int height = 64, int width = 32);

/// Writes root/{train,query,gallery}/ PNGs and root/dataset.json.
void write_market_layout(const DatasetSplits& splits, const std::string& root_dir, const DatasetParams& params,
                         const std::string& config_hash = "");

}  // namespace lcye
