#pragma once

#include <map>
#include <string>

#include "lcye/tensor.hpp"

namespace lcye {

/// Writes a C x H x W tensor (C = 1 or 3, values in [0,1]) as an 8-bit PNG.
/// `text` entries are stored as tEXt chunks.
void write_png(const std::string& path, const Tensor& image, const std::map<std::string, std::string>& text = {});

/// Reads a PNG or JPEG into a 3 x H x W tensor in [0,1].
Tensor read_image(const std::string& path);

/// tEXt chunks of a PNG file.
std::map<std::string, std::string> read_png_text(const std::string& path);

/// Bilinear resize of a C x H x W tensor.
Tensor resize_image(const Tensor& image, int height, int width);

/// Maps a single-channel H x W field in [lo, hi] to an RGB heatmap.
Tensor heatmap(const Tensor& field, double lo, double hi);

}  // namespace lcye
