#include "lcye/image_io.hpp"

#include <png.h>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

#include "lcye/ops.hpp"

namespace lcye {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open " + path);
  return f;
}

std::string lower_ext(const std::string& path) {
  auto dot = path.find_last_of('.');
  if (dot == std::string::npos) return {};
  std::string e = path.substr(dot + 1);
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

Tensor read_png(const std::string& path) {
  auto f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("corrupt PNG " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const auto rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> buf(rowbytes * static_cast<std::size_t>(h));
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = buf.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  Tensor out({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out[(static_cast<std::size_t>(c) * h + y) * w + x] = rows[y][x * 3 + c] / 255.0;
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Tensor read_jpeg(const std::string& path) {
  auto f = open_file(path, "rb");
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw std::runtime_error("corrupt JPEG " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int w = static_cast<int>(cinfo.output_width), h = static_cast<int>(cinfo.output_height);
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  Tensor out({3, h, w});
  while (cinfo.output_scanline < cinfo.output_height) {
    const int y = static_cast<int>(cinfo.output_scanline);
    unsigned char* p = row.data();
    jpeg_read_scanlines(&cinfo, &p, 1);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out[(static_cast<std::size_t>(c) * h + y) * w + x] = row[x * 3 + c] / 255.0;
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

void write_png(const std::string& path, const Tensor& image, const std::map<std::string, std::string>& text) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw std::invalid_argument("write_png expects 1xHxW or 3xHxW, got " + shape_str(image.shape()));
  }
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  auto f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing PNG " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  std::vector<std::string> keys, values;
  for (const auto& [k, v] : text) {
    keys.push_back(k);
    values.push_back(v);
  }
  std::vector<png_text> chunks(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = keys[i].data();
    chunks[i].text = values[i].data();
    chunks[i].text_length = values[i].size();
  }
  if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
  png_write_info(png, info);
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) {
        const double v = std::clamp(image[(static_cast<std::size_t>(k) * h + y) * w + x], 0.0, 1.0);
        row[static_cast<std::size_t>(x) * c + k] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_image(const std::string& path) {
  const std::string ext = lower_ext(path);
  if (ext == "png") return read_png(path);
  if (ext == "jpg" || ext == "jpeg") return read_jpeg(path);
  throw std::invalid_argument("unsupported image extension: " + path);
}

std::map<std::string, std::string> read_png_text(const std::string& path) {
  auto f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("corrupt PNG " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_textp texts = nullptr;
  int n = 0;
  png_get_text(png, info, &texts, &n);
  std::map<std::string, std::string> out;
  for (int i = 0; i < n; ++i) out[texts[i].key] = std::string(texts[i].text, texts[i].text_length);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

Tensor resize_image(const Tensor& image, int height, int width) {
  if (image.dim(1) == height && image.dim(2) == width) return image;
  ag::NoGradGuard guard;
  Shape s = image.shape();
  ag::Var x(image.reshaped({1, s[0], s[1], s[2]}));
  return ag::resize_bilinear(x, height, width).value().reshaped({s[0], height, width});
}

Tensor heatmap(const Tensor& field, double lo, double hi) {
  const int h = field.dim(field.rank() - 2), w = field.dim(field.rank() - 1);
  Tensor out({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double t = std::clamp((field[static_cast<std::size_t>(y) * w + x] - lo) / (hi - lo), 0.0, 1.0);
      // blue -> green -> red
      const double r = std::clamp(2.0 * t - 1.0, 0.0, 1.0);
      const double b = std::clamp(1.0 - 2.0 * t, 0.0, 1.0);
      const double g = 1.0 - r - b;
      out[(0 * static_cast<std::size_t>(h) + y) * w + x] = r;
      out[(1 * static_cast<std::size_t>(h) + y) * w + x] = g;
      out[(2 * static_cast<std::size_t>(h) + y) * w + x] = b;
    }
  return out;
}

}  // namespace lcye
