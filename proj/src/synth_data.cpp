#include "lcye/synth_data.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "lcye/image_io.hpp"
#include "lcye/rng.hpp"

namespace fs = std::filesystem;

namespace lcye {

ImageBatch ImageBatch::select(const std::vector<int>& indices) const {
  ImageBatch out;
  out.pixels = gather_batch(pixels, indices);
  for (int i : indices) {
    out.person_ids.push_back(person_ids.at(static_cast<std::size_t>(i)));
    out.camera_ids.push_back(camera_ids.at(static_cast<std::size_t>(i)));
  }
  return out;
}

ImageBatch ImageBatch::range(int begin, int end) const {
  ImageBatch out;
  out.pixels = pixels.slice_batch(begin, end);
  out.person_ids.assign(person_ids.begin() + begin, person_ids.begin() + end);
  out.camera_ids.assign(camera_ids.begin() + begin, camera_ids.begin() + end);
  return out;
}

void ImageBatch::validate() const {
  if (pixels.rank() != 4) throw std::invalid_argument("ImageBatch pixels must be B x C x H x W");
  if (pixels.dim(0) != size() || camera_ids.size() != person_ids.size()) {
    throw std::invalid_argument("ImageBatch label count does not match batch size");
  }
  for (double v : pixels.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("ImageBatch pixel outside [0,1]");
  }
}

std::vector<IdentitySpec> generate_identity_specs(std::uint64_t seed, int id_count) {
  if (id_count < 1) throw std::invalid_argument("generate_identity_specs: id_count must be >= 1");
  Rng root = Rng(seed).substream("identity");
  std::vector<IdentitySpec> specs;
  for (int id = 0; id < id_count; ++id) {
    Rng r = root.substream("spec", static_cast<std::uint64_t>(id));
    IdentitySpec s;
    s.id = id;
    for (auto& c : s.shirt_color) c = r.uniform(0.05, 0.95);
    for (auto& c : s.pants_color) c = r.uniform(0.05, 0.95);
    s.body_scale = r.uniform(0.8, 1.2);
    s.hat = r.bernoulli(0.3);
    const double tone = r.uniform(0.35, 0.9);
    s.skin_tone = {tone, tone * r.uniform(0.7, 0.85), tone * r.uniform(0.5, 0.7)};
    specs.push_back(s);
  }
  return specs;
}

bool PersonLayout::in_head(int y, int x) const {
  const double dy = (y + 0.5 - head_cy) / head_ry, dx = (x + 0.5 - head_cx) / head_rx;
  return dx * dx + dy * dy <= 1.0;
}

bool PersonLayout::in_foreground(int y, int x) const {
  return in_head(y, x) || (has_hat && hat.contains(y, x)) || torso.contains(y, x) || left_leg.contains(y, x) ||
         right_leg.contains(y, x);
}

PersonLayout layout_person(const IdentitySpec& spec, std::uint64_t pose_seed, int height, int width) {
  // Geometry is designed on a 64 x 32 canvas and scaled.
  Rng r = Rng(pose_seed).substream("pose");
  const double sy = height / 64.0, sx = width / 32.0;
  const double u = spec.body_scale;
  const int dx = r.uniform_int(-3, 3), dy = r.uniform_int(-3, 3);
  const double torso_jit = r.uniform(0.9, 1.1), leg_jit = r.uniform(0.9, 1.1);

  const double cx = 16.0 + dx, feet = 61.0 + dy;
  const double leg_h = 22.0 * u, torso_h = 18.0 * u;
  const double leg_top = feet - leg_h, torso_top = leg_top - torso_h;
  const double torso_w = 14.0 * u * torso_jit, leg_w = 5.0 * u * leg_jit;

  auto box = [&](double top, double bottom, double left, double right) {
    Box b;
    b.top = std::clamp(static_cast<int>(std::lround(top * sy)), 0, height);
    b.bottom = std::clamp(static_cast<int>(std::lround(bottom * sy)), 0, height);
    b.left = std::clamp(static_cast<int>(std::lround(left * sx)), 0, width);
    b.right = std::clamp(static_cast<int>(std::lround(right * sx)), 0, width);
    return b;
  };

  PersonLayout l;
  l.torso = box(torso_top, leg_top, cx - torso_w / 2, cx + torso_w / 2);
  l.left_leg = box(leg_top, feet, cx - 1.0 - leg_w, cx - 1.0);
  l.right_leg = box(leg_top, feet, cx + 1.0, cx + 1.0 + leg_w);
  const double ry = 5.0 * u, rx = 4.0 * u;
  l.head_cy = (torso_top - ry + 0.5) * sy;
  l.head_cx = cx * sx;
  l.head_ry = ry * sy;
  l.head_rx = rx * sx;
  l.has_hat = spec.hat;
  const double head_top = torso_top - 2.0 * ry + 0.5;
  l.hat = box(head_top - 2.0 * u, head_top + 0.6 * ry, cx - rx - 1.0, cx + rx + 1.0);
  return l;
}

Tensor render_person(const IdentitySpec& spec, int camera_id, std::uint64_t pose_seed, int height, int width) {
  const PersonLayout l = layout_person(spec, pose_seed, height, width);
  Rng cam = Rng(0x5eedca3e).substream("camera", static_cast<std::uint64_t>(camera_id));
  Rgb tint;
  for (auto& c : tint) c = cam.uniform(0.15, 0.85);
  const double brightness = cam.uniform(-0.1, 0.1);
  const double slope = cam.uniform(-0.15, 0.15);
  Rng texture = Rng(pose_seed).substream("texture");
  const Rgb hat_color{0.1, 0.1, 0.12};

  Tensor img({3, height, width});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      Rgb c;
      if (l.has_hat && l.hat.contains(y, x)) {
        c = hat_color;
      } else if (l.in_head(y, x)) {
        c = spec.skin_tone;
      } else if (l.torso.contains(y, x)) {
        c = spec.shirt_color;
      } else if (l.left_leg.contains(y, x) || l.right_leg.contains(y, x)) {
        c = spec.pants_color;
      } else {
        const double g = brightness + slope * (static_cast<double>(y) / height - 0.5);
        c = {tint[0] + g, tint[1] + g, tint[2] + g};
      }
      for (int k = 0; k < 3; ++k) {
        img[(static_cast<std::size_t>(k) * height + y) * width + x] = std::clamp(c[k] + texture.normal(0.0, 0.03), 0.0, 1.0);
      }
    }
  }
  return img;
}

std::uint64_t pose_seed_for(std::uint64_t seed, int id, int index) {
  return splitmix64(Rng(seed).substream("image", static_cast<std::uint64_t>(id)).seed() +
                    static_cast<std::uint64_t>(index));
}

DatasetSplits build_dataset(const DatasetParams& p) {
  if (p.num_cameras < 2) throw std::invalid_argument("build_dataset: num_cameras must be >= 2");
  if (p.imgs_per_id < 4) throw std::invalid_argument("build_dataset: imgs_per_id must be >= 4");
  if (p.num_train_ids < 1 || p.num_test_ids < 1) throw std::invalid_argument("build_dataset: id counts must be >= 1");
  if (p.height % 16 != 0 || p.width % 16 != 0) throw std::invalid_argument("build_dataset: H and W must be multiples of 16");

  const auto specs = generate_identity_specs(p.seed, p.num_train_ids + p.num_test_ids);
  std::vector<Tensor> train_px, query_px, gallery_px;
  DatasetSplits s;
  s.num_train_ids = p.num_train_ids;
  for (const auto& spec : specs) {
    const bool is_train = spec.id < p.num_train_ids;
    for (int k = 0; k < p.imgs_per_id; ++k) {
      const int cam = (spec.id + k) % p.num_cameras;
      Tensor img = render_person(spec, cam, pose_seed_for(p.seed, spec.id, k), p.height, p.width);
      ImageBatch* dst;
      std::vector<Tensor>* px;
      if (is_train) {
        dst = &s.train;
        px = &train_px;
      } else if (k < 2) {
        dst = &s.query;
        px = &query_px;
      } else {
        dst = &s.gallery;
        px = &gallery_px;
      }
      px->push_back(std::move(img));
      dst->person_ids.push_back(spec.id);
      dst->camera_ids.push_back(cam);
    }
  }
  s.train.pixels = stack_batch(train_px);
  s.query.pixels = stack_batch(query_px);
  s.gallery.pixels = stack_batch(gallery_px);
  check_split_invariants(s);
  return s;
}

void check_split_invariants(const DatasetSplits& s) {
  std::set<int> train(s.train.person_ids.begin(), s.train.person_ids.end());
  for (const auto* b : {&s.query, &s.gallery}) {
    for (int id : b->person_ids) {
      if (train.count(id)) throw std::logic_error("identity " + std::to_string(id) + " is in both train and test");
    }
  }
  for (int q = 0; q < s.query.size(); ++q) {
    bool ok = false;
    for (int g = 0; g < s.gallery.size() && !ok; ++g) {
      ok = s.gallery.person_ids[g] == s.query.person_ids[q] && s.gallery.camera_ids[g] != s.query.camera_ids[q];
    }
    if (!ok) throw std::logic_error("query " + std::to_string(q) + " has no cross-camera gallery positive");
  }
}

bool parse_market_filename(const std::string& name, ParsedName& out) {
  static const std::regex re(R"(^(\d+)_c(\d+)(?:s\d+)?_(\d+)(?:_\d+)?\.(png|jpg|jpeg|PNG|JPG|JPEG)$)");
  std::smatch m;
  if (!std::regex_match(name, m, re)) return false;
  out.person_id = std::stoi(m[1]);
  out.camera_id = std::stoi(m[2]);
  out.sequence = std::stoi(m[3]);
  return true;
}

LoadResult load_market_layout(const std::string& root_dir, int height, int width) {
  struct Entry {
    ParsedName name;
    fs::path path;
  };
  LoadResult result;
  std::map<std::string, std::vector<Entry>> entries;
  for (const char* split : {"train", "query", "gallery"}) {
    const fs::path dir = fs::path(root_dir) / split;
    if (!fs::is_directory(dir)) throw std::runtime_error("missing split directory " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      ParsedName pn;
      if (!parse_market_filename(f.filename().string(), pn)) {
        result.errors.push_back(f.string() + ": unparseable filename");
        continue;
      }
      entries[split].push_back({pn, f});
    }
    if (entries[split].empty()) throw std::runtime_error(std::string("empty split: ") + split);
  }

  // Train ids become contiguous class indices; test ids continue after them.
  std::map<int, int> remap;
  std::set<int> train_ids, test_ids;
  for (const auto& e : entries["train"]) train_ids.insert(e.name.person_id);
  for (const char* split : {"query", "gallery"}) {
    for (const auto& e : entries[split]) {
      if (!train_ids.count(e.name.person_id)) test_ids.insert(e.name.person_id);
    }
  }
  int next = 0;
  for (int id : train_ids) remap[id] = next++;
  for (int id : test_ids) remap[id] = next++;

  auto load = [&](const std::vector<Entry>& list, ImageBatch& out) {
    std::vector<Tensor> px;
    for (const auto& e : list) {
      try {
        px.push_back(resize_image(read_image(e.path.string()), height, width));
      } catch (const std::exception& ex) {
        result.errors.push_back(e.path.string() + ": " + ex.what());
        continue;
      }
      out.person_ids.push_back(remap.at(e.name.person_id));
      out.camera_ids.push_back(e.name.camera_id);
    }
    if (px.empty()) throw std::runtime_error("empty split: no readable images");
    out.pixels = stack_batch(px);
    for (auto& v : out.pixels.values()) v = std::clamp(v, 0.0, 1.0);
  };
  load(entries["train"], result.splits.train);
  load(entries["query"], result.splits.query);
  load(entries["gallery"], result.splits.gallery);
  result.splits.num_train_ids = static_cast<int>(train_ids.size());
  return result;
}

void write_market_layout(const DatasetSplits& splits, const std::string& root_dir, const DatasetParams& params,
                         const std::string& config_hash) {
  nlohmann::json manifest;
  manifest["seed"] = params.seed;
  manifest["num_train_ids"] = splits.num_train_ids;
  manifest["num_test_ids"] = params.num_test_ids;
  manifest["imgs_per_id"] = params.imgs_per_id;
  manifest["num_cameras"] = params.num_cameras;
  manifest["height"] = splits.train.height();
  manifest["width"] = splits.train.width();
  if (!config_hash.empty()) manifest["config_hash"] = config_hash;
  std::map<std::string, std::string> text;
  if (!config_hash.empty()) text["config_hash"] = config_hash;

  for (auto [name, batch] : {std::pair{"train", &splits.train}, std::pair{"query", &splits.query},
                             std::pair{"gallery", &splits.gallery}}) {
    const fs::path dir = fs::path(root_dir) / name;
    fs::create_directories(dir);
    std::map<std::pair<int, int>, int> seq;
    nlohmann::json files = nlohmann::json::array();
    for (int i = 0; i < batch->size(); ++i) {
      const int pid = batch->person_ids[i], cam = batch->camera_ids[i];
      char fname[64];
      std::snprintf(fname, sizeof fname, "%04d_c%d_%04d.png", pid, cam, ++seq[{pid, cam}]);
      Tensor img = batch->pixels.slice_batch(i, i + 1);
      write_png((dir / fname).string(), img.reshaped({img.dim(1), img.dim(2), img.dim(3)}), text);
      files.push_back(std::string(name) + "/" + fname);
    }
    manifest["splits"][name] = files;
  }
  std::ofstream(fs::path(root_dir) / "dataset.json") << manifest.dump(2) << "\n";
}

}  // namespace lcye
