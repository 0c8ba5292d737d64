#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "lcye/image_io.hpp"
#include "lcye/synth_data.hpp"

using namespace lcye;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("lcye_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double region_mean(const Tensor& img, int channel, const Box& b) {
  double s = 0.0;
  for (int y = b.top; y < b.bottom; ++y)
    for (int x = b.left; x < b.right; ++x) s += img[(static_cast<std::size_t>(channel) * img.dim(1) + y) * img.dim(2) + x];
  return s / b.area();
}
}  // namespace

TEST_CASE("identity specs are deterministic, bounded and seed dependent") {
  auto one = generate_identity_specs(7, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].id == 0);

  auto a = generate_identity_specs(7, 20), b = generate_identity_specs(7, 20), c = generate_identity_specs(8, 20);
  bool any_diff = false;
  for (int i = 0; i < 20; ++i) {
    CHECK(a[i].shirt_color == b[i].shirt_color);
    CHECK(a[i].pants_color == b[i].pants_color);
    CHECK(a[i].body_scale == b[i].body_scale);
    CHECK(a[i].hat == b[i].hat);
    any_diff = any_diff || a[i].shirt_color != c[i].shirt_color;
    CHECK(a[i].body_scale >= 0.8);
    CHECK(a[i].body_scale <= 1.2);
    for (const Rgb* col : {&a[i].shirt_color, &a[i].pants_color, &a[i].skin_tone})
      for (double v : *col) CHECK((v >= 0.0 && v <= 1.0));
    for (int j = 0; j < i; ++j) CHECK((a[i].shirt_color != a[j].shirt_color || a[i].pants_color != a[j].pants_color));
  }
  CHECK(any_diff);
  CHECK_THROWS_AS(generate_identity_specs(7, 0), std::invalid_argument);
}

TEST_CASE("render_person is deterministic and colors the torso by the shirt") {
  IdentitySpec s = generate_identity_specs(3, 1)[0];
  s.shirt_color = {1.0, 0.0, 0.0};
  Tensor a = render_person(s, 0, 11), b = render_person(s, 0, 11);
  CHECK(max_abs_diff(a, b) == 0.0);
  for (double v : a.values()) CHECK((v >= 0.0 && v <= 1.0));

  PersonLayout l = layout_person(s, 11);
  CHECK(region_mean(a, 0, l.torso) > region_mean(a, 1, l.torso));

  // Another camera: torso pixels identical, background different.
  Tensor c = render_person(s, 1, 11);
  double torso_diff = 0.0, bg_diff = 0.0;
  int bg = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 32; ++x)
      for (int k = 0; k < 3; ++k) {
        const std::size_t i = (static_cast<std::size_t>(k) * 64 + y) * 32 + x;
        if (l.torso.contains(y, x)) torso_diff = std::max(torso_diff, std::abs(a[i] - c[i]));
        if (!l.in_foreground(y, x)) {
          bg_diff += std::abs(a[i] - c[i]);
          ++bg;
        }
      }
  CHECK(torso_diff == 0.0);
  CHECK(bg_diff / bg > 0.01);
}

TEST_CASE("pose jitter stays within three pixels and ten percent width") {
  IdentitySpec s = generate_identity_specs(5, 1)[0];
  s.body_scale = 1.0;
  PersonLayout ref = layout_person(s, 0);
  const double ref_w = ref.torso.right - ref.torso.left;
  const double ref_cx = (ref.torso.right + ref.torso.left) / 2.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    PersonLayout l = layout_person(s, seed);
    const double w = l.torso.right - l.torso.left;
    CHECK(std::abs(w - 14.0) <= 1.4 + 1.0);  // +-10% plus rounding
    CHECK(std::abs((l.torso.right + l.torso.left) / 2.0 - ref_cx) <= 6.0 + 1.0);
    CHECK(std::abs(l.head_cx - 16.0) <= 3.0);
  }
  CHECK(ref_w > 0);
}

TEST_CASE("build_dataset counts and split invariants") {
  DatasetParams p;
  p.seed = 1;
  p.num_train_ids = 20;
  p.num_test_ids = 10;
  p.imgs_per_id = 12;
  p.num_cameras = 4;
  DatasetSplits s = build_dataset(p);
  CHECK(s.train.size() == 240);
  CHECK(s.query.size() == 20);
  CHECK(s.gallery.size() == 100);
  CHECK(s.num_train_ids == 20);
  s.train.validate();
  s.query.validate();
  s.gallery.validate();
  CHECK(s.train.pixels.shape() == Shape{240, 3, 64, 32});

  std::set<int> train(s.train.person_ids.begin(), s.train.person_ids.end());
  for (int id : s.query.person_ids) CHECK(train.count(id) == 0);
  for (int id : s.gallery.person_ids) CHECK(train.count(id) == 0);
  for (int q = 0; q < s.query.size(); ++q) {
    int cross = 0;
    for (int g = 0; g < s.gallery.size(); ++g)
      cross += s.gallery.person_ids[g] == s.query.person_ids[q] && s.gallery.camera_ids[g] != s.query.camera_ids[q];
    CHECK(cross >= 1);
  }

  DatasetSplits again = build_dataset(p);
  CHECK(max_abs_diff(again.train.pixels, s.train.pixels) == 0.0);
  CHECK(max_abs_diff(again.gallery.pixels, s.gallery.pixels) == 0.0);

  p.num_cameras = 1;
  CHECK_THROWS_AS(build_dataset(p), std::invalid_argument);
  p.num_cameras = 2;
  p.imgs_per_id = 3;
  CHECK_THROWS_AS(build_dataset(p), std::invalid_argument);
}

TEST_CASE("torso color varies less within an identity than between identities") {
  DatasetParams p;
  p.seed = 9;
  p.num_train_ids = 12;
  p.num_test_ids = 2;
  p.imgs_per_id = 6;
  p.num_cameras = 3;
  auto specs = generate_identity_specs(p.seed, p.num_train_ids);
  std::vector<Rgb> means;
  std::vector<int> ids;
  for (const auto& spec : specs)
    for (int k = 0; k < p.imgs_per_id; ++k) {
      const auto ps = pose_seed_for(p.seed, spec.id, k);
      Tensor img = render_person(spec, (spec.id + k) % p.num_cameras, ps);
      PersonLayout l = layout_person(spec, ps);
      means.push_back({region_mean(img, 0, l.torso), region_mean(img, 1, l.torso), region_mean(img, 2, l.torso)});
      ids.push_back(spec.id);
    }
  double within = 0.0, between = 0.0;
  int nw = 0, nb = 0;
  for (std::size_t i = 0; i < means.size(); ++i)
    for (std::size_t j = i + 1; j < means.size(); ++j) {
      double d = 0.0;
      for (int k = 0; k < 3; ++k) d += (means[i][k] - means[j][k]) * (means[i][k] - means[j][k]);
      if (ids[i] == ids[j]) {
        within += d;
        ++nw;
      } else {
        between += d;
        ++nb;
      }
    }
  CHECK(within / nw < 0.1 * between / nb);
}

TEST_CASE("market filenames parse") {
  ParsedName n;
  REQUIRE(parse_market_filename("0042_c3_0001.png", n));
  CHECK(n.person_id == 42);
  CHECK(n.camera_id == 3);
  CHECK(n.sequence == 1);
  REQUIRE(parse_market_filename("0002_c1s1_000451_03.jpg", n));
  CHECK(n.person_id == 2);
  CHECK(n.camera_id == 1);
  CHECK_FALSE(parse_market_filename("-1_c1s1_000451_03.jpg", n));
  CHECK_FALSE(parse_market_filename("readme.txt", n));
}

TEST_CASE("dataset layout round-trips labels and reports bad files") {
  DatasetParams p;
  p.seed = 2;
  p.num_train_ids = 4;
  p.num_test_ids = 3;
  p.imgs_per_id = 4;
  p.num_cameras = 2;
  DatasetSplits s = build_dataset(p);
  fs::path root = temp_dir("layout");
  write_market_layout(s, root.string(), p, "abc123");
  std::ofstream(root / "train" / "notes.txt") << "x";

  LoadResult r = load_market_layout(root.string());
  CHECK(r.errors.size() == 1);
  CHECK(r.splits.num_train_ids == 4);
  auto sorted_labels = [](const ImageBatch& b) {
    std::multiset<std::pair<int, int>> m;
    for (int i = 0; i < b.size(); ++i) m.insert({b.person_ids[i], b.camera_ids[i]});
    return m;
  };
  CHECK(sorted_labels(r.splits.train) == sorted_labels(s.train));
  CHECK(sorted_labels(r.splits.query) == sorted_labels(s.query));
  CHECK(sorted_labels(r.splits.gallery) == sorted_labels(s.gallery));
  CHECK(max_abs_diff(r.splits.train.pixels, s.train.select([&] {
          // files are listed in label order, which matches generation order here
          std::vector<int> idx(static_cast<std::size_t>(s.train.size()));
          for (int i = 0; i < s.train.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
          std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
            return std::pair{s.train.person_ids[a], s.train.camera_ids[a]} <
                   std::pair{s.train.person_ids[b], s.train.camera_ids[b]};
          });
          return idx;
        }()).pixels) <= 0.5 / 255.0 + 1e-12);

  auto manifest = nlohmann::json::parse(std::ifstream(root / "dataset.json"));
  CHECK(manifest["seed"] == 2);
  CHECK(manifest["splits"]["query"].size() == 6);
  CHECK(read_png_text((root / "query" / "0004_c0_0001.png").string()).at("config_hash") == "abc123");

  for (const auto& e : fs::directory_iterator(root / "gallery")) fs::remove(e.path());
  CHECK_THROWS_WITH(load_market_layout(root.string()), doctest::Contains("empty split"));
  fs::remove_all(root);
}
