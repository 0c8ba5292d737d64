#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "lcye/checkpoint.hpp"
#include "lcye/experiment.hpp"
#include "lcye/image_io.hpp"

using namespace lcye;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(const std::string& out) {
  json j = {{"seed", 4},
            {"out_dir", out},
            {"dataset", {{"num_train_ids", 6}, {"num_test_ids", 3}, {"imgs_per_id", 8}}},
            {"victim", {{"epochs", 2}, {"batch_size", 16}}},
            {"mimic", {{"epochs", 1}, {"batch_size", 16}}},
            {"attack", {{"epochs", 1}, {"batch_size", 16}, {"lr", 0.001}}},
            {"target", {{"num_targets", 4}, {"gamma", 2}}},
            {"pgd", {{"steps", 1}}}};
  ExperimentConfig c = ExperimentConfig::from_json(j);
  c.resolve();
  c.validate();
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("lcye_exp_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << bytes;
}

struct Trained {
  ExperimentConfig cfg;
  DatasetSplits splits;
  VictimModel victim;
  MimicState mimic;
  AttackModels models;
};

Trained& trained() {
  static Trained t = [] {
    Trained x;
    x.cfg = tiny_config(fresh_dir("trained").string());
    x.splits = make_splits(x.cfg);
    x.victim = fit_victim(x.cfg, x.splits);
    x.mimic = fit_mimic(x.cfg, x.victim, x.splits, MimicMode::baseline);
    x.models = fit_attack(x.cfg, x.victim, x.victim, x.mimic, x.splits);
    return x;
  }();
  return t;
}

}  // namespace

TEST_CASE("checkpoint save, load, save is byte-identical") {
  Trained& t = trained();
  const fs::path d = fresh_dir("ckpt");
  const std::string h = config_hash(t.cfg);

  save_victim((d / "v1.ckpt").string(), t.victim, 64, 32, h);
  VictimModel v = load_victim((d / "v1.ckpt").string());
  save_victim((d / "v2.ckpt").string(), v, 64, 32, h);
  CHECK(slurp(d / "v1.ckpt") == slurp(d / "v2.ckpt"));
  // float32 storage: loaded values are the rounded originals.
  auto a = t.victim.all_params(), b = v.all_params();
  REQUIRE(a.params.size() == b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    const Tensor& x = a.params[i].var->value();
    const Tensor& y = b.params[i].var->value();
    for (std::size_t k = 0; k < x.values().size(); ++k)
      REQUIRE(y.values()[k] == static_cast<double>(static_cast<float>(x.values()[k])));
  }

  save_mimic((d / "m1.ckpt").string(), t.mimic, h);
  MimicState m = load_mimic((d / "m1.ckpt").string(), t.victim, t.cfg.mimic);
  save_mimic((d / "m2.ckpt").string(), m, h);
  CHECK(slurp(d / "m1.ckpt") == slurp(d / "m2.ckpt"));

  save_attack((d / "a1.ckpt").string(), t.models, h);
  AttackModels am = load_attack((d / "a1.ckpt").string(), m);
  save_attack((d / "a2.ckpt").string(), am, h);
  CHECK(slurp(d / "a1.ckpt") == slurp(d / "a2.ckpt"));

  CheckpointHeader hd = read_checkpoint_header((d / "a1.ckpt").string());
  CHECK(hd.component == "attack");
  CHECK(hd.config_hash == h);
  CHECK(hd.namespaces == std::vector<std::string>{"attacker", "discriminator"});
}

TEST_CASE("checkpoint rejects bad files") {
  Trained& t = trained();
  const fs::path d = fresh_dir("ckpt_bad");
  const std::string good = (d / "v.ckpt").string();
  save_victim(good, t.victim, 64, 32, "h");
  const std::string bytes = slurp(good);

  auto error_of = [](const std::function<void()>& f) -> std::string {
    try {
      f();
    } catch (const std::exception& e) {
      return e.what();
    }
    return {};
  };

  const std::string missing = (d / "nope.ckpt").string();
  const std::string e = error_of([&] { load_victim(missing); });
  CHECK(e.find(missing) != std::string::npos);

  std::string wrong_version = bytes;
  wrong_version[8] = static_cast<char>(kCheckpointVersion + 1);
  spit(d / "ver.ckpt", wrong_version);
  CHECK(error_of([&] { load_victim((d / "ver.ckpt").string()); }).find("version") != std::string::npos);

  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  spit(d / "magic.ckpt", wrong_magic);
  CHECK_THROWS_AS(load_victim((d / "magic.ckpt").string()), std::runtime_error);

  spit(d / "short.ckpt", bytes.substr(0, bytes.size() - 4));
  CHECK_THROWS_AS(load_victim((d / "short.ckpt").string()), std::runtime_error);
  spit(d / "long.ckpt", bytes + "xxxx");
  CHECK_THROWS_AS(load_victim((d / "long.ckpt").string()), std::runtime_error);

  // A victim file is not an attacker file.
  CHECK(error_of([&] { load_checkpoint(good, "attack", {}); }).find("victim") != std::string::npos);
}

TEST_CASE("CSV header is stable") {
  // Golden header; changing it breaks downstream readers.
  CHECK(metrics::csv_header() ==
        "schema_version,experiment,cell,rank1,rank5,rank10,map,target_consistency,mean_ssim,mean_ms_ssim,"
        "mean_linf,mean_l2,config_hash");
}

TEST_CASE("epsilon sweep writes one CSV row per epsilon") {
  Trained& t = trained();
  ExperimentConfig cfg = t.cfg;
  cfg.ablate.ratios = {};
  cfg.ablate.relaxed_ratios = {};
  cfg.ablate.pgd = false;
  REQUIRE(cfg.ablate.eps == std::vector<int>{3, 5, 10, 16, 20, 40});
  auto rows = run_ablation(cfg, t.victim, t.victim, t.mimic, t.models, t.splits);
  const fs::path d = fresh_dir("csv");
  const std::string h = config_hash(cfg);
  write_csv((d / "a.csv").string(), rows, h);
  auto table = read_csv((d / "a.csv").string());
  REQUIRE(table.size() == 1 + rows.size());
  CHECK(table[0] == metrics::csv_columns());
  int eps_rows = 0;
  double last_linf = 0.0;
  for (std::size_t i = 1; i < table.size(); ++i) {
    CHECK(table[i].size() == table[0].size());
    CHECK(table[i].back() == h);
    if (table[i][1] != "eps") continue;
    ++eps_rows;
    const double linf = std::stod(table[i][10]);
    CHECK(linf >= last_linf);
    last_linf = linf;
  }
  CHECK(eps_rows == 6);
  CHECK(last_linf <= 40.0 / 255.0 + 1e-9);
}

TEST_CASE("attack grid layout") {
  Trained& t = trained();
  ImageBatch q = t.splits.query.range(0, 3);
  AttackOutput out = run_attack(t.models, t.mimic, q.pixels, t.cfg.attack.attack);
  Tensor g = attack_grid(q.pixels, out, 2);
  CHECK(g.shape() == std::vector<int>{3, 2 * 64, 4 * 32});
  // Column 0 is the clean image, column 3 the adversary.
  CHECK(g.data()[5 * 128 + 7] == q.pixels.at(0, 0, 5, 7));
  CHECK(g.data()[(2 * 128 + 64 + 3) * 128 + 96 + 1] == out.adversary.at(1, 2, 3, 1));
  CHECK_THROWS_AS(attack_grid(q.pixels, out, 0), std::invalid_argument);
}

TEST_CASE("svg plot") {
  std::string s = svg_line_plot("t", "x", "y", {{"a", {{1.0, 10.0}, {2.0, 20.0}}}, {"b", {{1.0, 5.0}}}}, true);
  CHECK(s.rfind("<svg", 0) == 0);
  CHECK(s.find("</svg>") != std::string::npos);
  CHECK(s.find("polyline") != std::string::npos);
}

TEST_CASE("command pipeline and artifact verification") {
  const fs::path d = fresh_dir("cmds");
  ExperimentConfig cfg = tiny_config(d.string());
  cfg.ablate.eps = {3, 16};
  cfg.ablate.ratios = {1.0};
  cfg.ablate.relaxed_ratios = {};
  CommandOptions opt;
  CHECK(cmd_gen_data(cfg) == 0);
  CHECK(fs::exists(d / "data" / "dataset.json"));
  CHECK_THROWS_WITH_AS(cmd_train_mimic(cfg, opt), doctest::Contains("victim checkpoint not found"),
                       std::runtime_error);
  CHECK(cmd_train_victim(cfg, opt) == 0);
  CHECK(cmd_train_mimic(cfg, opt) == 0);
  CHECK(cmd_train_attack(cfg, opt) == 0);
  CHECK(cmd_attack(cfg, opt) == 0);
  CHECK(cmd_eval(cfg, opt) == 0);
  CHECK(cmd_ablate(cfg, opt) == 0);
  CHECK(cmd_report(cfg) == 0);
  for (const char* f : {"report.json", "metrics.csv", "ablation.csv", "history.jsonl", "attack_grid.png",
                        "summary.md", "rank1_vs_eps.svg"})
    CHECK_MESSAGE(fs::exists(d / f), f);

  json report = json::parse(slurp(d / "report.json"));
  CHECK(report.at("config_hash") == config_hash(cfg));
  CHECK(read_png_text((d / "attack_grid.png").string()).at("config_hash") == config_hash(cfg));
  CHECK(verify_artifacts(d.string()).empty());

  // A history line from a different config is caught.
  { std::ofstream(d / "history.jsonl", std::ios::app) << R"({"stage":"x","config_hash":"0000000000000000"})" << "\n"; }
  auto problems = verify_artifacts(d.string());
  REQUIRE(problems.size() == 1);
  CHECK(problems[0].find("history.jsonl") != std::string::npos);

  // So is an edited config.
  report["config"]["attack"]["alpha2"] = 123.0;
  spit(d / "report.json", report.dump());
  CHECK(verify_artifacts(d.string()).size() > 1);
}
