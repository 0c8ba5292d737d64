#include "lcye/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "lcye/checkpoint.hpp"
#include "lcye/image_io.hpp"

namespace lcye {

namespace fs = std::filesystem;
using nlohmann::json;

HistoryLog::HistoryLog(const std::string& path, std::string config_hash) : hash_(std::move(config_hash)) {
  out_.open(path, std::ios::app);
  if (!out_) throw std::runtime_error("cannot open history file " + path);
}

void HistoryLog::write(const std::string& stage, json record) {
  if (!out_.is_open()) return;
  record["stage"] = stage;
  record["config_hash"] = hash_;
  out_ << record.dump() << "\n";
  out_.flush();
}

// ---------------------------------------------------------------- training

DatasetSplits make_splits(const ExperimentConfig& cfg) {
  if (cfg.dataset.source == "market") {
    LoadResult r = load_market_layout(cfg.dataset.root, cfg.dataset.params.height, cfg.dataset.params.width);
    for (const auto& e : r.errors) std::cerr << "skipped: " << e << "\n";
    return std::move(r.splits);
  }
  return build_dataset(cfg.dataset.params);
}

DatasetSplits make_knowledge_splits(const ExperimentConfig& cfg, const DatasetSplits& victim_splits) {
  if (!cfg.knowledge.cross_dataset) return victim_splits;
  DatasetParams p = cfg.dataset.params;
  p.seed = Rng(cfg.seed).substream("knowledge.dataset").seed();
  return build_dataset(p);
}

VictimModel fit_victim(const ExperimentConfig& cfg, const DatasetSplits& splits, HistoryLog* log) {
  VictimModel m = VictimModel::build(cfg.victim_arch, splits.num_train_ids, cfg.victim.seed);
  auto hist = train_victim(m, splits, cfg.victim);
  if (log)
    for (const auto& r : hist) log->write("victim", r.to_json());
  return m;
}

VictimModel fit_knowledge(const ExperimentConfig& cfg, const DatasetSplits& splits, HistoryLog* log) {
  TrainHParams hp = cfg.victim;
  hp.seed = Rng(cfg.seed).substream("knowledge").seed();
  VictimModel m = VictimModel::build(cfg.knowledge.arch, splits.num_train_ids, hp.seed);
  auto hist = train_victim(m, splits, hp);
  if (log)
    for (const auto& r : hist) log->write("knowledge", r.to_json());
  return m;
}

MimicState fit_mimic(const ExperimentConfig& cfg, VictimModel& knowledge, const DatasetSplits& splits, MimicMode mode,
                     HistoryLog* log) {
  MimicState s = init_mimic(mode, knowledge, splits.num_train_ids, cfg.mimic);
  // Online mimicking trains alongside the attacker, not up front.
  if (mode == MimicMode::online) return s;
  auto hist = train_mimic(s, splits);
  if (log)
    for (const auto& r : hist) log->write("mimic", r.to_json());
  return s;
}

AttackModels fit_attack(const ExperimentConfig& cfg, VictimModel& victim, VictimModel& knowledge, MimicState& mimic,
                        const DatasetSplits& splits, HistoryLog* log, const AttackEpochCallback& extra) {
  AttackModels models =
      init_attack_models(mimic, cfg.attack.seed, splits.train.height(), splits.train.width());
  train_attack(victim, knowledge, mimic, models, splits, cfg.attack, [&](const AttackEpochRecord& r) {
    if (log) log->write("attack", r.to_json());
    if (extra) extra(r);
  });
  return models;
}

std::vector<int> query_targets(const ExperimentConfig& cfg, const DatasetSplits& splits, int num_ids) {
  if (cfg.target_id >= 0) return std::vector<int>(static_cast<std::size_t>(splits.query.size()), cfg.target_id);
  Rng rng = Rng(cfg.target.seed).substream("query.targets");
  return draw_targets(splits.query.person_ids, num_ids, rng);
}

metrics::EvalReport attack_report(const ExperimentConfig& cfg, VictimModel& victim, AttackModels& models,
                                  MimicState& mimic, const DatasetSplits& splits, const AttackConfig& attack) {
  std::vector<int> targets;
  const bool targeted = cfg.attack.mode == AttackMode::targeted;
  if (targeted) targets = query_targets(cfg, splits, mimic.memory.rows());
  AttackOutput out = run_attack(models, mimic, splits.query.pixels, attack, targeted ? &targets : nullptr);
  metrics::EvalReport r = evaluate_attack(victim, splits, out.adversary);
  r.metadata["epsilon"] = attack.epsilon * 255.0;
  r.metadata["pixel_ratio"] = attack.pixel_ratio;
  r.metadata["relaxed"] = attack.relaxed;
  r.metadata["mode"] = to_string(cfg.attack.mode);
  return r;
}

metrics::EvalReport pgd_report(const ExperimentConfig& cfg, VictimModel& victim, const DatasetSplits& splits) {
  const std::vector<int> labels = argmax_rows(logits(victim, splits.query));
  Tensor adv = pgd_baseline(victim, splits.query.pixels, labels, cfg.pgd);
  metrics::EvalReport r = evaluate_attack(victim, splits, adv);
  r.metadata["pgd_steps"] = cfg.pgd.steps;
  r.metadata["epsilon"] = cfg.pgd.epsilon * 255.0;
  return r;
}

// ---------------------------------------------------------------- checkpoints

void save_victim(const std::string& path, VictimModel& m, int height, int width, const std::string& hash) {
  json meta = {{"arch", to_string(m.arch())}, {"num_classes", m.num_classes()}, {"C", m.channels()},
               {"H", height},                 {"W", width}};
  save_checkpoint(path, "victim", {{"victim", m.all_params()}}, meta, hash);
}

VictimModel load_victim(const std::string& path) {
  CheckpointHeader h = read_checkpoint_header(path);
  VictimModel m = VictimModel::build(parse_arch(h.meta.at("arch").get<std::string>()),
                                     h.meta.at("num_classes").get<int>(), 0);
  load_checkpoint(path, "victim", {{"victim", m.all_params()}});
  return m;
}

namespace {
NamedLists mimic_lists(MimicState& s) {
  NamedLists l = {{"memory", s.memory_params()}, {"head", s.head_params()}};
  if (!freezes_subnet(s.mode)) l.emplace_back("source", s.source.all_params());
  return l;
}
}  // namespace

void save_mimic(const std::string& path, MimicState& s, const std::string& hash) {
  json meta = {{"mode", to_string(s.mode)},
               {"N", s.memory.rows()},
               {"C", s.memory.channels()},
               {"source_arch", to_string(s.source.arch())}};
  save_checkpoint(path, "mimic", mimic_lists(s), meta, hash);
}

MimicState load_mimic(const std::string& path, VictimModel& knowledge, const MimicHParams& hp) {
  CheckpointHeader h = read_checkpoint_header(path);
  if (h.meta.at("source_arch").get<std::string>() != to_string(knowledge.arch())) {
    throw std::runtime_error(path + ": memory was built on " + h.meta.at("source_arch").get<std::string>() +
                             " features, knowledge source is " + to_string(knowledge.arch()));
  }
  MimicState s = init_mimic(parse_mimic_mode(h.meta.at("mode").get<std::string>()), knowledge,
                            h.meta.at("N").get<int>(), hp);
  load_checkpoint(path, "mimic", mimic_lists(s));
  return s;
}

void save_attack(const std::string& path, AttackModels& m, const std::string& hash) {
  json meta = {{"N", m.discriminator.num_ids()}, {"H", m.attacker.generator.height()},
               {"W", m.attacker.generator.width()}};
  save_checkpoint(path, "attack", {{"attacker", m.attacker.params()}, {"discriminator", m.discriminator.params()}},
                  meta, hash);
}

AttackModels load_attack(const std::string& path, MimicState& mimic) {
  CheckpointHeader h = read_checkpoint_header(path);
  if (h.meta.at("N").get<int>() != mimic.memory.rows()) {
    throw std::runtime_error(path + ": attacker expects " + h.meta.at("N").dump() + " memory rows, memory has " +
                             std::to_string(mimic.memory.rows()));
  }
  AttackModels m = init_attack_models(mimic, 0, h.meta.at("H").get<int>(), h.meta.at("W").get<int>());
  load_checkpoint(path, "attack", {{"attacker", m.attacker.params()}, {"discriminator", m.discriminator.params()}});
  return m;
}

// ---------------------------------------------------------------- artifacts

Tensor attack_grid(const Tensor& clean, const AttackOutput& out, int count) {
  const int n = std::min(count, clean.dim(0));
  if (n < 1) throw std::invalid_argument("attack_grid: no images");
  const int H = clean.dim(2), W = clean.dim(3);
  const int GW = 4 * W;
  Tensor grid({3, n * H, GW}, 1.0);
  double* g = grid.data();
  // `img` is 3 x H x W.
  auto paste = [&](const Tensor& img, int row, int col) {
    const double* src = img.data();
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          g[(static_cast<std::size_t>(c) * n * H + row * H + y) * GW + col * W + x] = src[(c * H + y) * W + x];
  };
  auto image = [&](const Tensor& batch, int i) {
    Tensor t({3, H, W});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) t.data()[(c * H + y) * W + x] = batch.at(i, c, y, x);
    return t;
  };
  for (int i = 0; i < n; ++i) {
    Tensor noise({H, W}, 0.0), mask({H, W});
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        for (int c = 0; c < 3; ++c) noise.at(y, x) += out.noise.at(i, c, y, x) / 3.0;
        mask.at(y, x) = out.mask.at(i, 0, y, x);
      }
    paste(image(clean, i), i, 0);
    paste(heatmap(noise, -1.0, 1.0), i, 1);
    paste(heatmap(mask, 0.0, 1.0), i, 2);
    paste(image(out.adversary, i), i, 3);
  }
  return grid;
}

namespace {

std::string fmt(double v, int digits = 4) {
  std::ostringstream o;
  o.precision(digits);
  o << v;
  return o.str();
}

std::string cell_name(const std::string& key, double v) { return key + "=" + fmt(v, 6); }

}  // namespace

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, VictimModel& victim, VictimModel& knowledge,
                                      MimicState& mimic, AttackModels& models, const DatasetSplits& splits) {
  std::vector<AblationRow> rows;
  const std::string hash = config_hash(cfg);
  auto add = [&](const std::string& exp, const std::string& cell, metrics::EvalReport r) {
    r.metadata["config_hash"] = hash;
    rows.push_back({exp, cell, std::move(r)});
  };
  // One attack at `attack`, reusing `models` or training a fresh attacker.
  auto cell = [&](AttackConfig attack) {
    if (!cfg.ablate.retrain) return attack_report(cfg, victim, models, mimic, splits, attack);
    ExperimentConfig c = cfg;
    c.attack.attack = attack;
    AttackModels fresh = fit_attack(c, victim, knowledge, mimic, splits);
    return attack_report(c, victim, fresh, mimic, splits, attack);
  };

  add("clean", "clean", evaluate_clean(victim, splits));
  for (int e : cfg.ablate.eps) {
    AttackConfig a = cfg.attack.attack;
    a.epsilon = e / 255.0;
    add("eps", "eps=" + std::to_string(e), cell(a));
  }
  for (double r : cfg.ablate.ratios) {
    AttackConfig a = cfg.attack.attack;
    a.pixel_ratio = r;
    a.relaxed = false;
    add("ratio", cell_name("ratio", r), cell(a));
  }
  for (double r : cfg.ablate.relaxed_ratios) {
    AttackConfig a = cfg.attack.attack;
    a.pixel_ratio = r;
    a.relaxed = true;
    add("relaxed_ratio", cell_name("relaxed_ratio", r), cell(a));
  }
  for (MimicMode mode : cfg.ablate.mimic_modes) {
    ExperimentConfig c = cfg;
    c.mimic_mode = mode;
    MimicState s = fit_mimic(c, knowledge, splits, mode);
    AttackModels fresh = fit_attack(c, victim, knowledge, s, splits);
    auto r = attack_report(c, victim, fresh, s, splits, c.attack.attack);
    r.metadata["memory_checksum"] = std::to_string(nn::checksum(s.memory_params()));
    add("mimic", "mimic=" + to_string(mode), r);
  }
  if (cfg.ablate.pgd) add("pgd", "pgd_steps=" + std::to_string(cfg.pgd.steps), pgd_report(cfg, victim, splits));
  return rows;
}

void write_csv(const std::string& path, const std::vector<AblationRow>& rows, const std::string& hash) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << metrics::csv_header() << "\n";
  for (auto r : rows) {
    r.report.metadata["config_hash"] = hash;
    out << metrics::csv_row(r.experiment, r.cell, r.report) << "\n";
  }
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    rows.push_back(std::move(fields));
  }
  return rows;
}

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& series,
                          bool log_x) {
  constexpr double kW = 480, kH = 320, kL = 60, kR = 120, kT = 40, kB = 50;
  double x0 = 1e300, x1 = -1e300, y0 = 0.0, y1 = 100.0;
  auto tx = [&](double x) { return log_x ? std::log2(x) : x; };
  for (const auto& [_, pts] : series)
    for (const auto& [x, y] : pts) {
      x0 = std::min(x0, tx(x));
      x1 = std::max(x1, tx(x));
      y1 = std::max(y1, y);
    }
  if (!(x1 > x0)) {
    x0 -= 1.0;
    x1 += 1.0;
  }
  auto px = [&](double x) { return kL + (tx(x) - x0) / (x1 - x0) * (kW - kL - kR); };
  auto py = [&](double y) { return kH - kB - (y - y0) / (y1 - y0) * (kH - kT - kB); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  o << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\"" << kH - kB
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = y0 + (y1 - y0) * i / 4.0;
    o << "<text x=\"" << kL - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(y, 3)
      << "</text>\n";
  }
  std::set<double> ticks;
  for (const auto& [_, pts] : series)
    for (const auto& p : pts) ticks.insert(p.first);
  for (double x : ticks) {
    o << "<text x=\"" << px(x) << "\" y=\"" << kH - kB + 14 << "\" text-anchor=\"middle\" font-size=\"10\">"
      << fmt(x, 4) << "</text>\n";
  }
  o << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
    << x_label << "</text>\n";
  o << "<text x=\"16\" y=\"" << (kT + kH - kB) / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
    << (kT + kH - kB) / 2 << ")\">" << y_label << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % 5];
    auto pts = series[s].second;
    std::sort(pts.begin(), pts.end());
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : pts) o << px(x) << "," << py(y) << " ";
    o << "\"/>\n";
    for (const auto& [x, y] : pts) o << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    o << "<text x=\"" << kW - kR + 10 << "\" y=\"" << kT + 16 * (s + 1) << "\" font-size=\"11\" fill=\"" << color
      << "\">" << series[s].first << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

// ---------------------------------------------------------------- commands

namespace {

struct Paths {
  fs::path dir;
  std::string victim, knowledge, mimic, attacker;
};

Paths paths(const ExperimentConfig& cfg, const CommandOptions& opt) {
  Paths p;
  p.dir = cfg.out_dir;
  fs::create_directories(p.dir);
  auto pick = [&](const std::string& given, const char* name) {
    return given.empty() ? (p.dir / name).string() : given;
  };
  p.victim = pick(opt.victim, "victim.ckpt");
  p.knowledge = pick(opt.knowledge, "knowledge.ckpt");
  p.mimic = pick(opt.mimic, "mimic.ckpt");
  p.attacker = pick(opt.attacker, "attack.ckpt");
  return p;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw std::runtime_error(std::string(what) + " checkpoint not found: " + path);
}

void write_report(const ExperimentConfig& cfg, const std::string& command, json results) {
  json j = {{"schema_version", metrics::kReportSchemaVersion},
            {"command", command},
            {"config_hash", config_hash(cfg)},
            {"config", cfg.to_json()},
            {"results", std::move(results)}};
  std::ofstream((fs::path(cfg.out_dir) / "report.json").string(), std::ios::trunc) << j.dump(2) << "\n";
}

json tagged(metrics::EvalReport r, const std::string& hash) {
  r.metadata["config_hash"] = hash;
  return r.to_json();
}

// The source the memory mimics: the victim in white-box mode, the separately
// trained knowledge model in black-box mode.
VictimModel load_knowledge(const ExperimentConfig& cfg, const Paths& p, VictimModel& victim) {
  if (cfg.attack.access == Access::white_box) return victim.clone();
  require_file(p.knowledge, "knowledge");
  return load_victim(p.knowledge);
}

struct Loaded {
  DatasetSplits splits;
  VictimModel victim;
  VictimModel knowledge;
  MimicState mimic;
};

Loaded load_for_attack(const ExperimentConfig& cfg, const Paths& p) {
  require_file(p.victim, "victim");
  require_file(p.mimic, "mimic");
  Loaded l;
  l.splits = make_splits(cfg);
  l.victim = load_victim(p.victim);
  l.knowledge = load_knowledge(cfg, p, l.victim);
  l.mimic = load_mimic(p.mimic, l.knowledge, cfg.mimic);
  return l;
}

}  // namespace

int cmd_gen_data(const ExperimentConfig& cfg) {
  const std::string hash = config_hash(cfg);
  const fs::path dir = fs::path(cfg.out_dir) / "data";
  fs::create_directories(dir);
  DatasetSplits s = build_dataset(cfg.dataset.params);
  check_split_invariants(s);
  write_market_layout(s, dir.string(), cfg.dataset.params, hash);
  write_report(cfg, "gen-data",
               {{"data_dir", dir.string()},
                {"train", s.train.size()},
                {"query", s.query.size()},
                {"gallery", s.gallery.size()}});
  std::cout << "wrote " << s.train.size() + s.query.size() + s.gallery.size() << " images to " << dir.string() << "\n";
  return 0;
}

int cmd_train_victim(const ExperimentConfig& cfg, const CommandOptions& opt) {
  const Paths p = paths(cfg, opt);
  const std::string hash = config_hash(cfg);
  HistoryLog log((p.dir / "history.jsonl").string(), hash);
  DatasetSplits s = make_splits(cfg);
  VictimModel v = fit_victim(cfg, s, &log);
  save_victim(p.victim, v, s.train.height(), s.train.width(), hash);
  json results = {{"victim_checkpoint", p.victim}, {"clean", tagged(evaluate_clean(v, s), hash)}};
  if (cfg.attack.access == Access::black_box) {
    DatasetSplits ks = make_knowledge_splits(cfg, s);
    VictimModel k = fit_knowledge(cfg, ks, &log);
    save_victim(p.knowledge, k, ks.train.height(), ks.train.width(), hash);
    results["knowledge_checkpoint"] = p.knowledge;
  }
  write_report(cfg, "train-victim", results);
  std::cout << "victim clean " << results["clean"].dump() << "\n";
  return 0;
}

int cmd_train_mimic(const ExperimentConfig& cfg, const CommandOptions& opt) {
  const Paths p = paths(cfg, opt);
  const std::string hash = config_hash(cfg);
  require_file(p.victim, "victim");
  HistoryLog log((p.dir / "history.jsonl").string(), hash);
  DatasetSplits s = make_splits(cfg);
  VictimModel victim = load_victim(p.victim);
  VictimModel knowledge = load_knowledge(cfg, p, victim);
  DatasetSplits ks = make_knowledge_splits(cfg, s);
  MimicState m = fit_mimic(cfg, knowledge, ks, cfg.mimic_mode, &log);
  save_mimic(p.mimic, m, hash);
  write_report(cfg, "train-mimic",
               {{"mimic_checkpoint", p.mimic},
                {"mode", to_string(m.mode)},
                {"train_accuracy", mimic_accuracy(m, ks.train)},
                {"memory_checksum", std::to_string(nn::checksum(m.memory_params()))}});
  return 0;
}

int cmd_train_attack(const ExperimentConfig& cfg, const CommandOptions& opt) {
  const Paths p = paths(cfg, opt);
  const std::string hash = config_hash(cfg);
  Loaded l = load_for_attack(cfg, p);
  HistoryLog log((p.dir / "history.jsonl").string(), hash);
  AttackModels models = fit_attack(cfg, l.victim, l.knowledge, l.mimic, l.splits, &log);
  save_attack(p.attacker, models, hash);
  // Online mimicking changed the memory during training.
  if (!freezes_subnet(l.mimic.mode)) save_mimic(p.mimic, l.mimic, hash);
  auto r = attack_report(cfg, l.victim, models, l.mimic, l.splits, cfg.attack.attack);
  write_report(cfg, "train-attack",
               {{"attack_checkpoint", p.attacker},
                {"clean", tagged(evaluate_clean(l.victim, l.splits), hash)},
                {"attacked", tagged(r, hash)}});
  std::cout << "attacked rank1 " << r.rank1 << " mAP " << r.map << "\n";
  return 0;
}

int cmd_attack(const ExperimentConfig& cfg, const CommandOptions& opt) {
  const Paths p = paths(cfg, opt);
  const std::string hash = config_hash(cfg);
  Loaded l = load_for_attack(cfg, p);
  require_file(p.attacker, "attack");
  AttackModels models = load_attack(p.attacker, l.mimic);
  std::vector<int> targets;
  const bool targeted = cfg.attack.mode == AttackMode::targeted;
  if (targeted) targets = query_targets(cfg, l.splits, l.mimic.memory.rows());
  AttackOutput out = run_attack(models, l.mimic, l.splits.query.pixels, cfg.attack.attack, targeted ? &targets : nullptr);
  const std::string grid = (p.dir / "attack_grid.png").string();
  write_png(grid, attack_grid(l.splits.query.pixels, out, 6), {{"config_hash", hash}, {"columns", "clean,noise,mask,adversary"}});
  metrics::EvalReport r = evaluate_attack(l.victim, l.splits, out.adversary);
  r.metadata["config_hash"] = hash;
  write_csv((p.dir / "metrics.csv").string(), {{"attack", "eps=" + std::to_string(cfg.eps), r}}, hash);
  json results = {{"grid", grid}, {"attacked", r.to_json()}, {"claimed_ids", out.claimed_ids}};
  if (targeted) results["targets"] = targets;
  write_report(cfg, "attack", results);
  std::cout << "attacked rank1 " << r.rank1 << " mAP " << r.map << " ms-ssim " << r.perceptibility.mean_ms_ssim << "\n";
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const CommandOptions& opt) {
  const Paths p = paths(cfg, opt);
  const std::string hash = config_hash(cfg);
  require_file(p.victim, "victim");
  DatasetSplits s = make_splits(cfg);
  VictimModel victim = load_victim(p.victim);
  std::vector<AblationRow> rows = {{"clean", "clean", evaluate_clean(victim, s)}};
  if (fs::exists(p.mimic) && fs::exists(p.attacker)) {
    VictimModel knowledge = load_knowledge(cfg, p, victim);
    MimicState m = load_mimic(p.mimic, knowledge, cfg.mimic);
    AttackModels models = load_attack(p.attacker, m);
    rows.push_back({"attack", "eps=" + std::to_string(cfg.eps), attack_report(cfg, victim, models, m, s, cfg.attack.attack)});
    if (cfg.attack.mode == AttackMode::untargeted) {
      TargetEvaluation te = evaluate_target_attack(victim, models, m, s, cfg.attack.attack, cfg.target);
      te.ranking.metadata["chance"] = te.chance;
      rows.push_back({"target", "gamma=" + std::to_string(cfg.target.gamma), te.ranking});
    }
  }
  rows.push_back({"pgd", "pgd_steps=" + std::to_string(cfg.pgd.steps), pgd_report(cfg, victim, s)});
  write_csv((p.dir / "metrics.csv").string(), rows, hash);
  json results = json::object();
  for (const auto& r : rows) results[r.experiment] = tagged(r.report, hash);
  write_report(cfg, "eval", results);
  for (const auto& r : rows) std::cout << r.experiment << " rank1 " << r.report.rank1 << " mAP " << r.report.map << "\n";
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, const CommandOptions& opt) {
  const Paths p = paths(cfg, opt);
  const std::string hash = config_hash(cfg);
  Loaded l = load_for_attack(cfg, p);
  require_file(p.attacker, "attack");
  AttackModels models = load_attack(p.attacker, l.mimic);
  auto rows = run_ablation(cfg, l.victim, l.knowledge, l.mimic, models, l.splits);
  write_csv((p.dir / "ablation.csv").string(), rows, hash);
  json results = json::array();
  for (const auto& r : rows) results.push_back({{"experiment", r.experiment}, {"cell", r.cell}, {"report", r.report.to_json()}});
  write_report(cfg, "ablate", {{"csv", (p.dir / "ablation.csv").string()}, {"rows", results}});
  std::cout << rows.size() << " ablation rows written\n";
  return 0;
}

int cmd_report(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.out_dir;
  const std::string hash = config_hash(cfg);
  std::vector<std::vector<std::string>> rows;
  for (const char* name : {"metrics.csv", "ablation.csv"}) {
    if (!fs::exists(dir / name)) continue;
    auto r = read_csv((dir / name).string());
    if (r.empty() || r.front() != metrics::csv_columns()) {
      throw std::runtime_error((dir / name).string() + " does not have the expected CSV header");
    }
    rows.insert(rows.end(), r.begin() + 1, r.end());
  }
  if (rows.empty()) throw std::runtime_error("no metrics.csv or ablation.csv in " + dir.string());

  const auto cols = metrics::csv_columns();
  auto col = [&](const char* name) {
    return static_cast<std::size_t>(std::find(cols.begin(), cols.end(), name) - cols.begin());
  };
  const std::size_t c_exp = col("experiment"), c_cell = col("cell"), c_r1 = col("rank1"), c_map = col("map"),
                    c_ms = col("mean_ms_ssim"), c_linf = col("mean_linf");
  auto value_of = [](const std::string& cell) { return std::stod(cell.substr(cell.find('=') + 1)); };

  std::ostringstream md;
  md << "# Attack summary\n\nconfig hash `" << hash << "`\n\n";
  md << "| experiment | cell | Rank-1 | mAP | MS-SSIM | Linf (x255) |\n|---|---|---|---|---|---|\n";
  std::map<std::string, std::vector<std::pair<double, double>>> r1_series, map_series;
  for (const auto& r : rows) {
    if (r.size() < cols.size()) continue;
    md << "| " << r[c_exp] << " | " << r[c_cell] << " | " << r[c_r1] << " | " << r[c_map] << " | " << r[c_ms] << " | "
       << fmt(std::stod(r[c_linf]) * 255.0, 4) << " |\n";
    const std::string& e = r[c_exp];
    if (e == "eps" || e == "ratio" || e == "relaxed_ratio") {
      r1_series[e].push_back({value_of(r[c_cell]), std::stod(r[c_r1])});
      map_series[e].push_back({value_of(r[c_cell]), std::stod(r[c_map])});
    }
  }
  json plots = json::array();
  if (r1_series.count("eps")) {
    const std::string path = (dir / "rank1_vs_eps.svg").string();
    std::ofstream(path) << svg_line_plot("Attacked Rank-1 / mAP vs epsilon", "epsilon (x/255)", "percent",
                                         {{"Rank-1", r1_series["eps"]}, {"mAP", map_series["eps"]}});
    plots.push_back(path);
  }
  if (r1_series.count("ratio")) {
    std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> s = {{"hard Rank-1", r1_series["ratio"]}};
    if (r1_series.count("relaxed_ratio")) s.push_back({"relaxed Rank-1", r1_series["relaxed_ratio"]});
    const std::string path = (dir / "rank1_vs_ratio.svg").string();
    std::ofstream(path) << svg_line_plot("Attacked Rank-1 vs pixel ratio", "ratio of perturbed pixels", "percent", s, true);
    plots.push_back(path);
  }
  json grids = json::array();
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".png") {
      grids.push_back(e.path().string());
      md << "\n![" << e.path().filename().string() << "](" << e.path().filename().string() << ")\n";
    }
  }
  for (const auto& pl : plots) md << "\n![plot](" << fs::path(pl.get<std::string>()).filename().string() << ")\n";
  std::ofstream((dir / "summary.md").string()) << md.str();
  write_report(cfg, "report", {{"summary", (dir / "summary.md").string()}, {"plots", plots}, {"grids", grids},
                               {"rows", rows.size()}});
  std::cout << "summary written to " << (dir / "summary.md").string() << "\n";
  return 0;
}

std::vector<std::string> verify_artifacts(const std::string& dir_name) {
  const fs::path dir = dir_name;
  std::vector<std::string> problems;
  const fs::path report = dir / "report.json";
  if (!fs::exists(report)) return {"missing " + report.string()};
  json j;
  std::ifstream(report.string()) >> j;
  ExperimentConfig cfg = ExperimentConfig::from_json(j.at("config"));
  cfg.resolve();
  const std::string hash = config_hash(cfg);
  auto check = [&](const std::string& what, const std::string& got) {
    if (got != hash) problems.push_back(what + ": hash " + got + " != " + hash);
  };
  check(report.string(), j.value("config_hash", std::string()));
  for (const auto& e : fs::directory_iterator(dir)) {
    const fs::path& f = e.path();
    const std::string ext = f.extension().string();
    if (ext == ".csv") {
      auto rows = read_csv(f.string());
      for (std::size_t i = 1; i < rows.size(); ++i) check(f.string() + " row " + std::to_string(i), rows[i].back());
    } else if (f.filename() == "history.jsonl") {
      std::ifstream in(f.string());
      std::string line;
      int n = 0;
      while (std::getline(in, line)) {
        ++n;
        if (!line.empty()) check(f.string() + " line " + std::to_string(n), json::parse(line).value("config_hash", ""));
      }
    } else if (ext == ".png") {
      auto text = read_png_text(f.string());
      check(f.string(), text.count("config_hash") ? text.at("config_hash") : "");
    } else if (ext == ".ckpt") {
      check(f.string(), read_checkpoint_header(f.string()).config_hash);
    }
  }
  if (fs::exists(dir / "data" / "dataset.json")) {
    json d;
    std::ifstream((dir / "data" / "dataset.json").string()) >> d;
    check((dir / "data" / "dataset.json").string(), d.value("config_hash", std::string()));
  }
  return problems;
}

}  // namespace lcye
