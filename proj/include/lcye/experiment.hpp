#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lcye/attack_trainer.hpp"
#include "lcye/config.hpp"

namespace lcye {

/// Appends one JSON object per line, each tagged with stage and config hash.
class HistoryLog {
 public:
  HistoryLog() = default;
  HistoryLog(const std::string& path, std::string config_hash);
  void write(const std::string& stage, nlohmann::json record);
  bool enabled() const { return out_.is_open(); }

 private:
  std::ofstream out_;
  std::string hash_;
};

DatasetSplits make_splits(const ExperimentConfig& cfg);
/// Splits the knowledge source trains on: the victim's, or a differently
/// seeded synthetic set when knowledge.cross_dataset is on.
DatasetSplits make_knowledge_splits(const ExperimentConfig& cfg, const DatasetSplits& victim_splits);

VictimModel fit_victim(const ExperimentConfig& cfg, const DatasetSplits& splits, HistoryLog* log = nullptr);
VictimModel fit_knowledge(const ExperimentConfig& cfg, const DatasetSplits& splits, HistoryLog* log = nullptr);
MimicState fit_mimic(const ExperimentConfig& cfg, VictimModel& knowledge, const DatasetSplits& splits, MimicMode mode,
                     HistoryLog* log = nullptr);
/// Fresh attacker and discriminator trained with cfg.attack. `extra` runs
/// after the history entry of each epoch.
AttackModels fit_attack(const ExperimentConfig& cfg, VictimModel& victim, VictimModel& knowledge, MimicState& mimic,
                        const DatasetSplits& splits, HistoryLog* log = nullptr, const AttackEpochCallback& extra = {});

/// Victim Rank-1/mAP of queries attacked with `attack` (untargeted unless
/// cfg says targeted, in which case targets are cfg.target_id or random).
metrics::EvalReport attack_report(const ExperimentConfig& cfg, VictimModel& victim, AttackModels& models,
                                  MimicState& mimic, const DatasetSplits& splits, const AttackConfig& attack);
/// PGD on the queries with the victim's own clean predictions as labels.
metrics::EvalReport pgd_report(const ExperimentConfig& cfg, VictimModel& victim, const DatasetSplits& splits);
/// Per-image targets for the query split under cfg.
std::vector<int> query_targets(const ExperimentConfig& cfg, const DatasetSplits& splits, int num_ids);

// Checkpoints. Loaders rebuild the model from the header metadata.
void save_victim(const std::string& path, VictimModel& m, int height, int width, const std::string& hash);
VictimModel load_victim(const std::string& path);
void save_mimic(const std::string& path, MimicState& s, const std::string& hash);
MimicState load_mimic(const std::string& path, VictimModel& knowledge, const MimicHParams& hp);
void save_attack(const std::string& path, AttackModels& m, const std::string& hash);
AttackModels load_attack(const std::string& path, MimicState& mimic);

/// Rows of [clean | noise heatmap | mask heatmap | adversary], one per image.
Tensor attack_grid(const Tensor& clean, const AttackOutput& out, int count);

struct AblationRow {
  std::string experiment;
  std::string cell;
  metrics::EvalReport report;
};

/// Declared sweeps of cfg.ablate: clean, eps, hard ratios, relaxed ratios,
/// mimic modes and PGD. Reuses the trained attacker unless ablate.retrain.
std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, VictimModel& victim, VictimModel& knowledge,
                                      MimicState& mimic, AttackModels& models, const DatasetSplits& splits);

void write_csv(const std::string& path, const std::vector<AblationRow>& rows, const std::string& hash);
std::vector<std::vector<std::string>> read_csv(const std::string& path);

/// Line plot of (x, y) series as a standalone SVG document.
std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& series,
                          bool log_x = false);

struct CommandOptions {
  std::string victim;     // checkpoint paths; empty means <out>/<name>.ckpt
  std::string knowledge;
  std::string mimic;
  std::string attacker;
};

// Subcommands. Each writes report.json into cfg.out_dir and returns 0 on success.
int cmd_gen_data(const ExperimentConfig& cfg);
int cmd_train_victim(const ExperimentConfig& cfg, const CommandOptions& opt);
int cmd_train_mimic(const ExperimentConfig& cfg, const CommandOptions& opt);
int cmd_train_attack(const ExperimentConfig& cfg, const CommandOptions& opt);
int cmd_attack(const ExperimentConfig& cfg, const CommandOptions& opt);
int cmd_eval(const ExperimentConfig& cfg, const CommandOptions& opt);
int cmd_ablate(const ExperimentConfig& cfg, const CommandOptions& opt);
int cmd_report(const ExperimentConfig& cfg);

/// Re-hashes the config recorded in <dir>/report.json and checks the hash in
/// every artifact of the directory. Returns the list of problems.
std::vector<std::string> verify_artifacts(const std::string& dir);

}  // namespace lcye
