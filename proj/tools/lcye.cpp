// Command-line entry point: lcye <command> --config <path> [flags].

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "lcye/experiment.hpp"

namespace {

struct Flags {
  std::string config;
  lcye::ConfigOverrides overrides;
  lcye::CommandOptions paths;
  std::string dir;
};

void add_common(CLI::App* cmd, Flags& f, bool checkpoints) {
  cmd->add_option("--config", f.config, "JSON config file (defaults when omitted)");
  cmd->add_option("--seed", f.overrides.seed, "root seed; falls back to the file, then LCYE_SEED");
  cmd->add_option("--eps", f.overrides.eps, "L-inf budget in 1/255 units");
  cmd->add_option("--ratio", f.overrides.ratio, "fraction of pixels the mask may keep");
  cmd->add_flag("--relaxed", f.overrides.relaxed, "relaxed pixel budget");
  cmd->add_option("--mode", f.overrides.mode, "untargeted or targeted")
      ->check(CLI::IsMember({"untargeted", "targeted"}));
  cmd->add_option("--target-id", f.overrides.target_id, "memory row every query is pushed toward");
  cmd->add_option("--out", f.overrides.out_dir, "output directory");
  if (checkpoints) {
    cmd->add_option("--victim", f.paths.victim, "victim checkpoint");
    cmd->add_option("--knowledge", f.paths.knowledge, "knowledge-source checkpoint (black box)");
    cmd->add_option("--mimic", f.paths.mimic, "mimic checkpoint");
    cmd->add_option("--attacker", f.paths.attacker, "attacker checkpoint");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Memory-guided adversarial attacks on person re-identification"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen-data", "render the synthetic dataset as a Market-style folder");
  auto* victim = app.add_subcommand("train-victim", "train the victim (and the black-box knowledge source)");
  auto* mimic = app.add_subcommand("train-mimic", "train the prototype memory");
  auto* train = app.add_subcommand("train-attack", "train the attacker against the frozen victim");
  auto* attack = app.add_subcommand("attack", "attack the query split and write an image grid");
  auto* eval = app.add_subcommand("eval", "clean, attacked, targeted and PGD metrics");
  auto* ablate = app.add_subcommand("ablate", "epsilon, pixel budget, mimic mode and PGD sweeps");
  auto* report = app.add_subcommand("report", "summary table and plots from the CSVs");
  auto* verify = app.add_subcommand("verify", "re-hash the config and check every artifact in a directory");
  auto* schema = app.add_subcommand("schema", "print the config JSON schema");

  add_common(gen, f, false);
  add_common(report, f, false);
  for (auto* c : {victim, mimic, train, attack, eval, ablate}) add_common(c, f, true);
  verify->add_option("dir", f.dir, "artifact directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*schema) {
      std::cout << lcye::config_schema().dump(2) << "\n";
      return 0;
    }
    if (*verify) {
      auto problems = lcye::verify_artifacts(f.dir);
      for (const auto& p : problems) std::cerr << p << "\n";
      std::cout << (problems.empty() ? "ok" : "hash mismatch") << "\n";
      return problems.empty() ? 0 : 1;
    }
    const lcye::ExperimentConfig cfg = lcye::load_config(f.config, f.overrides);
    std::cerr << "config " << lcye::config_hash(cfg) << " seed " << cfg.seed << " out " << cfg.out_dir << "\n";
    if (*gen) return lcye::cmd_gen_data(cfg);
    if (*victim) return lcye::cmd_train_victim(cfg, f.paths);
    if (*mimic) return lcye::cmd_train_mimic(cfg, f.paths);
    if (*train) return lcye::cmd_train_attack(cfg, f.paths);
    if (*attack) return lcye::cmd_attack(cfg, f.paths);
    if (*eval) return lcye::cmd_eval(cfg, f.paths);
    if (*ablate) return lcye::cmd_ablate(cfg, f.paths);
    if (*report) return lcye::cmd_report(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
