// Acceptance run: one PASS/FAIL line per criterion.
//
//   lcye_acceptance [--report-only] [--out FILE] [criterion numbers...]
//
// Exit status is the number of failed criteria, or 0 with --report-only
// once every selected criterion has produced a verdict. --out copies the
// verdict lines to FILE.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <set>
#include <string>

#include "lcye/experiment.hpp"
#include "lcye/losses.hpp"
#include "lcye/memory.hpp"
#include "lcye/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/ranking_oracle.hpp"

using namespace lcye;
using lcye::testing::grad_check;
using lcye::testing::random_tensor;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;
std::FILE* copy = nullptr;

void emit(const std::string& line) {
  std::fputs(line.c_str(), stdout);
  std::fflush(stdout);
  if (copy) {
    std::fputs(line.c_str(), copy);
    std::fflush(copy);
  }
}

void verdict(int id, bool pass, const std::string& detail, double secs) {
  char head[64], tail[32];
  std::snprintf(head, sizeof head, "criterion %2d %s  ", id, pass ? "PASS" : "FAIL");
  std::snprintf(tail, sizeof tail, " (%.1fs)\n", secs);
  emit(head + detail + tail);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0, double e = 0) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a, b, c, d, e);
  return buf;
}

// ---------------------------------------------------------------- 1

void memory_invariants() {
  const auto t0 = Clock::now();
  Rng rng(101);
  int fails = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int b = rng.uniform_int(1, 2), c = rng.uniform_int(2, 6), h = rng.uniform_int(1, 3),
              w = rng.uniform_int(1, 3), n = rng.uniform_int(2, 6);
    Tensor ft = random_tensor({b, c, h, w}, rng), kt = random_tensor({n, c}, rng);
    ag::Var f(ft), K(kt);
    const double temp = rng.uniform(0.2, 2.0);
    MemoryRead r = memory_read(f, K, {temp});
    const Tensor& wts = r.weights.value();
    const int rows = wts.dim(0);

    // Row-stochastic.
    for (int i = 0; i < rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) {
        if (!(wts.at(i, j) >= 0.0)) ++fails;
        s += wts.at(i, j);
      }
      if (std::abs(s - 1.0) > 1e-12) ++fails;
    }

    // Cosine addressing ignores positive rescaling of slices and prototypes.
    Tensor fs = ft, ks = kt;
    for (int bb = 0; bb < b; ++bb)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double s = rng.uniform(0.1, 10.0);
          for (int cc = 0; cc < c; ++cc) fs.at(bb, cc, y, x) *= s;
        }
    for (int j = 0; j < n; ++j) {
      const double s = rng.uniform(0.1, 10.0);
      for (int cc = 0; cc < c; ++cc) ks.at(j, cc) *= s;
    }
    const Tensor scaled = address_weights(ag::Var(fs), ag::Var(ks), temp).value();
    if (max_abs_diff(scaled, wts) > 1e-12) ++fails;
    if (argmax_rows(scaled) != argmax_rows(wts)) ++fails;

    // Convex combination of the prototypes, channel by channel.
    const Tensor& hv = r.h.value();
    for (int bb = 0; bb < b; ++bb)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int row = (bb * h + y) * w + x;
          for (int cc = 0; cc < c; ++cc) {
            double s = 0.0, lo = 1e300, hi = -1e300;
            for (int j = 0; j < n; ++j) {
              s += wts.at(row, j) * kt.at(j, cc);
              lo = std::min(lo, kt.at(j, cc));
              hi = std::max(hi, kt.at(j, cc));
            }
            const double v = hv.at(bb, cc, y, x);
            if (std::abs(v - s) > 1e-12 || v < lo - 1e-12 || v > hi + 1e-12) ++fails;
          }
        }

    // An all-ones indicator is the untargeted read.
    const Tensor targeted = mra_read_targeted(f, K, Tensor({n}, 1.0), false, temp).value();
    if (max_abs_diff(targeted, hv) != 0.0) ++fails;
  }
  const double secs = seconds_since(t0);
  verdict(1, fails == 0 && secs < 60.0, fmt("memory invariants: 1000 instances, %.0f failures", fails), secs);
}

// ---------------------------------------------------------------- 2

void gradient_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  int checks = 0;
  bool degenerate = false;
  auto check = [&](const std::function<ag::Var(const std::vector<ag::Var>&)>& fn, const std::vector<Tensor>& in) {
    auto r = grad_check(fn, in, std::vector<bool>(in.size(), true));
    worst = std::max(worst, r.relative_error);
    if (!(r.analytic_norm > 0.0)) degenerate = true;
    ++checks;
  };
  for (int trial = 0; trial < 5; ++trial) {
    Rng rng(200 + trial);
    Tensor adv = random_tensor({4, 5}, rng), clean = random_tensor({4, 5}, rng);
    std::vector<int> labels{0, 0, 1, 1};
    check([&](const std::vector<ag::Var>& v) { return loss::cent(v[0], {1, 2, 3, 4}); }, {adv});
    for (double delta : {0.0, 0.3, 1.0})
      check([&](const std::vector<ag::Var>& v) { return loss::xent(v[0], clean, delta); }, {adv});
    Tensor emb = random_tensor({4, 3}, rng);
    check([&](const std::vector<ag::Var>& v) { return loss::etri(v[0], labels, 5.0).value; }, {emb});

    Tensor x = random_tensor({1, 2, 8, 8}, rng, 0.2, 0.8), y = x;
    for (auto& v : y.values()) v += rng.uniform(-0.1, 0.1);
    loss::SsimOptions small;
    small.window = 3;
    check([&](const std::vector<ag::Var>& v) { return loss::ssim(v[0], v[1], small); }, {x, y});
    check([&](const std::vector<ag::Var>& v) { return loss::ms_ssim(v[0], v[1], 2, small); }, {x, y});

    std::vector<Tensor> fake{random_tensor({2, 4}, rng), random_tensor({2, 4}, rng), random_tensor({2, 4}, rng)};
    check([&](const std::vector<ag::Var>& v) { return loss::gan_generator(v, {1, 2}); }, fake);
    std::vector<Tensor> both = fake;
    for (int s = 0; s < 3; ++s) both.push_back(random_tensor({2, 4}, rng));
    check(
        [&](const std::vector<ag::Var>& v) {
          return loss::gan_discriminator({v[0], v[1], v[2]}, {0, 2}, {v[3], v[4], v[5]}, 3);
        },
        both);
  }
  const double secs = seconds_since(t0);
  verdict(2, worst < 1e-4 && !degenerate && secs < 120.0,
          fmt("gradient oracle: %.0f checks, worst relative error %.2e", checks, worst), secs);
}

// ---------------------------------------------------------------- 3

void metric_oracle() {
  const auto t0 = Clock::now();
  Rng rng(303);
  int mismatches = 0, instances = 0;
  while (instances < 500) {
    const int nq = rng.uniform_int(1, 3), ng = rng.uniform_int(1, 6);
    Tensor d({nq, ng});
    for (auto& v : d.values()) v = rng.uniform();
    std::vector<int> qi, qc, gi, gc;
    for (int i = 0; i < nq; ++i) {
      qi.push_back(rng.uniform_int(0, 2));
      qc.push_back(rng.uniform_int(0, 1));
    }
    for (int i = 0; i < ng; ++i) {
      gi.push_back(rng.uniform_int(0, 2));
      gc.push_back(rng.uniform_int(0, 1));
    }
    int valid = 0;
    double ap = 0.0;
    std::vector<int> hits(static_cast<std::size_t>(ng), 0);
    for (int q = 0; q < nq; ++q) {
      auto o = lcye::testing::oracle_query(d, q, qi, gi, qc, gc);
      if (!o.valid) continue;
      ++valid;
      ap += o.ap;
      for (int k = o.first_hit; k <= ng; ++k) ++hits[static_cast<std::size_t>(k - 1)];
    }
    if (valid == 0) continue;
    ++instances;
    if (std::abs(metrics::mean_ap(d, qi, gi, qc, gc) - 100.0 * ap / valid) > 1e-9) ++mismatches;
    for (int k = 1; k <= ng; ++k) {
      const double want = 100.0 * hits[static_cast<std::size_t>(k - 1)] / valid;
      if (std::abs(metrics::cmc_rank_k(d, qi, gi, qc, gc, k) - want) > 1e-9) ++mismatches;
    }
  }
  // Ranking [positive, negative, positive]: AP = (1/1 + 2/3) / 2.
  const double example = metrics::mean_ap(Tensor({1, 3}, {0.1, 0.2, 0.3}), {1}, {1, 2, 1}, {0}, {1, 1, 1});
  const bool example_ok = std::abs(example - 100.0 * (1.0 + 2.0 / 3.0) / 2.0) < 1e-9;
  verdict(3, mismatches == 0 && example_ok,
          fmt("metric oracle: 500 instances, %.0f mismatches; AP example %.2f%%", mismatches, example),
          seconds_since(t0));
}

// ---------------------------------------------------------------- 4-10

// Desk-scale setup shared by the pipeline criteria.
ExperimentConfig desk_config() {
  json j = {{"seed", 1},
            {"out_dir", "acceptance"},
            {"victim", {{"epochs", 30}}},
            {"mimic", {{"epochs", 60}}},
            {"attack", {{"epochs", 100}, {"lr", 1e-3}, {"eps", 16}}},
            {"target", {{"num_targets", 10}, {"gamma", 4}}},
            {"pgd", {{"steps", 1}, {"step_size", 16}}}};
  ExperimentConfig c = ExperimentConfig::from_json(j);
  c.resolve();
  c.validate();
  return c;
}

struct Pipeline {
  ExperimentConfig cfg;
  DatasetSplits splits;
  VictimModel victim;
  MimicState mimic;
  AttackModels models;
  metrics::EvalReport clean, attacked;
  double seconds = 0.0;
};

// Freeze bookkeeping across every attack run of the acceptance.
struct FreezeLog {
  int epochs = 0;
  int violations = 0;
};

AttackEpochCallback freeze_watch(FreezeLog& log, VictimModel& victim, MimicState& mimic) {
  const std::uint64_t v0 = nn::checksum(victim.all_params());
  const std::uint64_t k0 = nn::checksum(mimic.memory_params());
  const bool frozen_memory = freezes_subnet(mimic.mode);
  return [&log, &victim, &mimic, v0, k0, frozen_memory](const AttackEpochRecord& r) {
    ++log.epochs;
    log.violations += r.freeze_violations;
    // Independent recomputation, outside the trainer.
    if (nn::checksum(victim.all_params()) != v0 || r.victim_checksum != v0) ++log.violations;
    if (frozen_memory && (nn::checksum(mimic.memory_params()) != k0 || r.memory_checksum != k0)) ++log.violations;
  };
}

Pipeline run_pipeline(FreezeLog& freeze) {
  const auto t0 = Clock::now();
  Pipeline p;
  p.cfg = desk_config();
  p.splits = make_splits(p.cfg);
  p.victim = fit_victim(p.cfg, p.splits);
  p.clean = evaluate_clean(p.victim, p.splits);
  p.mimic = fit_mimic(p.cfg, p.victim, p.splits, p.cfg.mimic_mode);
  p.models = fit_attack(p.cfg, p.victim, p.victim, p.mimic, p.splits, nullptr,
                        freeze_watch(freeze, p.victim, p.mimic));
  p.attacked = attack_report(p.cfg, p.victim, p.models, p.mimic, p.splits, p.cfg.attack.attack);
  p.seconds = seconds_since(t0);
  return p;
}

void end_to_end(const Pipeline& p) {
  const double r1_drop = 1.0 - p.attacked.rank1 / p.clean.rank1;
  const double map_drop = 1.0 - p.attacked.map / p.clean.map;
  const double ms = p.attacked.perceptibility.mean_ms_ssim;
  const bool pass = p.clean.rank1 >= 90.0 && r1_drop >= 0.8 && map_drop >= 0.7 && ms >= 0.8 && p.seconds <= 1200.0;
  verdict(4, pass,
          fmt("clean R1 %.1f mAP %.1f -> attacked R1 %.1f mAP %.1f, ", p.clean.rank1, p.clean.map, p.attacked.rank1,
              p.attacked.map) +
              fmt("relative drop R1 %.0f%% (need 80) mAP %.0f%% (need 70), MS-SSIM %.3f", 100 * r1_drop,
                  100 * map_drop, ms),
          p.seconds);
}

void eps_monotonicity(Pipeline& p) {
  const auto t0 = Clock::now();
  std::vector<double> r1;
  std::string detail = "attacked R1 at eps";
  for (int e : {3, 5, 10, 16}) {
    AttackConfig a = p.cfg.attack.attack;
    a.epsilon = e / 255.0;
    r1.push_back(attack_report(p.cfg, p.victim, p.models, p.mimic, p.splits, a).rank1);
    detail += fmt(" %.0f:%.1f", e, r1.back());
  }
  bool pass = true;
  for (std::size_t i = 1; i < r1.size(); ++i) pass = pass && r1[i] <= r1[i - 1] + 3.0;
  verdict(5, pass, detail, seconds_since(t0));
}

void pixel_budget(Pipeline& p) {
  const auto t0 = Clock::now();
  auto r1_at = [&](double ratio, bool relaxed) {
    AttackConfig a = p.cfg.attack.attack;
    a.pixel_ratio = ratio;
    a.relaxed = relaxed;
    return attack_report(p.cfg, p.victim, p.models, p.mimic, p.splits, a).rank1;
  };
  const double h1 = r1_at(1.0, false), h2 = r1_at(0.5, false), h8 = r1_at(0.125, false);
  const double h16 = r1_at(0.0625, false), s16 = r1_at(0.0625, true);
  const bool pass = h2 >= h1 - 3.0 && h8 >= h2 - 3.0 && s16 <= h16 + 3.0;
  verdict(6, pass,
          fmt("hard R1 ratio 1:%.1f 1/2:%.1f 1/8:%.1f; ", h1, h2, h8) +
              fmt("1/16 hard %.1f relaxed %.1f", h16, s16),
          seconds_since(t0));
}

void mimic_identity(Pipeline& p, FreezeLog& freeze) {
  const auto t0 = Clock::now();
  ExperimentConfig c = p.cfg;
  c.attack.epochs = 2;
  MimicState base = fit_mimic(c, p.victim, p.splits, MimicMode::baseline);
  MimicState off = fit_mimic(c, p.victim, p.splits, MimicMode::offline);
  const bool same_k = base.memory.K.value().values() == off.memory.K.value().values();
  AttackModels mb = fit_attack(c, p.victim, p.victim, base, p.splits, nullptr, freeze_watch(freeze, p.victim, base));
  AttackModels mo = fit_attack(c, p.victim, p.victim, off, p.splits, nullptr, freeze_watch(freeze, p.victim, off));
  const auto rb = attack_report(c, p.victim, mb, base, p.splits, c.attack.attack);
  const auto ro = attack_report(c, p.victim, mo, off, p.splits, c.attack.attack);
  const bool same_metrics = rb.rank1 == ro.rank1 && rb.rank5 == ro.rank5 && rb.rank10 == ro.rank10 &&
                            rb.map == ro.map &&
                            rb.perceptibility.mean_ms_ssim == ro.perceptibility.mean_ms_ssim &&
                            rb.perceptibility.mean_l2 == ro.perceptibility.mean_l2;
  verdict(7, same_k && same_metrics,
          std::string("K ") + (same_k ? "bit-identical" : "DIFFERS") + ", attack metrics " +
              (same_metrics ? "identical" : "DIFFER") + fmt(" (R1 %.2f / %.2f, mAP %.4f / %.4f)", rb.rank1, ro.rank1, rb.map, ro.map),
          seconds_since(t0));
}

void target_attack(Pipeline& p, FreezeLog& freeze) {
  const auto t0 = Clock::now();
  ExperimentConfig c = p.cfg;
  c.attack.mode = AttackMode::targeted;
  c.attack.epochs = 60;
  AttackModels m = fit_attack(c, p.victim, p.victim, p.mimic, p.splits, nullptr, freeze_watch(freeze, p.victim, p.mimic));
  TargetEvaluation te = evaluate_target_attack(p.victim, m, p.mimic, p.splits, c.attack.attack, c.target);
  const double cons = te.consistency.percentage;
  const double gap = std::abs(te.ranking.rank1 - p.attacked.rank1);
  verdict(8, cons >= 3.0 * te.chance && gap <= 10.0,
          fmt("consistency %.1f%% vs chance %.2f%% (need %.2f), targeted R1 %.1f vs untargeted %.1f", cons, te.chance,
              3.0 * te.chance, te.ranking.rank1, p.attacked.rank1),
          seconds_since(t0));
}

void pgd_ordering(Pipeline& p) {
  const auto t0 = Clock::now();
  const auto pgd = pgd_report(p.cfg, p.victim, p.splits);
  ExperimentConfig ten = p.cfg;
  ten.pgd.steps = 10;
  ten.pgd.step_size = 2.0 / 255.0;
  const auto pgd10 = pgd_report(ten, p.victim, p.splits);
  verdict(9, p.attacked.rank1 <= pgd.rank1,
          fmt("LCYE R1 %.1f vs one-step PGD R1 %.1f (10-step PGD R1 %.1f, for reference)", p.attacked.rank1, pgd.rank1,
              pgd10.rank1),
          seconds_since(t0));
}

}  // namespace

int main(int argc, char** argv) {
  bool report_only = false;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--report-only") == 0) {
      report_only = true;
    } else if (std::strcmp(argv[i], "--out") == 0 && i + 1 < argc) {
      copy = std::fopen(argv[++i], "w");
      if (!copy) {
        std::fprintf(stderr, "cannot write %s\n", argv[i]);
        return 100;
      }
    } else {
      only.insert(std::atoi(argv[i]));
    }
  }
  auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };
  const auto t0 = Clock::now();

  try {
    if (wanted(1)) memory_invariants();
    if (wanted(2)) gradient_oracle();
    if (wanted(3)) metric_oracle();

    bool needs_pipeline = false;
    for (int id = 4; id <= 10; ++id) needs_pipeline = needs_pipeline || wanted(id);
    if (needs_pipeline) {
      FreezeLog freeze;
      Pipeline p = run_pipeline(freeze);
      if (wanted(4)) end_to_end(p);
      if (wanted(5)) eps_monotonicity(p);
      if (wanted(6)) pixel_budget(p);
      if (wanted(7) || wanted(10)) mimic_identity(p, freeze);
      if (wanted(8) || wanted(10)) target_attack(p, freeze);
      if (wanted(9)) pgd_ordering(p);
      if (wanted(10)) {
        verdict(10, freeze.violations == 0 && freeze.epochs > 0,
                fmt("freeze checks on %.0f attack epochs, %.0f violations", freeze.epochs, freeze.violations), 0.0);
      }
    }
  } catch (const std::exception& e) {
    emit(std::string("acceptance aborted: ") + e.what() + "\n");
    return 100;
  }
  emit(fmt("acceptance finished: %.0f failed (%.0fs)\n", failures, seconds_since(t0)));
  return report_only ? 0 : failures;
}
