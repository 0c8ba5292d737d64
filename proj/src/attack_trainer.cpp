#include "lcye/attack_trainer.hpp"

#include <cmath>
#include <stdexcept>

#include "lcye/ops.hpp"

namespace lcye {

AttackMode parse_attack_mode(const std::string& s) {
  if (s == "untargeted") return AttackMode::untargeted;
  if (s == "targeted") return AttackMode::targeted;
  throw std::invalid_argument("unknown attack mode: " + s);
}

std::string to_string(AttackMode m) { return m == AttackMode::untargeted ? "untargeted" : "targeted"; }

Access parse_access(const std::string& s) {
  if (s == "white_box") return Access::white_box;
  if (s == "black_box") return Access::black_box;
  throw std::invalid_argument("unknown access mode: " + s);
}

std::string to_string(Access a) { return a == Access::white_box ? "white_box" : "black_box"; }

void AttackTrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (ids_per_batch < 2 || batch_size < 2 * ids_per_batch || batch_size % ids_per_batch != 0) {
    throw std::invalid_argument("batch_size must be a multiple of ids_per_batch and at least twice it");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  const loss::LossWeights& w = weights;
  for (double v : {w.alpha1, w.alpha2, w.alpha3, w.beta1, w.beta2, w.margin}) {
    if (!(v >= 0.0)) throw std::invalid_argument("loss weights and margin must be >= 0");
  }
  if (!(w.delta >= 0.0 && w.delta <= 1.0)) throw std::invalid_argument("delta must be in [0, 1]");
  if (ms_ssim_scales < 1) throw std::invalid_argument("ms_ssim_scales must be >= 1");
  if (mimic_steps_per_attack_step < 0) throw std::invalid_argument("mimic_steps_per_attack_step must be >= 0");
  attack.validate();
}

nlohmann::json AttackTrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"ids_per_batch", ids_per_batch},
          {"lr", lr},
          {"alpha1", weights.alpha1},
          {"alpha2", weights.alpha2},
          {"alpha3", weights.alpha3},
          {"delta", weights.delta},
          {"margin", weights.margin},
          {"mis_rank", loss::to_string(mis_rank)},
          {"perception", loss::to_string(perception)},
          {"etri_mean", etri_mean},
          {"epsilon", attack.epsilon},
          {"pixel_ratio", attack.pixel_ratio},
          {"relaxed", attack.relaxed},
          {"mode", to_string(mode)},
          {"access", to_string(access)},
          {"seed", seed}};
}

nlohmann::json AttackEpochRecord::to_json() const {
  return {{"epoch", epoch},         {"loss_d", loss_d},
          {"loss_g", loss_g},       {"loss_mr", loss_mr},
          {"loss_vp", loss_vp},     {"total", total},
          {"mimic_loss", mimic_loss}, {"d_steps", d_steps},
          {"g_steps", g_steps},     {"mimic_steps", mimic_steps},
          {"victim_checksum", victim_checksum}, {"memory_checksum", memory_checksum},
          {"freeze_violations", freeze_violations}};
}

AttackModels init_attack_models(MimicState& mimic, std::uint64_t seed, int height, int width) {
  AttackModels m;
  m.attacker = Attacker(mimic.source.channels(), mimic.memory.channels(), seed, height, width);
  m.discriminator = MultiStageDiscriminator(mimic.memory.rows(), mimic.memory.channels(), seed);
  return m;
}

std::vector<int> draw_targets(const std::vector<int>& exclude, int num_ids, Rng& rng) {
  if (num_ids < 1) throw std::invalid_argument("draw_targets: no identities");
  std::vector<int> out;
  out.reserve(exclude.size());
  for (int e : exclude) {
    const bool valid = e >= 0 && e < num_ids && num_ids > 1;
    int t = rng.uniform_int(0, num_ids - (valid ? 2 : 1));
    if (valid && t >= e) ++t;
    out.push_back(t);
  }
  return out;
}

namespace {

// Turns gradients off for a parameter list and restores the flags on exit.
class FreezeGuard {
 public:
  explicit FreezeGuard(nn::ParamList list) : list_(std::move(list)) {
    for (const auto& p : list_.params) flags_.push_back(p.var->requires_grad());
    nn::set_requires_grad(list_, false);
  }
  ~FreezeGuard() {
    for (std::size_t i = 0; i < flags_.size(); ++i) list_.params[i].var->set_requires_grad(flags_[i]);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  nn::ParamList list_;
  std::vector<bool> flags_;
};

ag::Var mis_rank_loss(const AttackTrainConfig& cfg, const VictimModel::Output& adv, const Tensor& clean_logits,
                      const std::vector<int>& labels, const std::vector<int>* targets) {
  const auto& w = cfg.weights;
  auto xent_term = [&] { return loss::xent(adv.logits, clean_logits, w.delta, &labels, targets); };
  auto etri_term = [&] {
    ag::Var t = loss::etri(adv.embedding, labels, w.margin).value;
    return cfg.etri_mean ? ag::scale(t, 1.0 / static_cast<double>(labels.size())) : t;
  };
  switch (cfg.mis_rank) {
    case loss::MisRank::cent:
      return targets ? loss::cross_entropy(adv.logits, *targets) : loss::cent(adv.logits, labels);
    case loss::MisRank::xent: return xent_term();
    case loss::MisRank::etri: return etri_term();
    case loss::MisRank::xent_etri: return ag::add(xent_term(), etri_term());
  }
  throw std::logic_error("unhandled mis-ranking loss");
}

void require_finite(const ag::Var& v, const std::string& name, int epoch, int step) {
  if (!std::isfinite(v.item())) {
    throw std::runtime_error("non-finite " + name + " at epoch " + std::to_string(epoch) + " step " +
                             std::to_string(step));
  }
}

}  // namespace

std::vector<AttackEpochRecord> train_attack(VictimModel& victim, VictimModel& knowledge_source, MimicState& mimic,
                                            AttackModels& models, const DatasetSplits& splits,
                                            const AttackTrainConfig& cfg, const AttackEpochCallback& on_epoch) {
  cfg.validate();
  const int n = mimic.memory.rows();
  if (models.discriminator.num_ids() != n) throw std::invalid_argument("discriminator and memory disagree on N");
  for (int id : splits.train.person_ids) {
    if (id < 0 || id >= n) throw std::invalid_argument("train identity " + std::to_string(id) + " has no memory row");
  }
  const bool online = !freezes_subnet(mimic.mode);
  VictimModel& scorer = cfg.access == Access::white_box ? victim : knowledge_source;

  FreezeGuard freeze_victim(victim.all_params());
  FreezeGuard freeze_knowledge(knowledge_source.all_params());
  nn::Adam opt_g(models.attacker.params().vars(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
  nn::Adam opt_d(models.discriminator.params().vars(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
  std::unique_ptr<MimicTrainer> mimic_trainer;
  if (online) mimic_trainer = std::make_unique<MimicTrainer>(mimic);

  Rng root(cfg.seed);
  Rng sampler = root.substream("attack.sampler");
  Rng target_rng = root.substream("attack.targets");
  const std::uint64_t victim_sum = nn::checksum(victim.all_params());
  const int per_id = cfg.batch_size / cfg.ids_per_batch;

  std::vector<AttackEpochRecord> history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    AttackEpochRecord rec;
    rec.epoch = epoch;
    auto batches = pk_batches(splits.train.person_ids, cfg.ids_per_batch, per_id, sampler);
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const int s = static_cast<int>(step);
      ImageBatch b = splits.train.select(batches[step]);
      const std::vector<int>& labels = b.person_ids;
      ag::Var x(b.pixels);
      const std::uint64_t k_before = nn::checksum(mimic.memory_params());

      Tensor features, clean_logits;
      {
        ag::NoGradGuard guard;
        features = mimic.source.features(x, false).value();
        clean_logits = scorer.forward(x, false).logits.value();
      }
      std::vector<int> targets;
      if (cfg.mode == AttackMode::targeted) targets = draw_targets(labels, n, target_rng);
      const std::vector<int>* tp = cfg.mode == AttackMode::targeted ? &targets : nullptr;
      AttackArtifacts a = models.attacker(x, ag::Var(features), mimic.memory.K, cfg.attack, tp);

      // Discriminator step on clean images and detached adversaries.
      opt_d.zero_grad();
      auto real = models.discriminator(x, mimic.memory.K);
      auto fake = models.discriminator(a.adversary.detach(), mimic.memory.K);
      ag::Var ld = loss::gan_discriminator(real.stage_logits, labels, fake.stage_logits, n);
      require_finite(ld, "discriminator loss", epoch, s);
      ag::backward(ld);
      opt_d.step();
      ++rec.d_steps;

      // Generator and mask step.
      opt_g.zero_grad();
      auto scored = scorer.forward(a.adversary, false);
      ag::Var lmr = mis_rank_loss(cfg, scored, clean_logits, labels, tp);
      ag::Var lg = loss::gan_generator(models.discriminator(a.adversary, mimic.memory.K).stage_logits, a.claimed_ids);
      ag::Var sim = cfg.perception == loss::Perception::ms_ssim ? loss::ms_ssim(x, a.adversary, cfg.ms_ssim_scales)
                                                                : loss::ssim(x, a.adversary);
      ag::Var lvp = ag::add_scalar(ag::scale(sim, -1.0), 1.0);
      ag::Var total;
      try {
        total = loss::attack_total({lmr, lg, lvp}, cfg.weights);
      } catch (const std::exception& e) {
        throw std::runtime_error(std::string(e.what()) + " at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(s));
      }
      ag::backward(total);
      opt_g.step();
      ++rec.g_steps;

      if (nn::checksum(mimic.memory_params()) != k_before) {
        ++rec.freeze_violations;
        throw std::logic_error("memory changed during attack step " + std::to_string(s) + " of epoch " +
                               std::to_string(epoch));
      }
      const double inv = 1.0 / static_cast<double>(batches.size());
      rec.loss_d += ld.item() * inv;
      rec.loss_g += lg.item() * inv;
      rec.loss_mr += lmr.item() * inv;
      rec.loss_vp += lvp.item() * inv;
      rec.total += total.item() * inv;

      if (online) {
        for (int m = 0; m < cfg.mimic_steps_per_attack_step; ++m) {
          MimicStepStats st = mimic_trainer->step(b);
          if (!std::isfinite(st.loss)) {
            throw std::runtime_error("non-finite mimic loss at epoch " + std::to_string(epoch) + " step " +
                                     std::to_string(s));
          }
          rec.mimic_loss += st.loss * inv / cfg.mimic_steps_per_attack_step;
          ++rec.mimic_steps;
        }
      }
    }
    rec.victim_checksum = nn::checksum(victim.all_params());
    rec.memory_checksum = nn::checksum(mimic.memory_params());
    if (rec.victim_checksum != victim_sum) {
      ++rec.freeze_violations;
      throw std::logic_error("victim changed during attack epoch " + std::to_string(epoch));
    }
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

std::vector<AttackEpochRecord> train_distill_probe(VictimModel& victim, VictimModel& knowledge_source,
                                                   MimicState& mimic, AttackModels& models,
                                                   const DatasetSplits& splits, AttackTrainConfig config,
                                                   const AttackEpochCallback& on_epoch) {
  config.weights.alpha1 = 0.0;
  return train_attack(victim, knowledge_source, mimic, models, splits, config, on_epoch);
}

AttackOutput run_attack(AttackModels& models, MimicState& mimic, const Tensor& pixels, const AttackConfig& config,
                        const std::vector<int>* targets) {
  ag::NoGradGuard guard;
  if (targets && static_cast<int>(targets->size()) != pixels.dim(0)) {
    throw std::invalid_argument("run_attack: one target per image required");
  }
  std::vector<Tensor> adv, noise, mask;
  AttackOutput out;
  constexpr int kChunk = 64;
  for (int b = 0; b < pixels.dim(0); b += kChunk) {
    const int e = std::min(pixels.dim(0), b + kChunk);
    ag::Var x(pixels.slice_batch(b, e));
    ag::Var f = mimic.source.features(x, false);
    std::vector<int> chunk_targets;
    if (targets) chunk_targets.assign(targets->begin() + b, targets->begin() + e);
    AttackArtifacts a = models.attacker(x, f, mimic.memory.K, config, targets ? &chunk_targets : nullptr);
    adv.push_back(a.adversary.value());
    noise.push_back(a.noise.value());
    mask.push_back(a.mask.value());
    out.claimed_ids.insert(out.claimed_ids.end(), a.claimed_ids.begin(), a.claimed_ids.end());
  }
  out.adversary = concat_batch(adv);
  out.noise = concat_batch(noise);
  out.mask = concat_batch(mask);
  return out;
}

metrics::EvalReport evaluate_attack(VictimModel& victim, const DatasetSplits& splits, const Tensor& adv_query) {
  if (adv_query.shape() != splits.query.pixels.shape()) {
    throw std::invalid_argument("adversarial queries must match the query split shape");
  }
  Tensor q = embed_pixels(victim, adv_query);
  Tensor g = embed(victim, splits.gallery);
  auto r = metrics::evaluate_ranking(metrics::distance_matrix(q, g), splits.query.person_ids, splits.gallery.person_ids,
                                     splits.query.camera_ids, splits.gallery.camera_ids);
  auto report = metrics::EvalReport::from_ranking(r);
  report.perceptibility = metrics::perceptibility_report(splits.query.pixels, adv_query);
  return report;
}

metrics::EvalReport evaluate_clean(VictimModel& victim, const DatasetSplits& splits) {
  return evaluate_attack(victim, splits, splits.query.pixels);
}

TargetEvaluation evaluate_target_attack(VictimModel& victim, AttackModels& models, MimicState& mimic,
                                        const DatasetSplits& splits, const AttackConfig& config,
                                        const TargetProtocol& protocol) {
  const int n = mimic.memory.rows();
  if (protocol.num_targets < 1 || protocol.num_targets > n) {
    throw std::invalid_argument("num_targets must be in [1, " + std::to_string(n) + "]");
  }
  if (protocol.gamma < 2) throw std::invalid_argument("gamma must be >= 2");
  const int pool = splits.query.size() + splits.gallery.size();
  const int needed = protocol.num_targets * protocol.gamma;
  if (needed > pool) throw std::invalid_argument("not enough test images for the target protocol");

  Rng root = Rng(protocol.seed).substream("target.protocol");
  Rng pick = root.substream("targets");
  std::vector<int> rows(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i;
  pick.shuffle(rows);
  rows.resize(static_cast<std::size_t>(protocol.num_targets));

  Tensor test_pixels = concat_batch({splits.query.pixels, splits.gallery.pixels});
  std::vector<int> images(static_cast<std::size_t>(pool));
  for (int i = 0; i < pool; ++i) images[static_cast<std::size_t>(i)] = i;
  Rng img_rng = root.substream("images");
  img_rng.shuffle(images);
  images.resize(static_cast<std::size_t>(needed));

  std::vector<int> targets;
  for (int i = 0; i < needed; ++i) targets.push_back(rows[static_cast<std::size_t>(i / protocol.gamma)]);
  AttackOutput attacked = run_attack(models, mimic, gather_batch(test_pixels, images), config, &targets);

  TargetEvaluation ev;
  ev.targets = rows;
  ev.consistency = metrics::target_consistency(embed_pixels(victim, attacked.adversary), targets);
  ev.chance = metrics::consistency_chance(protocol.gamma, protocol.num_targets);

  Rng query_rng = root.substream("query.targets");
  std::vector<int> query_targets = draw_targets(splits.query.person_ids, n, query_rng);
  AttackOutput q = run_attack(models, mimic, splits.query.pixels, config, &query_targets);
  ev.ranking = evaluate_attack(victim, splits, q.adversary);
  ev.ranking.target_consistency = ev.consistency.percentage;
  return ev;
}

}  // namespace lcye
