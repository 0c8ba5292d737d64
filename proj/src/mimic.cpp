#include "lcye/mimic.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "lcye/losses.hpp"
#include "lcye/ops.hpp"

namespace lcye {

MimicMode parse_mimic_mode(const std::string& s) {
  if (s == "baseline") return MimicMode::baseline;
  if (s == "online") return MimicMode::online;
  if (s == "offline") return MimicMode::offline;
  throw std::invalid_argument("unknown mimic mode: " + s);
}

std::string to_string(MimicMode m) {
  switch (m) {
    case MimicMode::baseline: return "baseline";
    case MimicMode::online: return "online";
    case MimicMode::offline: return "offline";
  }
  return "?";
}

MimicHead::MimicHead(int channels, int num_ids, Rng& rng) : bn_(channels), classifier_(channels, num_ids, true, rng) {}

std::pair<ag::Var, ag::Var> MimicHead::operator()(const ag::Var& h, bool training) {
  ag::Var e = bn_(ag::global_max_pool(h), training);
  return {e, classifier_(e)};
}

void MimicHead::collect(nn::ParamList& list, const std::string& prefix) {
  bn_.collect(list, prefix + "bn.");
  classifier_.collect(list, prefix + "classifier.");
}

nn::ParamList MimicState::memory_params() {
  nn::ParamList l;
  memory.collect(l);
  return l;
}

nn::ParamList MimicState::head_params() {
  nn::ParamList l;
  head.collect(l);
  return l;
}

nn::ParamList MimicState::trainable() {
  nn::ParamList l = memory_params();
  l.append(head_params(), "");
  if (!freezes_subnet(mode)) l.append(source.subnet_params(), "mimic.");
  return l;
}

MimicState init_mimic(MimicMode mode, VictimModel& knowledge_source, int num_ids, const MimicHParams& hp) {
  MimicState s;
  s.mode = mode;
  s.hp = hp;
  s.source = knowledge_source.clone();
  // The source copy is frozen except for M' in online mode.
  nn::set_requires_grad(s.source.all_params(), false);
  if (!freezes_subnet(mode)) nn::set_requires_grad(s.source.subnet_params(), true);
  Rng root = Rng(hp.seed).substream("mimic");
  s.memory = init_memory(num_ids, s.source.channels(), root.substream("memory").seed());
  Rng head_rng = root.substream("head");
  s.head = MimicHead(s.source.channels(), num_ids, head_rng);
  return s;
}

MimicOutput mimic_forward_features(const ag::Var& f, MimicState& s, bool training) {
  if (f.dim(1) != s.memory.channels()) {
    throw std::invalid_argument("mimic: feature channels " + std::to_string(f.dim(1)) + " vs memory " +
                                std::to_string(s.memory.channels()));
  }
  MimicOutput o;
  o.f = f;
  ReadOptions ro;
  ro.temperature = s.hp.temperature;
  MemoryRead r = memory_read(f, s.memory.K, ro);
  o.h = r.h;
  o.weights = r.weights;
  std::tie(o.embedding, o.logits) = s.head(o.h, training);
  return o;
}

MimicOutput mimic_forward(const ag::Var& x, MimicState& s, bool training) {
  const bool train_subnet = training && !freezes_subnet(s.mode);
  return mimic_forward_features(s.source.features(x, train_subnet), s, training);
}

MimicTrainer::MimicTrainer(MimicState& state) : s_(state) {
  opt_ = std::make_unique<nn::Adam>(s_.trainable().vars(), s_.hp.lr);
}

MimicStepStats MimicTrainer::finish(const MimicOutput& out, const std::vector<int>& labels) {
  ag::Var ce = loss::cross_entropy(out.logits, labels);
  loss::Term tri = loss::batch_hard_triplet(out.embedding, labels, s_.hp.margin);
  loss::LossWeights w;
  w.beta1 = s_.hp.beta1;
  w.beta2 = s_.hp.beta2;
  ag::Var total = loss::mimic_total(ce, tri.value, w);
  opt_->zero_grad();
  ag::backward(total);
  opt_->step();
  return {total.item(), ce.item(), tri.value.item(), tri.degenerate};
}

MimicStepStats MimicTrainer::step(const ImageBatch& batch) {
  return finish(mimic_forward(ag::Var(batch.pixels), s_, true), batch.person_ids);
}

MimicStepStats MimicTrainer::step_features(const Tensor& features, const std::vector<int>& labels) {
  if (!freezes_subnet(s_.mode)) throw std::logic_error("cached features require a frozen subnet");
  return finish(mimic_forward_features(ag::Var(features), s_, true), labels);
}

nlohmann::json MimicEpoch::to_json() const { return {{"epoch", epoch}, {"loss", loss}, {"accuracy", accuracy}}; }

Tensor source_features(MimicState& s, const Tensor& pixels) {
  ag::NoGradGuard guard;
  std::vector<Tensor> parts;
  for (int b = 0; b < pixels.dim(0); b += 64) {
    parts.push_back(s.source.features(ag::Var(pixels.slice_batch(b, std::min(pixels.dim(0), b + 64))), false).value());
  }
  return concat_batch(parts);
}

namespace {
double accuracy_from_features(MimicState& s, const Tensor& f, const std::vector<int>& labels) {
  ag::NoGradGuard guard;
  auto pred = argmax_rows(mimic_forward_features(ag::Var(f), s, false).logits.value());
  int ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) ok += pred[i] == labels[i];
  return 100.0 * ok / static_cast<double>(labels.size());
}
}  // namespace

std::vector<MimicEpoch> train_mimic(MimicState& s, const DatasetSplits& splits) {
  if (splits.train.size() == 0) throw std::invalid_argument("train_mimic: empty train split");
  if (s.hp.batch_size % s.hp.ids_per_batch != 0) throw std::invalid_argument("train_mimic: batch not divisible by P");
  MimicTrainer trainer(s);
  Rng rng = Rng(s.hp.seed).substream("mimic.sampler");
  const bool frozen = freezes_subnet(s.mode);
  const std::uint64_t subnet_sum = nn::checksum(s.source.subnet_params());
  Tensor cached;
  if (frozen) cached = source_features(s, splits.train.pixels);
  std::vector<MimicEpoch> history;
  for (int epoch = 0; epoch < s.hp.epochs; ++epoch) {
    MimicEpoch rec;
    rec.epoch = epoch;
    auto batches = pk_batches(splits.train.person_ids, s.hp.ids_per_batch, s.hp.batch_size / s.hp.ids_per_batch, rng);
    for (const auto& idx : batches) {
      ImageBatch b = splits.train.select(idx);
      MimicStepStats st = frozen ? trainer.step_features(gather_batch(cached, idx), b.person_ids) : trainer.step(b);
      if (!std::isfinite(st.loss)) {
        throw std::runtime_error("mimic training diverged (non-finite loss) in epoch " + std::to_string(epoch));
      }
      rec.loss += st.loss / batches.size();
    }
    if (frozen && nn::checksum(s.source.subnet_params()) != subnet_sum) {
      throw std::logic_error("frozen subnet changed during mimic epoch " + std::to_string(epoch));
    }
    rec.accuracy = frozen ? accuracy_from_features(s, cached, splits.train.person_ids)
                          : mimic_accuracy(s, splits.train);
    history.push_back(rec);
  }
  return history;
}

double mimic_accuracy(MimicState& s, const ImageBatch& batch) {
  return accuracy_from_features(s, source_features(s, batch.pixels), batch.person_ids);
}

double memory_selectivity(MimicState& s, const ImageBatch& batch) {
  ag::NoGradGuard guard;
  Tensor f = source_features(s, batch.pixels);
  MimicOutput o = mimic_forward_features(ag::Var(f), s, false);
  Tensor mass = address_mass(o.weights.value(), batch.size());
  std::map<int, std::vector<double>> per_id;
  const int n = mass.dim(1);
  for (int b = 0; b < batch.size(); ++b) {
    auto& acc = per_id[batch.person_ids[b]];
    acc.resize(static_cast<std::size_t>(n), 0.0);
    for (int j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += mass.at(b, j);
  }
  double total = 0.0;
  for (const auto& [id, acc] : per_id) {
    double sum = 0.0, best = 0.0;
    for (double v : acc) {
      sum += v;
      best = std::max(best, v);
    }
    total += best / sum;
  }
  return total / per_id.size();
}

}  // namespace lcye
