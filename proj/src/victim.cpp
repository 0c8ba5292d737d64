#include "lcye/victim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "lcye/losses.hpp"
#include "lcye/metrics.hpp"
#include "lcye/ops.hpp"

namespace lcye {

Arch parse_arch(const std::string& name) {
  if (name == "convnet_global") return Arch::convnet_global;
  if (name == "convnet_parts") return Arch::convnet_parts;
  throw std::invalid_argument("unknown victim architecture: " + name);
}

std::string to_string(Arch a) { return a == Arch::convnet_global ? "convnet_global" : "convnet_parts"; }

Backbone::Backbone(int in_channels, const std::vector<int>& widths, Rng& rng) {
  int c = in_channels;
  for (int w : widths) {
    Block b;
    b.down = nn::Conv2d(c, w, 3, 2, 1, false, rng);
    b.bn1 = nn::BatchNorm(w);
    b.conv = nn::Conv2d(w, w, 3, 1, 1, false, rng);
    b.bn2 = nn::BatchNorm(w);
    blocks_.push_back(std::move(b));
    c = w;
  }
  out_channels_ = c;
}

ag::Var Backbone::operator()(const ag::Var& x, bool training) {
  ag::Var h = x;
  for (auto& b : blocks_) {
    h = ag::relu(b.bn1(b.down(h), training));
    h = ag::relu(b.bn2(b.conv(h), training));
  }
  return h;
}

void Backbone::collect(nn::ParamList& list, const std::string& prefix) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = prefix + "block" + std::to_string(i) + ".";
    blocks_[i].down.collect(list, p + "down.");
    blocks_[i].bn1.collect(list, p + "bn1.");
    blocks_[i].conv.collect(list, p + "conv.");
    blocks_[i].bn2.collect(list, p + "bn2.");
  }
}

VictimModel VictimModel::build(Arch arch, int num_classes, std::uint64_t seed) {
  if (num_classes < 1) throw std::invalid_argument("build_victim: num_classes must be >= 1");
  VictimModel m;
  m.arch_ = arch;
  m.num_classes_ = num_classes;
  Rng root = Rng(seed).substream("victim");
  Rng sub = root.substream("subnet");
  m.subnet_ = Backbone(3, {16, 32, 64, 64}, sub);
  const int c = m.subnet_.out_channels();
  Rng head = root.substream("head");
  if (arch == Arch::convnet_global) {
    m.bn_ = nn::BatchNorm(c);
    m.classifier_ = nn::Linear(c, num_classes, false, head);
  } else {
    for (int p = 0; p < 2; ++p) {
      Part part;
      part.reduce = nn::Linear(c, c / 2, false, head);
      part.bn = nn::BatchNorm(c / 2);
      part.classifier = nn::Linear(c / 2, num_classes, false, head);
      m.parts_.push_back(std::move(part));
    }
  }
  return m;
}

VictimModel VictimModel::clone() {
  VictimModel c = build(arch_, num_classes_, 0);
  nn::copy_values(all_params(), c.all_params());
  return c;
}

FeatureDims VictimModel::feature_dims(int height, int width) const {
  if (height % 16 != 0 || width % 16 != 0) {
    throw std::invalid_argument("victim input must be divisible by 16, got " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  return {height / 16, width / 16, channels()};
}

ag::Var VictimModel::features(const ag::Var& x, bool training) {
  if (x.value().rank() != 4 || x.dim(1) != 3) {
    throw std::invalid_argument("victim expects B x 3 x H x W, got " + shape_str(x.shape()));
  }
  feature_dims(x.dim(2), x.dim(3));
  return subnet_(x, training);
}

VictimModel::Output VictimModel::forward(const ag::Var& x, bool training) {
  Output o;
  o.feature_map = features(x, training);
  if (arch_ == Arch::convnet_global) {
    o.pooled = ag::global_max_pool(o.feature_map);
    o.embedding = bn_(o.pooled, training);
    o.logits = classifier_(o.embedding);
    return o;
  }
  const int h = o.feature_map.dim(2), w = o.feature_map.dim(3);
  if (h < 2) throw std::invalid_argument("convnet_parts needs at least two feature rows");
  std::vector<ag::Var> pooled, embedded;
  for (int p = 0; p < 2; ++p) {
    const int top = p * (h / 2), rows = p == 0 ? h / 2 : h - h / 2;
    ag::Var stripe = ag::global_max_pool(ag::crop(o.feature_map, top, 0, rows, w));
    ag::Var reduced = parts_[p].reduce(stripe);
    ag::Var e = parts_[p].bn(reduced, training);
    ag::Var l = parts_[p].classifier(e);
    pooled.push_back(reduced);
    embedded.push_back(e);
    o.logits = o.logits.defined() ? ag::add(o.logits, l) : l;
  }
  o.pooled = ag::concat1(pooled);
  o.embedding = ag::concat1(embedded);
  return o;
}

nn::ParamList VictimModel::subnet_params() {
  nn::ParamList l;
  subnet_.collect(l, "victim.subnet.");
  return l;
}

nn::ParamList VictimModel::head_params() {
  nn::ParamList l;
  if (arch_ == Arch::convnet_global) {
    bn_.collect(l, "victim.head.bn.");
    classifier_.collect(l, "victim.head.classifier.");
  } else {
    for (std::size_t p = 0; p < parts_.size(); ++p) {
      const std::string pre = "victim.head.part" + std::to_string(p) + ".";
      parts_[p].reduce.collect(l, pre + "reduce.");
      parts_[p].bn.collect(l, pre + "bn.");
      parts_[p].classifier.collect(l, pre + "classifier.");
    }
  }
  return l;
}

nn::ParamList VictimModel::all_params() {
  nn::ParamList l = subnet_params();
  l.append(head_params(), "");
  return l;
}

namespace {
constexpr int kInferenceChunk = 64;

template <class F>
Tensor batched(const Tensor& pixels, F fn) {
  ag::NoGradGuard guard;
  std::vector<Tensor> parts;
  const int b = pixels.dim(0);
  for (int s = 0; s < b; s += kInferenceChunk) {
    parts.push_back(fn(ag::Var(pixels.slice_batch(s, std::min(b, s + kInferenceChunk)))));
  }
  std::vector<double> data;
  int cols = 0;
  for (auto& p : parts) {
    cols = p.dim(1);
    data.insert(data.end(), p.values().begin(), p.values().end());
  }
  return Tensor({b, cols}, std::move(data));
}
}  // namespace

Tensor embed_pixels(VictimModel& model, const Tensor& pixels) {
  return batched(pixels, [&](const ag::Var& x) { return model.forward(x, false).embedding.value(); });
}

Tensor logits_pixels(VictimModel& model, const Tensor& pixels) {
  return batched(pixels, [&](const ag::Var& x) { return model.forward(x, false).logits.value(); });
}

Tensor embed(VictimModel& model, const ImageBatch& batch) { return embed_pixels(model, batch.pixels); }
Tensor logits(VictimModel& model, const ImageBatch& batch) { return logits_pixels(model, batch.pixels); }

void TrainHParams::validate() const {
  if (ids_per_batch < 2 || batch_size < 2 * ids_per_batch || batch_size % ids_per_batch != 0) {
    throw std::invalid_argument("batch_size must be a multiple of ids_per_batch and at least twice it");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (triplet_margin < 0.0) throw std::invalid_argument("triplet_margin must be >= 0");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
}

std::vector<std::vector<int>> pk_batches(const std::vector<int>& labels, int ids_per_batch, int per_id, Rng& rng) {
  std::map<int, std::vector<int>> by_id;
  for (std::size_t i = 0; i < labels.size(); ++i) by_id[labels[i]].push_back(static_cast<int>(i));
  std::vector<int> ids;
  for (const auto& kv : by_id) ids.push_back(kv.first);
  rng.shuffle(ids);
  std::vector<std::vector<int>> batches;
  for (std::size_t start = 0; start + ids_per_batch <= ids.size(); start += ids_per_batch) {
    std::vector<int> batch;
    for (int k = 0; k < ids_per_batch; ++k) {
      std::vector<int> pool = by_id[ids[start + k]];
      rng.shuffle(pool);
      for (int j = 0; j < per_id; ++j) {
        batch.push_back(j < static_cast<int>(pool.size()) ? pool[j]
                                                          : pool[rng.uniform_int(0, static_cast<int>(pool.size()) - 1)]);
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

Tensor augment_batch(const Tensor& pixels, Rng& rng, int max_shift) {
  const int b = pixels.dim(0), c = pixels.dim(1), h = pixels.dim(2), w = pixels.dim(3);
  Tensor out(pixels.shape());
  for (int n = 0; n < b; ++n) {
    const bool flip = rng.bernoulli(0.5);
    const int dy = rng.uniform_int(-max_shift, max_shift), dx = rng.uniform_int(-max_shift, max_shift);
    for (int k = 0; k < c; ++k)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int sy = std::clamp(y + dy, 0, h - 1);
          int sx = std::clamp(x + dx, 0, w - 1);
          if (flip) sx = w - 1 - sx;
          out.at(n, k, y, x) = pixels.at(n, k, sy, sx);
        }
  }
  return out;
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch}, {"loss", loss}, {"ce", ce}, {"triplet", triplet}, {"train_accuracy", train_accuracy},
          {"rank1", rank1}};
}

double clean_rank1(VictimModel& model, const DatasetSplits& splits) {
  Tensor q = embed(model, splits.query), g = embed(model, splits.gallery);
  return metrics::cmc_rank_k(metrics::distance_matrix(q, g), splits.query.person_ids, splits.gallery.person_ids,
                             splits.query.camera_ids, splits.gallery.camera_ids, 1);
}

std::vector<EpochRecord> train_victim(VictimModel& model, const DatasetSplits& splits, const TrainHParams& hp) {
  hp.validate();
  if (splits.train.size() == 0) throw std::invalid_argument("train_victim: empty train split");
  nn::ParamList params = model.all_params();
  nn::Adam opt(params.vars(), hp.lr);
  Rng rng = Rng(hp.seed).substream("victim.sampler");
  Rng aug = Rng(hp.seed).substream("victim.augment");
  std::vector<EpochRecord> history;
  const int per_id = hp.batch_size / hp.ids_per_batch;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    auto batches = pk_batches(splits.train.person_ids, hp.ids_per_batch, per_id, rng);
    for (const auto& idx : batches) {
      ImageBatch b = splits.train.select(idx);
      if (hp.augment) b.pixels = augment_batch(b.pixels, aug);
      opt.zero_grad();
      auto out = model.forward(ag::Var(b.pixels), true);
      ag::Var ce = loss::cross_entropy(out.logits, b.person_ids);
      ag::Var tri = loss::batch_hard_triplet(out.pooled, b.person_ids, hp.triplet_margin).value;
      ag::Var total = ag::add(ce, tri);
      if (!std::isfinite(total.item())) {
        throw std::runtime_error("victim training diverged (non-finite loss) in epoch " + std::to_string(epoch));
      }
      ag::backward(total);
      opt.step();
      rec.loss += total.item() / batches.size();
      rec.ce += ce.item() / batches.size();
      rec.triplet += tri.item() / batches.size();
    }
    const auto pred = argmax_rows(logits(model, splits.train));
    int correct = 0;
    for (int i = 0; i < splits.train.size(); ++i) correct += pred[i] == splits.train.person_ids[i];
    rec.train_accuracy = 100.0 * correct / splits.train.size();
    if (splits.query.size() > 0 && splits.gallery.size() > 0) rec.rank1 = clean_rank1(model, splits);
    history.push_back(rec);
  }
  return history;
}

}  // namespace lcye
