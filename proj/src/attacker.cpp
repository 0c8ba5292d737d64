#include "lcye/attacker.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "lcye/losses.hpp"
#include "lcye/ops.hpp"

namespace lcye {

namespace {
constexpr double kSlope = 0.2;
const std::vector<int> kEncoderWidths = {8, 16, 32, 64};
constexpr double kOutputInitScale = 0.1;
// Effective learning-rate multiplier of the pattern relative to the conv weights.
constexpr double kPatternGain = 20.0;
constexpr double kMaskInitBias = 3.0;
constexpr double kNoiseGain = 2.0;
}  // namespace

ResBlockDown::ResBlockDown(int in, int out, Rng& rng)
    : conv1_(in, out, 3, 2, 1, true, rng), conv2_(out, out, 3, 1, 1, true, rng), skip_(in, out, 1, 2, 0, false, rng) {}

ag::Var ResBlockDown::operator()(const ag::Var& x) const {
  ag::Var h = conv2_(ag::leaky_relu(conv1_(x), kSlope));
  return ag::leaky_relu(ag::add(h, skip_(x)), kSlope);
}

void ResBlockDown::collect(nn::ParamList& list, const std::string& prefix) {
  conv1_.collect(list, prefix + "conv1.");
  conv2_.collect(list, prefix + "conv2.");
  skip_.collect(list, prefix + "skip.");
}

ResBlockUp::ResBlockUp(int in, int out, Rng& rng)
    : conv1_(in, out, 3, 1, 1, true, rng), conv2_(out, out, 3, 1, 1, true, rng), skip_(in, out, 1, 1, 0, false, rng) {}

ag::Var ResBlockUp::operator()(const ag::Var& x) const {
  ag::Var u = ag::upsample_nearest2x(x);
  ag::Var h = conv2_(ag::leaky_relu(conv1_(u), kSlope));
  return ag::leaky_relu(ag::add(h, skip_(u)), kSlope);
}

void ResBlockUp::collect(nn::ParamList& list, const std::string& prefix) {
  conv1_.collect(list, prefix + "conv1.");
  conv2_.collect(list, prefix + "conv2.");
  skip_.collect(list, prefix + "skip.");
}

Generator::Generator(int memory_channels, int height, int width, Rng& rng) {
  if (height % 16 != 0 || width % 16 != 0 || height <= 0 || width <= 0) {
    throw std::invalid_argument("generator image size must be a positive multiple of 16");
  }
  if (memory_channels != kEncoderWidths.back()) {
    throw std::invalid_argument("generator encoder has " + std::to_string(kEncoderWidths.back()) +
                                " channels but memory has " + std::to_string(memory_channels));
  }
  stem_ = nn::Conv2d(3, kEncoderWidths.front(), 3, 1, 1, true, rng);
  int c = kEncoderWidths.front();
  for (int w : kEncoderWidths) {
    encoder_.emplace_back(c, w, rng);
    c = w;
  }
  fusion_ = nn::Conv2d(2 * c, c, 1, 1, 0, true, rng);
  for (int i = static_cast<int>(kEncoderWidths.size()) - 2; i >= -1; --i) {
    const int w = i >= 0 ? kEncoderWidths[static_cast<std::size_t>(i)] : kEncoderWidths.front();
    decoder_.emplace_back(c, w, rng);
    c = w;
  }
  out_ = nn::Conv2d(c + kEncoderWidths.front(), 3, 3, 1, 1, true, rng);
  // Start in the linear range of tanh; at full Kaiming scale most outputs saturate.
  for (auto& v : out_.weight.mutable_value().values()) v *= kOutputInitScale;
  pattern_ = ag::Var(Tensor({1, 3, height, width}, 0.0), true);
}

Generator::Output Generator::operator()(const ag::Var& x, const ag::Var& K, const ReadOptions& read) const {
  if (x.value().rank() != 4 || x.dim(1) != 3 || x.dim(2) % 16 != 0 || x.dim(3) % 16 != 0) {
    throw std::invalid_argument("generator expects B x 3 x H x W with H, W divisible by 16, got " +
                                shape_str(x.shape()));
  }
  if (x.dim(2) != pattern_.dim(2) || x.dim(3) != pattern_.dim(3)) {
    throw std::invalid_argument("generator built for " + std::to_string(pattern_.dim(2)) + "x" +
                                std::to_string(pattern_.dim(3)) + " images, got " + shape_str(x.shape()));
  }
  if (K.dim(1) != kEncoderWidths.back()) {
    throw std::invalid_argument("generator: memory channels " + std::to_string(K.dim(1)) + " vs encoder " +
                                std::to_string(kEncoderWidths.back()));
  }
  std::vector<ag::Var> acts;
  ag::Var stem = ag::leaky_relu(stem_(x), kSlope);
  ag::Var h = stem;
  for (const auto& block : encoder_) {
    h = block(h);
    acts.push_back(h);
  }
  Output o;
  o.encoded = h;
  MemoryRead r = memory_read(h, K.detach(), read);
  o.h_attack = r.h;
  o.weights = r.weights;
  h = fusion_(ag::concat1({o.encoded, o.h_attack}));
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    h = decoder_[i](h);
    const std::size_t skip = acts.size() - 2 - i;
    if (skips && i + 1 < decoder_.size()) h = ag::add(h, acts[skip]);
  }
  // Standardizing before tanh keeps the noise from collapsing to a saturated flat shift.
  ag::Var z = ag::add_batch_broadcast(out_(ag::concat1({h, stem})), ag::scale(pattern_, kPatternGain));
  o.noise = ag::tanh(ag::scale(ag::standardize_per_sample(z), kNoiseGain));
  return o;
}

void Generator::collect(nn::ParamList& list, const std::string& prefix) {
  stem_.collect(list, prefix + "stem.");
  for (std::size_t i = 0; i < encoder_.size(); ++i) encoder_[i].collect(list, prefix + "enc" + std::to_string(i) + ".");
  fusion_.collect(list, prefix + "fusion.");
  for (std::size_t i = 0; i < decoder_.size(); ++i) decoder_[i].collect(list, prefix + "dec" + std::to_string(i) + ".");
  out_.collect(list, prefix + "out.");
  list.add(prefix + "pattern", pattern_);
}

MaskPredictor::MaskPredictor(int feature_channels, Rng& rng) : projection(feature_channels, 1, 1, 1, 0, true, rng) {
  // Start with nearly the whole image eligible (sigmoid(3) ~ 0.95).
  projection.bias.mutable_value().fill(kMaskInitBias);
}

ag::Var MaskPredictor::operator()(const ag::Var& features, int height, int width) const {
  return ag::sigmoid(ag::resize_bilinear(projection(features), height, width));
}

void MaskPredictor::collect(nn::ParamList& list, const std::string& prefix) { projection.collect(list, prefix + "proj."); }

ag::Var compose_adversary(const ag::Var& x, const ag::Var& noise, const ag::Var& mask, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  if (x.shape() != noise.shape()) {
    throw std::invalid_argument("compose: image " + shape_str(x.shape()) + " vs noise " + shape_str(noise.shape()));
  }
  ag::Var delta = ag::clamp(ag::scale(ag::mul_channel_broadcast(mask, noise), epsilon), -epsilon, epsilon);
  return ag::clamp(ag::add(x, delta), 0.0, 1.0);
}

Tensor pixel_budget_multiplier(const Tensor& mask, double ratio, bool relaxed, double relax_factor) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("pixel ratio must be in (0, 1]");
  if (mask.rank() != 4 || mask.dim(1) != 1) {
    throw std::invalid_argument("pixel budget expects B x 1 x H x W, got " + shape_str(mask.shape()));
  }
  const int b = mask.dim(0);
  const std::size_t area = static_cast<std::size_t>(mask.dim(2)) * mask.dim(3);
  const auto keep = static_cast<std::size_t>(ratio * static_cast<double>(area));
  Tensor out(mask.shape(), relaxed ? relax_factor : 0.0);
  std::vector<std::size_t> order(area);
  for (int n = 0; n < b; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * area;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return mask[base + i] > mask[base + j]; });
    for (std::size_t k = 0; k < keep; ++k) out[base + order[k]] = 1.0;
  }
  return out;
}

ag::Var apply_pixel_budget(const ag::Var& mask, double ratio, bool relaxed, double relax_factor) {
  if (ratio == 1.0) {
    pixel_budget_multiplier(mask.value(), ratio, relaxed, relax_factor);  // shape checks
    return mask;
  }
  return ag::mul_const(mask, pixel_budget_multiplier(mask.value(), ratio, relaxed, relax_factor));
}

void AttackConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw std::invalid_argument("epsilon must be in (0, 1]");
  if (!(pixel_ratio > 0.0 && pixel_ratio <= 1.0)) throw std::invalid_argument("pixel ratio must be in (0, 1]");
  if (relax_factor < 0.0 || relax_factor > 1.0) throw std::invalid_argument("relax factor must be in [0, 1]");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
}

Attacker::Attacker(int feature_channels, int memory_channels, std::uint64_t seed, int height, int width) {
  Rng root = Rng(seed).substream("attacker");
  Rng g = root.substream("generator");
  generator = Generator(memory_channels, height, width, g);
  Rng m = root.substream("mask");
  mask = MaskPredictor(feature_channels, m);
}

AttackArtifacts Attacker::operator()(const ag::Var& x, const ag::Var& features, const ag::Var& K,
                                     const AttackConfig& config, const std::vector<int>* targets) const {
  config.validate();
  ReadOptions read;
  read.temperature = config.temperature;
  Tensor indicator;
  if (targets) {
    if (static_cast<int>(targets->size()) != x.dim(0)) throw std::invalid_argument("one target per image required");
    indicator = one_hot_indicator(*targets, K.dim(0));
    read.indicator = &indicator;
  }
  Generator::Output g = generator(x, K, read);
  AttackArtifacts a;
  a.noise = g.noise;
  a.h_attack = g.h_attack;
  a.weights = g.weights;
  a.epsilon = config.epsilon;
  a.mask = apply_pixel_budget(mask(features, x.dim(2), x.dim(3)), config.pixel_ratio, config.relaxed,
                              config.relax_factor);
  a.adversary = compose_adversary(x, a.noise, a.mask, config.epsilon);
  a.claimed_ids = targets ? *targets : dominant_prototype(g.weights.value(), x.dim(0));
  return a;
}

nn::ParamList Attacker::params() {
  nn::ParamList l;
  generator.collect(l);
  mask.collect(l);
  return l;
}

Tensor pgd_baseline(VictimModel& victim, const Tensor& x, const std::vector<int>& labels, const PgdParams& p) {
  if (p.steps < 1) throw std::invalid_argument("pgd needs at least one step");
  if (p.epsilon < 0.0) throw std::invalid_argument("epsilon must be >= 0");
  if (static_cast<int>(labels.size()) != x.dim(0)) throw std::invalid_argument("pgd: one label per image required");
  nn::ParamList params = victim.all_params();
  std::vector<bool> flags;
  for (const auto& prm : params.params) flags.push_back(prm.var->requires_grad());
  nn::set_requires_grad(params, false);

  Tensor adv = x;
  for (int s = 0; s < p.steps; ++s) {
    ag::Var xv(adv, true);
    ag::Var ce = loss::cross_entropy(victim.forward(xv, false).logits, labels);
    ag::backward(ce);
    const Tensor& g = xv.grad();
    for (std::size_t i = 0; i < adv.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      const double step = gi > 0.0 ? p.step_size : (gi < 0.0 ? -p.step_size : 0.0);
      const double v = std::clamp(adv[i] + step, x[i] - p.epsilon, x[i] + p.epsilon);
      adv[i] = std::clamp(v, 0.0, 1.0);
    }
  }
  for (std::size_t i = 0; i < flags.size(); ++i) params.params[i].var->set_requires_grad(flags[i]);
  return adv;
}

}  // namespace lcye
