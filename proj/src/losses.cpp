#include "lcye/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "lcye/ops.hpp"

namespace lcye::loss {

MisRank parse_mis_rank(const std::string& s) {
  if (s == "cent") return MisRank::cent;
  if (s == "xent") return MisRank::xent;
  if (s == "etri") return MisRank::etri;
  if (s == "xent_etri") return MisRank::xent_etri;
  throw std::invalid_argument("unknown mis-ranking loss: " + s);
}

Perception parse_perception(const std::string& s) {
  if (s == "ssim") return Perception::ssim;
  if (s == "ms_ssim") return Perception::ms_ssim;
  throw std::invalid_argument("unknown perception loss: " + s);
}

std::string to_string(MisRank m) {
  switch (m) {
    case MisRank::cent: return "cent";
    case MisRank::xent: return "xent";
    case MisRank::etri: return "etri";
    case MisRank::xent_etri: return "xent_etri";
  }
  return "?";
}

std::string to_string(Perception p) { return p == Perception::ssim ? "ssim" : "ms_ssim"; }

namespace {
void check_labels(const ag::Var& logits, const std::vector<int>& labels, const char* what) {
  if (logits.value().rank() != 2 || static_cast<int>(labels.size()) != logits.dim(0)) {
    throw std::invalid_argument(std::string(what) + ": logits " + shape_str(logits.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || l >= logits.dim(1)) throw std::invalid_argument(std::string(what) + ": label out of range");
  }
}
}  // namespace

ag::Var cross_entropy(const ag::Var& logits, const std::vector<int>& labels) {
  check_labels(logits, labels, "cross_entropy");
  const int b = logits.dim(0), n = logits.dim(1);
  std::vector<std::size_t> idx(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) idx[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i) * n + labels[i];
  return ag::scale(ag::sum(ag::gather(ag::log_softmax_rows(logits), idx)), -1.0 / b);
}

ag::Var cent(const ag::Var& adv_logits, const std::vector<int>& labels) {
  return ag::scale(cross_entropy(adv_logits, labels), -1.0);
}

ag::Var xent(const ag::Var& adv_logits, const Tensor& clean_logits, double delta, const std::vector<int>* ground_truth,
             const std::vector<int>* pull) {
  if (adv_logits.shape() != clean_logits.shape() || clean_logits.rank() != 2) {
    throw std::invalid_argument("xent: adversarial and clean logits differ in shape");
  }
  const int b = clean_logits.dim(0), n = clean_logits.dim(1);
  if (n < 2) throw std::invalid_argument("xent: needs at least 2 classes");
  if (delta < 0.0 || delta > 1.0) throw std::invalid_argument("xent: delta must be in [0,1]");
  const std::vector<int> gt = ground_truth ? *ground_truth : argmax_rows(clean_logits);
  const std::vector<int> target = pull ? *pull : argmin_rows(clean_logits);
  if (static_cast<int>(gt.size()) != b || static_cast<int>(target.size()) != b) {
    throw std::invalid_argument("xent: label count mismatch");
  }
  Tensor w({b, n}, 0.0);
  const double v = 1.0 / (n - 1);
  for (int i = 0; i < b; ++i) {
    for (int k = 0; k < n; ++k) w.at(i, k) = delta * (k == gt[i] ? 0.0 : v);
    w.at(i, target[i]) += 1.0 - delta;
  }
  return ag::scale(ag::sum(ag::mul_const(ag::log_softmax_rows(adv_logits), w)), -1.0 / b);
}

namespace {
// Indices (anchor, partner) of the hardest pair per anchor.
struct Mining {
  std::vector<std::size_t> first, second;
};

// For each anchor picks argmax over `max_same ? same : diff` and argmin over
// the other set, using the values of d.
Mining mine(const Tensor& d, const std::vector<int>& labels, bool max_same) {
  const int b = static_cast<int>(labels.size());
  Mining m;
  for (int a = 0; a < b; ++a) {
    int same = -1, diff = -1;
    for (int j = 0; j < b; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (same < 0 || (max_same ? d.at(a, j) > d.at(a, same) : d.at(a, j) < d.at(a, same))) same = j;
      } else {
        if (diff < 0 || (max_same ? d.at(a, j) < d.at(a, diff) : d.at(a, j) > d.at(a, diff))) diff = j;
      }
    }
    if (same < 0 || diff < 0) continue;
    const std::size_t row = static_cast<std::size_t>(a) * b;
    m.first.push_back(row + static_cast<std::size_t>(max_same ? same : diff));
    m.second.push_back(row + static_cast<std::size_t>(max_same ? diff : same));
  }
  return m;
}

void check_embeddings(const ag::Var& e, const std::vector<int>& labels, const char* what) {
  if (e.value().rank() != 2 || e.dim(0) != static_cast<int>(labels.size())) {
    throw std::invalid_argument(std::string(what) + ": embeddings " + shape_str(e.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
}
}  // namespace

Term etri(const ag::Var& embeddings, const std::vector<int>& labels, double margin) {
  check_embeddings(embeddings, labels, "etri");
  ag::Var d = ag::pairwise_sq_dist(embeddings);
  // Hardest in the adversarial sense: farthest different-id, nearest same-id.
  Mining m = mine(d.value(), labels, false);
  if (m.first.empty()) return {ag::Var(Tensor({1}, 0.0)), true};
  ag::Var far_diff = ag::gather(d, m.first), near_same = ag::gather(d, m.second);
  return {ag::sum(ag::relu(ag::add_scalar(ag::sub(far_diff, near_same), margin))), false};
}

Term batch_hard_triplet(const ag::Var& embeddings, const std::vector<int>& labels, double margin) {
  check_embeddings(embeddings, labels, "batch_hard_triplet");
  ag::Var d = ag::sqrt(ag::add_scalar(ag::pairwise_sq_dist(embeddings), 1e-12));
  Mining m = mine(d.value(), labels, true);
  if (m.first.empty()) return {ag::Var(Tensor({1}, 0.0)), true};
  ag::Var pos = ag::gather(d, m.first), neg = ag::gather(d, m.second);
  return {ag::mean(ag::relu(ag::add_scalar(ag::sub(pos, neg), margin))), false};
}

Term mimic_loss(const ag::Var& logits, const ag::Var& embeddings, const std::vector<int>& labels, double beta1,
                double beta2, double margin) {
  Term tri = batch_hard_triplet(embeddings, labels, margin);
  ag::Var total = ag::add(ag::scale(cross_entropy(logits, labels), beta1), ag::scale(tri.value, beta2));
  return {total, tri.degenerate};
}

namespace {
Tensor gaussian_window(int size, double sigma) {
  Tensor k({size, size});
  std::vector<double> g(static_cast<std::size_t>(size));
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    const double x = i - (size - 1) / 2.0;
    g[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * sigma * sigma));
    s += g[static_cast<std::size_t>(i)];
  }
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) k.at(i, j) = g[i] * g[j] / (s * s);
  return k;
}

struct SsimMaps {
  ag::Var luminance;
  ag::Var contrast_structure;
};

SsimMaps ssim_maps(const ag::Var& x, const ag::Var& y, const SsimOptions& o) {
  if (x.shape() != y.shape() || x.value().rank() != 4) throw std::invalid_argument("ssim: shape mismatch");
  if (x.dim(2) < o.window || x.dim(3) < o.window) {
    throw std::invalid_argument("ssim: image " + shape_str(x.shape()) + " smaller than window " +
                                std::to_string(o.window));
  }
  const Tensor k = gaussian_window(o.window, o.sigma);
  const double c1 = o.k1 * o.k1, c2 = o.k2 * o.k2;
  ag::Var mx = ag::filter2d_valid(x, k), my = ag::filter2d_valid(y, k);
  ag::Var mx2 = ag::square(mx), my2 = ag::square(my), mxy = ag::mul(mx, my);
  ag::Var sxx = ag::sub(ag::filter2d_valid(ag::square(x), k), mx2);
  ag::Var syy = ag::sub(ag::filter2d_valid(ag::square(y), k), my2);
  ag::Var sxy = ag::sub(ag::filter2d_valid(ag::mul(x, y), k), mxy);
  ag::Var l = ag::div(ag::add_scalar(ag::scale(mxy, 2.0), c1), ag::add_scalar(ag::add(mx2, my2), c1));
  ag::Var cs = ag::div(ag::add_scalar(ag::scale(sxy, 2.0), c2), ag::add_scalar(ag::add(sxx, syy), c2));
  return {l, cs};
}

// B x C x H x W map -> (B*C) spatial means.
ag::Var channel_means(const ag::Var& map) {
  const int bc = map.dim(0) * map.dim(1);
  return ag::mean_per_sample(ag::reshape(map, {bc, map.dim(2) * map.dim(3)}));
}

ag::Var ms_ssim_channels(ag::Var x, ag::Var y, int scales, const SsimOptions& o) {
  if (scales < 1) throw std::invalid_argument("ms_ssim: scales must be >= 1");
  const int feasible = max_ms_ssim_scales(x.dim(2), x.dim(3), o.window);
  if (scales > feasible) {
    throw std::invalid_argument("ms_ssim: " + std::to_string(scales) + " scales do not fit " + shape_str(x.shape()) +
                                "; at most " + std::to_string(feasible));
  }
  const auto w = ms_ssim_weights(scales);
  ag::Var prod;
  for (int s = 0; s < scales; ++s) {
    SsimMaps m = ssim_maps(x, y, o);
    ag::Var term = s + 1 < scales ? channel_means(m.contrast_structure)
                                  : channel_means(ag::mul(m.luminance, m.contrast_structure));
    term = ag::pow_scalar(ag::relu(term), w[static_cast<std::size_t>(s)]);
    prod = prod.defined() ? ag::mul(prod, term) : term;
    if (s + 1 < scales) {
      x = ag::avg_pool2x(x);
      y = ag::avg_pool2x(y);
    }
  }
  return prod;
}

Tensor per_image(const Tensor& channel_values, int batch) {
  const int c = static_cast<int>(channel_values.size()) / batch;
  Tensor out({batch}, 0.0);
  for (int b = 0; b < batch; ++b) {
    for (int k = 0; k < c; ++k) out[b] += channel_values[static_cast<std::size_t>(b) * c + k];
    out[b] /= c;
  }
  return out;
}
}  // namespace

ag::Var ssim(const ag::Var& x, const ag::Var& y, const SsimOptions& options) {
  SsimMaps m = ssim_maps(x, y, options);
  return ag::mean(ag::mul(m.luminance, m.contrast_structure));
}

Tensor ssim_per_image(const Tensor& x, const Tensor& y, const SsimOptions& options) {
  ag::NoGradGuard guard;
  SsimMaps m = ssim_maps(ag::Var(x), ag::Var(y), options);
  return per_image(channel_means(ag::mul(m.luminance, m.contrast_structure)).value(), x.dim(0));
}

std::vector<double> ms_ssim_weights(int scales) {
  static const double standard[] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  if (scales < 1 || scales > 5) throw std::invalid_argument("ms_ssim: scales must be in [1,5]");
  double total = 0.0;
  for (int i = 0; i < scales; ++i) total += standard[i];
  std::vector<double> w;
  for (int i = 0; i < scales; ++i) w.push_back(standard[i] / total);
  return w;
}

int max_ms_ssim_scales(int height, int width, int window) {
  int s = 0;
  while (height >= window && width >= window && s < 5) {
    ++s;
    if (height % 2 || width % 2) break;
    height /= 2;
    width /= 2;
  }
  return s;
}

ag::Var ms_ssim(const ag::Var& x, const ag::Var& y, int scales, const SsimOptions& options) {
  return ag::mean(ms_ssim_channels(x, y, scales, options));
}

Tensor ms_ssim_per_image(const Tensor& x, const Tensor& y, int scales, const SsimOptions& options) {
  ag::NoGradGuard guard;
  return per_image(ms_ssim_channels(ag::Var(x), ag::Var(y), scales, options).value(), x.dim(0));
}

ag::Var gan_discriminator(const std::vector<ag::Var>& real_stage_logits, const std::vector<int>& real_labels,
                          const std::vector<ag::Var>& fake_stage_logits, int fake_class) {
  if (real_stage_logits.empty() || real_stage_logits.size() != fake_stage_logits.size()) {
    throw std::invalid_argument("gan_discriminator: stage count mismatch");
  }
  ag::Var total;
  for (std::size_t s = 0; s < real_stage_logits.size(); ++s) {
    const std::vector<int> fake(static_cast<std::size_t>(fake_stage_logits[s].dim(0)), fake_class);
    ag::Var t = ag::add(cross_entropy(real_stage_logits[s], real_labels), cross_entropy(fake_stage_logits[s], fake));
    total = total.defined() ? ag::add(total, t) : t;
  }
  return total;
}

ag::Var gan_generator(const std::vector<ag::Var>& fake_stage_logits, const std::vector<int>& claimed_ids) {
  if (fake_stage_logits.empty()) throw std::invalid_argument("gan_generator: no stages");
  if (claimed_ids.empty()) throw std::invalid_argument("gan_generator: missing claimed ids");
  ag::Var total;
  for (const auto& logits : fake_stage_logits) {
    ag::Var t = cross_entropy(logits, claimed_ids);
    total = total.defined() ? ag::add(total, t) : t;
  }
  return total;
}

namespace {
void require_finite(const ag::Var& v, const char* name) {
  if (!v.defined()) throw std::invalid_argument(std::string("loss part missing: ") + name);
  if (!std::isfinite(v.item())) throw std::runtime_error(std::string("non-finite loss part: ") + name);
}
}  // namespace

ag::Var attack_total(const AttackParts& parts, const LossWeights& w) {
  require_finite(parts.mis_rank, "mis_rank");
  require_finite(parts.gan, "gan");
  require_finite(parts.perception, "perception");
  return ag::add(ag::add(ag::scale(parts.mis_rank, w.alpha1), ag::scale(parts.gan, w.alpha2)),
                 ag::scale(parts.perception, w.alpha3));
}

ag::Var mimic_total(const ag::Var& ce, const ag::Var& tri, const LossWeights& w) {
  require_finite(ce, "cross_entropy");
  require_finite(tri, "triplet");
  return ag::add(ag::scale(ce, w.beta1), ag::scale(tri, w.beta2));
}

}  // namespace lcye::loss
