#pragma once

#include <string>
#include <vector>

#include "lcye/autograd.hpp"

namespace lcye::loss {

struct LossWeights {
  double alpha1 = 1.0;  // mis-ranking
  double alpha2 = 1.0;  // GAN
  double alpha3 = 1.0;  // visual perception
  double beta1 = 1.0;   // cross-entropy
  double beta2 = 1.0;   // triplet
  double delta = 0.3;   // xent smoothing mix
  double margin = 0.3;  // triplet margin
};

enum class MisRank { cent, xent, etri, xent_etri };
enum class Perception { ssim, ms_ssim };

MisRank parse_mis_rank(const std::string& s);
Perception parse_perception(const std::string& s);
std::string to_string(MisRank m);
std::string to_string(Perception p);

/// A loss value plus a flag set when the batch could not form the term.
struct Term {
  ag::Var value;
  bool degenerate = false;
};

/// Mean cross-entropy of B x N logits against class labels.
ag::Var cross_entropy(const ag::Var& logits, const std::vector<int>& labels);

/// Negated cross-entropy toward the true labels.
ag::Var cent(const ag::Var& adv_logits, const std::vector<int>& labels);

/// Smoothed least-likely-class loss, averaged over the batch:
/// -sum_n log_softmax(adv)_n * ((1 - delta) [n = pull] + delta v_n), where v is
/// 1/(N-1) off the ground-truth class and 0 on it. `pull` defaults to the
/// clean argmin and `ground_truth` to the clean argmax.
ag::Var xent(const ag::Var& adv_logits, const Tensor& clean_logits, double delta,
             const std::vector<int>* ground_truth = nullptr, const std::vector<int>* pull = nullptr);

/// Adversarial triplet on squared distances, summed over anchors:
/// hinge(max_diff d^2 - min_same d^2 + margin). Anchors without a same-id
/// partner or a different-id sample are skipped.
Term etri(const ag::Var& embeddings, const std::vector<int>& labels, double margin);

/// Batch-hard triplet on Euclidean distances, averaged over valid anchors.
Term batch_hard_triplet(const ag::Var& embeddings, const std::vector<int>& labels, double margin);

/// beta1 * CE + beta2 * batch-hard triplet.
Term mimic_loss(const ag::Var& logits, const ag::Var& embeddings, const std::vector<int>& labels, double beta1,
                double beta2, double margin);

struct SsimOptions {
  int window = 7;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM over the batch with a Gaussian window and valid filtering.
ag::Var ssim(const ag::Var& x, const ag::Var& y, const SsimOptions& options = {});

/// Per-image SSIM, B values.
Tensor ssim_per_image(const Tensor& x, const Tensor& y, const SsimOptions& options = {});

/// Standard multi-scale weights truncated to `scales` and renormalized.
std::vector<double> ms_ssim_weights(int scales);

/// Largest scale count whose coarsest level still fits the window.
int max_ms_ssim_scales(int height, int width, int window);

/// Multi-scale SSIM: contrast-structure at every scale but the last, full SSIM
/// at the last, combined per image and channel with the given exponents.
ag::Var ms_ssim(const ag::Var& x, const ag::Var& y, int scales = 3, const SsimOptions& options = {});
Tensor ms_ssim_per_image(const Tensor& x, const Tensor& y, int scales = 3, const SsimOptions& options = {});

/// Discriminator objective, summed over stages: real images toward their
/// identities, adversaries toward the fake class.
ag::Var gan_discriminator(const std::vector<ag::Var>& real_stage_logits, const std::vector<int>& real_labels,
                          const std::vector<ag::Var>& fake_stage_logits, int fake_class);

/// Generator objective, summed over stages: adversaries toward the claimed ids.
ag::Var gan_generator(const std::vector<ag::Var>& fake_stage_logits, const std::vector<int>& claimed_ids);

struct AttackParts {
  ag::Var mis_rank;
  ag::Var gan;
  ag::Var perception;
};

/// alpha1 * L_mr + alpha2 * L_GAN + alpha3 * L_VP. Throws naming the first
/// non-finite part.
ag::Var attack_total(const AttackParts& parts, const LossWeights& w);

/// beta1 * L_ce + beta2 * L_tri.
ag::Var mimic_total(const ag::Var& ce, const ag::Var& tri, const LossWeights& w);

}  // namespace lcye::loss
