#include <cmath>

#include "doctest.h"
#include "lcye/losses.hpp"
#include "lcye/ops.hpp"
#include "support/gradcheck.hpp"

using namespace lcye;
using lcye::testing::grad_check;
using lcye::testing::random_tensor;

namespace {
constexpr double kFdTol = 1e-4;

ag::Var V(Tensor t) { return ag::Var(std::move(t)); }

// Plain-loop log-softmax, independent of the autograd op.
std::vector<double> log_softmax_row(const Tensor& m, int r) {
  double mx = -1e300;
  for (int c = 0; c < m.dim(1); ++c) mx = std::max(mx, m.at(r, c));
  double s = 0.0;
  for (int c = 0; c < m.dim(1); ++c) s += std::exp(m.at(r, c) - mx);
  std::vector<double> out;
  for (int c = 0; c < m.dim(1); ++c) out.push_back(m.at(r, c) - mx - std::log(s));
  return out;
}
}  // namespace

TEST_CASE("cent") {
  Tensor uniform({2, 4}, 0.3);
  CHECK(loss::cent(V(uniform), {0, 3}).item() == doctest::Approx(-std::log(4.0)).epsilon(1e-12));
  // Confidence on a wrong class drives the loss toward -inf; on the true class toward 0.
  Tensor confident({1, 4}, {9.0, 0.0, 0.0, 0.0});
  CHECK(loss::cent(V(confident), {1}).item() < loss::cent(V(Tensor({1, 4}, 0.0)), {1}).item());
  CHECK(loss::cent(V(confident), {0}).item() > loss::cent(V(Tensor({1, 4}, 0.0)), {0}).item());
  Rng rng(1);
  Tensor l = random_tensor({3, 5}, rng), shifted = l;
  for (auto& v : shifted.values()) v += 7.25;
  CHECK(loss::cent(V(l), {1, 2, 4}).item() == doctest::Approx(loss::cent(V(shifted), {1, 2, 4}).item()).epsilon(1e-12));
}

TEST_CASE("xent special cases") {
  Tensor uniform({1, 4}, 0.0);
  Rng rng(2);
  Tensor clean = random_tensor({1, 4}, rng);
  CHECK(loss::xent(V(uniform), clean, 1.0).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Tensor adv = random_tensor({3, 5}, rng), clean3 = random_tensor({3, 5}, rng);
  const auto lo = argmin_rows(clean3), hi = argmax_rows(clean3);
  double indicator = 0.0, smooth = 0.0;
  for (int b = 0; b < 3; ++b) {
    auto ls = log_softmax_row(adv, b);
    indicator -= ls[lo[b]];
    for (int k = 0; k < 5; ++k)
      if (k != hi[b]) smooth -= ls[k] / 4.0;
  }
  CHECK(loss::xent(V(adv), clean3, 0.0).item() == doctest::Approx(indicator / 3).epsilon(1e-12));
  CHECK(loss::xent(V(adv), clean3, 1.0).item() == doctest::Approx(smooth / 3).epsilon(1e-12));
  CHECK(loss::xent(V(adv), clean3, 0.3).item() ==
        doctest::Approx((0.7 * indicator + 0.3 * smooth) / 3).epsilon(1e-12));
  CHECK_THROWS_AS(loss::xent(V(Tensor({1, 1}, 0.0)), Tensor({1, 1}, 0.0), 0.3), std::invalid_argument);
}

TEST_CASE("etri") {
  std::vector<int> labels{0, 0, 1, 1};
  Tensor same({4, 3}, 0.5);
  auto t = loss::etri(V(same), labels, 0.3);
  CHECK_FALSE(t.degenerate);
  CHECK(t.value.item() == doctest::Approx(4 * 0.3).epsilon(1e-12));

  // Same-id pairs at squared distance 36, every cross pair at 18: each anchor
  // gives hinge(18 - 36 + 0.3) = 0.
  Tensor far({4, 2}, {-3.0, 0.0, 3.0, 0.0, 0.0, -3.0, 0.0, 3.0});
  CHECK(loss::etri(V(far), {0, 0, 1, 1}, 0.3).value.item() == 0.0);
  // One anchor active: 1-D points 0, 4 (id 0) and 1 (id 1).
  // anchor 0: hinge(1 - 16 + .3) = 0; anchor 4: hinge(9 - 16 + .3) = 0; anchor 1 has no partner.
  Tensor line({3, 1}, {0.0, 4.0, 1.0});
  CHECK(loss::etri(V(line), {0, 0, 1}, 0.3).value.item() == 0.0);
  CHECK(loss::etri(V(line), {0, 0, 1}, 10.0).value.item() == doctest::Approx(9 - 16 + 10.0));  // anchor 0 stays at 0
  // Permutation invariance.
  Rng rng(3);
  Tensor e = random_tensor({6, 3}, rng);
  std::vector<int> lab{0, 1, 2, 0, 1, 2};
  std::vector<int> perm{5, 3, 1, 0, 4, 2};
  std::vector<int> plab;
  for (int p : perm) plab.push_back(lab[p]);
  CHECK(loss::etri(V(e), lab, 0.3).value.item() ==
        doctest::Approx(loss::etri(V(gather_batch(e, perm)), plab, 0.3).value.item()).epsilon(1e-12));
  CHECK(loss::etri(V(e), {0, 1, 2, 3, 4, 5}, 0.3).degenerate);
  CHECK(loss::etri(V(e), lab, 0.3).value.item() >= 0.0);
}

TEST_CASE("batch-hard triplet and mimic loss") {
  Tensor same({4, 3}, 0.5);
  auto t = loss::batch_hard_triplet(V(same), {0, 0, 1, 1}, 0.3);
  CHECK(t.value.item() == doctest::Approx(0.3).epsilon(1e-12));
  Tensor uniform({4, 4}, 0.0);
  CHECK(loss::mimic_loss(V(uniform), V(same), {0, 0, 1, 1}, 1.0, 0.0, 0.3).value.item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(loss::mimic_loss(V(uniform), V(same), {0, 0, 1, 1}, 0.0, 0.0, 0.3).value.item() == 0.0);
  auto single = loss::mimic_loss(V(uniform), V(same), {1, 1, 1, 1}, 1.0, 1.0, 0.3);
  CHECK(single.degenerate);
  CHECK(single.value.item() == doctest::Approx(std::log(4.0)));
}

TEST_CASE("ssim and ms_ssim basics") {
  Rng rng(4);
  Tensor x = random_tensor({2, 3, 32, 32}, rng, 0.0, 1.0);
  CHECK(loss::ms_ssim(V(x), V(x)).item() == 1.0);
  CHECK(loss::ssim(V(x), V(x)).item() == 1.0);

  Tensor bin({1, 1, 16, 16});
  for (std::size_t i = 0; i < bin.size(); ++i) bin[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  Tensor inv = bin;
  for (auto& v : inv.values()) v = 1.0 - v;
  CHECK(loss::ssim(V(bin), V(inv)).item() < loss::ssim(V(bin), V(bin)).item());
  CHECK(loss::ssim(V(bin), V(inv)).item() < 0.0);

  Tensor y = random_tensor({2, 3, 32, 32}, rng, 0.0, 1.0);
  CHECK(loss::ssim(V(x), V(y)).item() == doctest::Approx(loss::ssim(V(y), V(x)).item()).epsilon(1e-12));

  // One scale with luminance folded in is plain SSIM when positive.
  Tensor noisy = x;
  for (auto& v : noisy.values()) v = std::clamp(v + rng.normal(0.0, 0.05), 0.0, 1.0);
  CHECK(loss::ms_ssim(V(x), V(noisy), 1).item() == doctest::Approx(loss::ssim(V(x), V(noisy)).item()).epsilon(1e-6));

  auto w = loss::ms_ssim_weights(3);
  CHECK(w[0] + w[1] + w[2] == doctest::Approx(1.0));
  CHECK(w[1] / w[0] == doctest::Approx(0.2856 / 0.0448));
  CHECK(loss::max_ms_ssim_scales(64, 32, 7) == 3);
  CHECK_THROWS_WITH(loss::ms_ssim(V(x), V(x), 4), doctest::Contains("at most 3"));

  Tensor per = loss::ms_ssim_per_image(x, noisy);
  CHECK(per.size() == 2);
  CHECK((per[0] + per[1]) / 2 == doctest::Approx(loss::ms_ssim(V(x), V(noisy)).item()).epsilon(1e-12));
}

TEST_CASE("GAN terms") {
  const int n = 5;
  std::vector<ag::Var> uniform(3, V(Tensor({2, n + 1}, 0.0)));
  const double ln = std::log(n + 1.0);
  CHECK(loss::gan_generator(uniform, {1, 2}).item() == doctest::Approx(3 * ln).epsilon(1e-12));
  CHECK(loss::gan_discriminator(uniform, {0, 4}, uniform, n).item() == doctest::Approx(6 * ln).epsilon(1e-12));

  Rng rng(5);
  std::vector<ag::Var> stages;
  double independent = 0.0;
  for (int s = 0; s < 3; ++s) {
    stages.push_back(V(random_tensor({2, n + 1}, rng)));
    independent += loss::cross_entropy(stages.back(), {3, 0}).item();
  }
  CHECK(loss::gan_generator(stages, {3, 0}).item() == doctest::Approx(independent).epsilon(1e-12));

  Tensor lo({1, n + 1}, 0.0), hi({1, n + 1}, 0.0);
  hi.at(0, 2) = 2.0;
  CHECK(loss::gan_generator({V(hi)}, {2}).item() < loss::gan_generator({V(lo)}, {2}).item());
  CHECK_THROWS_AS(loss::gan_generator(stages, {}), std::invalid_argument);
}

TEST_CASE("totals") {
  loss::LossWeights w;
  loss::AttackParts p{V(Tensor({1}, 2.0)), V(Tensor({1}, 3.0)), V(Tensor({1}, 0.5))};
  CHECK(loss::attack_total(p, w).item() == doctest::Approx(5.5));
  loss::LossWeights zero{0, 0, 0, 0, 0, 0.3, 0.3};
  CHECK(loss::attack_total(p, zero).item() == 0.0);
  CHECK(loss::mimic_total(V(Tensor({1}, 2.0)), V(Tensor({1}, 1.0)), w).item() == doctest::Approx(3.0));
  p.gan = V(Tensor({1}, std::nan("")));
  CHECK_THROWS_WITH(loss::attack_total(p, w), doctest::Contains("gan"));
  CHECK(loss::parse_mis_rank("xent_etri") == loss::MisRank::xent_etri);
  CHECK_THROWS_AS(loss::parse_perception("l2"), std::invalid_argument);
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(6);
  Tensor adv = random_tensor({4, 5}, rng), clean = random_tensor({4, 5}, rng);
  std::vector<int> labels{0, 0, 1, 1};
  auto check = [&](auto fn, const std::vector<Tensor>& in) {
    std::vector<bool> d(in.size(), true);
    auto r = grad_check(fn, in, d);
    CHECK(r.relative_error < kFdTol);
    CHECK(r.analytic_norm > 0.0);
  };
  check([&](const std::vector<ag::Var>& v) { return loss::cent(v[0], {1, 2, 3, 4}); }, {adv});
  for (double delta : {0.0, 0.3, 1.0})
    check([&](const std::vector<ag::Var>& v) { return loss::xent(v[0], clean, delta); }, {adv});
  Tensor emb = random_tensor({4, 3}, rng);
  check([&](const std::vector<ag::Var>& v) { return loss::etri(v[0], labels, 5.0).value; }, {emb});
  check([&](const std::vector<ag::Var>& v) { return loss::batch_hard_triplet(v[0], labels, 5.0).value; }, {emb});

  Tensor x = random_tensor({1, 2, 8, 8}, rng, 0.2, 0.8), y = x;
  for (auto& v : y.values()) v += rng.uniform(-0.1, 0.1);
  loss::SsimOptions small;
  small.window = 3;
  check([&](const std::vector<ag::Var>& v) { return loss::ssim(v[0], v[1], small); }, {x, y});
  check([&](const std::vector<ag::Var>& v) { return loss::ms_ssim(v[0], v[1], 2, small); }, {x, y});

  std::vector<Tensor> stage_logits{random_tensor({2, 4}, rng), random_tensor({2, 4}, rng), random_tensor({2, 4}, rng)};
  check([&](const std::vector<ag::Var>& v) { return loss::gan_generator(v, {1, 2}); }, stage_logits);
  std::vector<Tensor> both = stage_logits;
  for (int s = 0; s < 3; ++s) both.push_back(random_tensor({2, 4}, rng));
  check(
      [&](const std::vector<ag::Var>& v) {
        return loss::gan_discriminator({v[0], v[1], v[2]}, {0, 2}, {v[3], v[4], v[5]}, 3);
      },
      both);
}
