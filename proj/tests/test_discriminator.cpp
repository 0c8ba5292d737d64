#include <cmath>

#include "doctest.h"
#include "lcye/discriminator.hpp"
#include "lcye/losses.hpp"
#include "lcye/ops.hpp"
#include "support/gradcheck.hpp"

using namespace lcye;
using lcye::testing::random_tensor;

TEST_CASE("pyramid dimensions") {
  Rng rng(1);
  MultiStageDiscriminator d(10, 64, 2);
  auto pyr = d.multi_stage_features(ag::Var(random_tensor({2, 3, 64, 32}, rng, 0.0, 1.0)));
  REQUIRE(pyr.size() == 4);
  CHECK(pyr[0].shape() == Shape{2, 64, 2, 1});
  CHECK(pyr[1].shape() == Shape{2, 64, 4, 2});
  CHECK(pyr[2].shape() == Shape{2, 64, 8, 4});
  CHECK(pyr[3].shape() == Shape{2, 64, 16, 8});
  CHECK_THROWS_AS(d.multi_stage_features(ag::Var(random_tensor({1, 3, 48, 32}, rng))), std::invalid_argument);
}

TEST_CASE("center crops") {
  Tensor img({1, 3, 64, 32});
  for (int c = 0; c < 3; ++c)
    for (int h = 0; h < 64; ++h)
      for (int w = 0; w < 32; ++w) img.at(0, c, h, w) = h >= 16 && h < 48 && w >= 8 && w < 24 ? 1.0 : 0.0;
  // The quarter-area crop is exactly the 32 x 16 central block.
  Tensor q = center_crop_resized(ag::Var(img), 0.25).value();
  CHECK(q.shape() == img.shape());
  for (double v : q.values()) CHECK(v == 1.0);
  CHECK(max_abs_diff(center_crop_resized(ag::Var(img), 1.0).value(), img) == 0.0);
  CHECK_THROWS_AS(center_crop_resized(ag::Var(img), 0.0), std::invalid_argument);
}

TEST_CASE("scores, normalization and memory isolation") {
  Rng rng(3);
  const int n = 10;
  MultiStageDiscriminator d(n, 64, 4);
  PrototypeMemory mem = init_memory(n, 64, 5);
  mem.K.set_requires_grad(true);
  const std::uint64_t k0 = [&] {
    nn::ParamList l;
    mem.collect(l);
    return nn::checksum(l);
  }();
  ag::Var img(random_tensor({3, 3, 64, 32}, rng, 0.0, 1.0));
  auto out = d(img, mem.K);
  REQUIRE(out.stage_logits.size() == 3);
  CHECK(out.h_d.shape() == Shape{3, 64, 16, 8});
  for (const auto& l : out.stage_logits) {
    CHECK(l.shape() == Shape{3, n + 1});
    Tensor p = ag::softmax_rows(l).value();
    for (int b = 0; b < 3; ++b) {
      double s = 0.0;
      for (int j = 0; j <= n; ++j) s += p.at(b, j);
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
  CHECK(d.fake_class() == n);

  auto again = d(img, mem.K);
  for (int s = 0; s < 3; ++s) CHECK(max_abs_diff(again.stage_logits[s].value(), out.stage_logits[s].value()) == 0.0);

  ag::backward(loss::gan_discriminator(out.stage_logits, {0, 1, 2}, out.stage_logits, n));
  CHECK(mem.K.grad().empty());
  nn::ParamList l;
  mem.collect(l);
  CHECK(nn::checksum(l) == k0);

  CHECK_THROWS_AS(d(img, ag::Var(init_memory(n, 32, 0).K)), std::invalid_argument);
  CHECK_THROWS_AS(d(img, ag::Var(init_memory(n + 1, 64, 0).K)), std::invalid_argument);
}

TEST_CASE("discriminator gradients match finite differences") {
  Rng rng(4);
  MultiStageDiscriminator d(3, 64, 6);
  ag::Var K(init_memory(3, 64, 1).K);
  Tensor img = random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
  auto f = [&](const std::vector<ag::Var>& in) {
    auto o = d(in[0], K);
    return loss::gan_generator(o.stage_logits, {1});
  };
  auto r = lcye::testing::grad_check(f, {img}, {true});
  CHECK(r.relative_error < 1e-4);
  CHECK(r.analytic_norm > 0.0);
}
