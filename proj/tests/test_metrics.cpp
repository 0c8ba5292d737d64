#include <cmath>
#include <sstream>

#include "doctest.h"
#include "lcye/metrics.hpp"
#include "lcye/rng.hpp"
#include "support/ranking_oracle.hpp"

using namespace lcye;
using namespace lcye::metrics;

TEST_CASE("distance matrix") {
  Tensor a({2, 2}, {0.0, 0.0, 3.0, 4.0});
  Tensor d = distance_matrix(a, a);
  CHECK(d.at(0, 0) == 0.0);
  CHECK(d.at(0, 1) == doctest::Approx(5.0));
  CHECK(d.at(1, 0) == d.at(0, 1));
  CHECK_THROWS_AS(distance_matrix(a, Tensor({1, 3}, 0.0)), std::invalid_argument);
}

TEST_CASE("hand-computed rankings") {
  // Single query, gallery ranked [neg, pos].
  Tensor d({1, 2}, {0.1, 0.2});
  CHECK(cmc_rank_k(d, {1}, {2, 1}, {0}, {1, 1}, 1) == 0.0);
  CHECK(cmc_rank_k(d, {1}, {2, 1}, {0}, {1, 1}, 2) == 100.0);
  // Ranking [pos, neg, pos].
  Tensor d3({1, 3}, {0.1, 0.2, 0.3});
  CHECK(mean_ap(d3, {1}, {1, 2, 1}, {0}, {1, 1, 1}) == doctest::Approx(100.0 * (1.0 + 2.0 / 3.0) / 2.0));
  CHECK(mean_ap(d3, {1}, {1, 2, 1}, {0}, {1, 1, 1}) == doctest::Approx(83.3333).epsilon(1e-5));
  // Exact cross-camera duplicate.
  Tensor d0({1, 3}, {0.5, 0.0, 0.7});
  CHECK(cmc_rank_k(d0, {4}, {3, 4, 5}, {0}, {1, 1, 1}, 1) == 100.0);
  CHECK(mean_ap(Tensor({1, 3}, {0.1, 0.2, 0.3}), {1}, {1, 1, 2}, {0}, {1, 2, 1}) == 100.0);
}

TEST_CASE("same-id same-camera entries are ignored") {
  Tensor d({1, 3}, {0.1, 0.2, 0.3});
  auto base = evaluate_ranking(d, {1}, {2, 1, 1}, {0}, {1, 1, 1});
  Tensor d_junk({1, 5}, {0.05, 0.1, 0.15, 0.2, 0.3});
  auto junk = evaluate_ranking(d_junk, {1}, {1, 2, 1, 1, 1}, {0}, {0, 1, 0, 1, 1});
  CHECK(junk.map == base.map);
  CHECK(junk.rank(1) == base.rank(1));
  CHECK(junk.rank(2) == base.rank(2));

  auto none = evaluate_ranking(Tensor({1, 1}, {0.1}), {1}, {1}, {0}, {0});
  CHECK(none.excluded_queries == 1);
  CHECK(none.valid_queries == 0);
}

TEST_CASE("ranking agrees with the sort-free oracle on random instances") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
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
    auto r = evaluate_ranking(d, qi, gi, qc, gc);
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
    CHECK(r.valid_queries == valid);
    if (valid == 0) continue;
    CHECK(r.map == doctest::Approx(100.0 * ap / valid).epsilon(1e-12));
    for (int k = 1; k <= ng; ++k) {
      CHECK(r.rank(k) == doctest::Approx(100.0 * hits[static_cast<std::size_t>(k - 1)] / valid).epsilon(1e-12));
      if (k > 1) CHECK(r.rank(k) >= r.rank(k - 1));
    }
  }
}

TEST_CASE("target consistency") {
  Tensor e({4, 1}, {0.0, 0.1, 5.0, 5.1});
  auto r = target_consistency(e, {7, 7, 9, 9});
  CHECK(r.percentage == 100.0);
  CHECK(r.used == 4);
  auto single = target_consistency(e, {7, 7, 9, 8});
  CHECK(single.excluded == 2);
  CHECK(single.percentage == 100.0);

  // Random embeddings hover around the analytic chance level.
  Rng rng(5);
  const int gamma = 4, n = 10;
  double mean = 0.0;
  const int trials = 400;
  for (int t = 0; t < trials; ++t) {
    Tensor x({gamma * n, 8});
    for (auto& v : x.values()) v = rng.normal();
    std::vector<int> targets;
    for (int i = 0; i < gamma * n; ++i) targets.push_back(i / gamma);
    mean += target_consistency(x, targets).percentage / trials;
  }
  const double chance = consistency_chance(gamma, n);
  CHECK(chance == doctest::Approx(100.0 * 3 / 39));
  // Standard error of the mean is about sqrt(p(1-p)/(40*400)) ~ 0.2 points.
  CHECK(std::abs(mean - chance) < 1.5);

  Tensor ref({2, 1}, {0.0, 5.0});
  CHECK(target_consistency_reference(e, {7, 7, 9, 9}, ref, {7, 9}).percentage == 100.0);
  CHECK(target_consistency_reference(e, {9, 9, 9, 9}, ref, {7, 9}).percentage == 50.0);
}

TEST_CASE("perceptibility report") {
  Rng rng(6);
  Tensor clean({2, 3, 64, 32});
  for (auto& v : clean.values()) v = rng.uniform(0.1, 0.8);
  auto same = perceptibility_report(clean, clean);
  CHECK(same.mean_ssim == 1.0);
  CHECK(same.mean_ms_ssim == 1.0);
  CHECK(same.mean_linf == 0.0);
  Tensor shifted = clean;
  for (auto& v : shifted.values()) v += 16.0 / 255.0;
  CHECK(perceptibility_report(clean, shifted).mean_linf == doctest::Approx(16.0 / 255.0).epsilon(1e-12));

  Tensor a({1, 1, 2, 2}, {0.0, 0.0, 0.0, 0.0}), b({1, 1, 2, 2}, {0.1, 0.2, 0.0, 0.2});
  CHECK(perceptibility_report(a, b).mean_l2 == doctest::Approx(std::sqrt(0.01 + 0.04 + 0.04)).epsilon(1e-12));
  CHECK_THROWS_AS(perceptibility_report(a, clean), std::invalid_argument);
}

TEST_CASE("report validation and CSV schema") {
  EvalReport r;
  r.rank1 = 50;
  r.rank5 = 70;
  r.rank10 = 90;
  r.map = 40;
  r.metadata["config_hash"] = "deadbeef";
  r.validate();
  CHECK(csv_header() ==
        "schema_version,experiment,cell,rank1,rank5,rank10,map,target_consistency,mean_ssim,mean_ms_ssim,mean_linf,"
        "mean_l2,config_hash");
  CHECK(csv_row("eps", "eps=16", r) ==
        "1,eps,eps=16,50.000000,70.000000,90.000000,40.000000,,0.000000,0.000000,0.000000,0.000000,deadbeef");
  auto j = r.to_json();
  CHECK(j["schema_version"] == 1);
  CHECK(j["target_consistency"].is_null());
  r.rank5 = 10;
  CHECK_THROWS(r.validate());
}
