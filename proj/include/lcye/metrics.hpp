#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lcye/tensor.hpp"

namespace lcye::metrics {

/// |Q| x |G| Euclidean distances between embedding rows.
Tensor distance_matrix(const Tensor& query, const Tensor& gallery);

struct RankingResult {
  std::vector<double> cmc;  // cmc[k-1] = Rank-k percentage
  double map = 0.0;         // percentage
  int valid_queries = 0;
  int excluded_queries = 0;  // no cross-camera positive after filtering

  double rank(int k) const;
};

/// Single-gallery-shot CMC and mAP. Gallery entries sharing both identity and
/// camera with the query are dropped; ties keep gallery order.
RankingResult evaluate_ranking(const Tensor& dist, const std::vector<int>& q_ids, const std::vector<int>& g_ids,
                               const std::vector<int>& q_cams, const std::vector<int>& g_cams);

double cmc_rank_k(const Tensor& dist, const std::vector<int>& q_ids, const std::vector<int>& g_ids,
                  const std::vector<int>& q_cams, const std::vector<int>& g_cams, int k);
double mean_ap(const Tensor& dist, const std::vector<int>& q_ids, const std::vector<int>& g_ids,
               const std::vector<int>& q_cams, const std::vector<int>& g_cams);

struct ConsistencyResult {
  double percentage = 0.0;
  int used = 0;
  int excluded = 0;
};

/// Leave-one-out nearest neighbour among the adversarial queries: the share
/// whose nearest other query carries the same target id. Queries whose
/// target has a single member are excluded.
ConsistencyResult target_consistency(const Tensor& adv_embeddings, const std::vector<int>& targets);

/// Variant ranking each adversarial query against a labelled reference set:
/// the share whose nearest reference embedding has the query's target id.
ConsistencyResult target_consistency_reference(const Tensor& adv_embeddings, const std::vector<int>& targets,
                                               const Tensor& reference, const std::vector<int>& reference_ids);

/// Expected leave-one-out consistency for random embeddings, in percent.
double consistency_chance(int gamma, int targets);

struct Perceptibility {
  double mean_ssim = 0.0;
  double mean_ms_ssim = 0.0;
  double mean_linf = 0.0;
  double mean_l2 = 0.0;
};

Perceptibility perceptibility_report(const Tensor& clean, const Tensor& adv);

struct EvalReport {
  double rank1 = 0.0, rank5 = 0.0, rank10 = 0.0, map = 0.0;
  std::optional<double> target_consistency;
  Perceptibility perceptibility;
  nlohmann::json metadata = nlohmann::json::object();

  /// Throws if a percentage leaves [0,100] or the ranks are not ordered.
  void validate() const;
  nlohmann::json to_json() const;
  static EvalReport from_ranking(const RankingResult& r);
};

inline constexpr int kReportSchemaVersion = 1;

/// Fixed column order shared by every CSV the tools emit.
std::vector<std::string> csv_columns();
std::string csv_header();
/// `cell` names the sweep cell, e.g. "eps=16".
std::string csv_row(const std::string& experiment, const std::string& cell, const EvalReport& r);

}  // namespace lcye::metrics
