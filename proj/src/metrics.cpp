#include "lcye/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lcye/losses.hpp"

namespace lcye::metrics {

Tensor distance_matrix(const Tensor& query, const Tensor& gallery) {
  if (query.rank() != 2 || gallery.rank() != 2 || query.dim(1) != gallery.dim(1)) {
    throw std::invalid_argument("distance_matrix: embedding dims " + shape_str(query.shape()) + " vs " +
                                shape_str(gallery.shape()));
  }
  const int nq = query.dim(0), ng = gallery.dim(0), d = query.dim(1);
  Tensor out({nq, ng});
  for (int i = 0; i < nq; ++i)
    for (int j = 0; j < ng; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        const double diff = query.at(i, k) - gallery.at(j, k);
        s += diff * diff;
      }
      out.at(i, j) = std::sqrt(s);
    }
  return out;
}

double RankingResult::rank(int k) const {
  if (cmc.empty()) return 0.0;
  return cmc[static_cast<std::size_t>(std::clamp(k, 1, static_cast<int>(cmc.size())) - 1)];
}

RankingResult evaluate_ranking(const Tensor& dist, const std::vector<int>& q_ids, const std::vector<int>& g_ids,
                               const std::vector<int>& q_cams, const std::vector<int>& g_cams) {
  const int nq = dist.dim(0), ng = dist.dim(1);
  if (static_cast<int>(q_ids.size()) != nq || static_cast<int>(q_cams.size()) != nq ||
      static_cast<int>(g_ids.size()) != ng || static_cast<int>(g_cams.size()) != ng) {
    throw std::invalid_argument("evaluate_ranking: label counts do not match the distance matrix");
  }
  RankingResult r;
  std::vector<double> hits(static_cast<std::size_t>(ng), 0.0);
  double ap_sum = 0.0;
  std::vector<int> order(static_cast<std::size_t>(ng));
  for (int q = 0; q < nq; ++q) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dist.at(q, a) < dist.at(q, b); });
    int rank = 0, found = 0, first_hit = -1;
    double ap = 0.0;
    for (int g : order) {
      if (g_ids[g] == q_ids[q] && g_cams[g] == q_cams[q]) continue;
      ++rank;
      if (g_ids[g] == q_ids[q]) {
        ++found;
        ap += static_cast<double>(found) / rank;
        if (first_hit < 0) first_hit = rank;
      }
    }
    if (found == 0) {
      ++r.excluded_queries;
      continue;
    }
    ++r.valid_queries;
    ap_sum += ap / found;
    for (int k = first_hit; k <= ng; ++k) hits[static_cast<std::size_t>(k - 1)] += 1.0;
  }
  r.cmc.resize(static_cast<std::size_t>(ng), 0.0);
  if (r.valid_queries > 0) {
    for (int k = 0; k < ng; ++k) r.cmc[static_cast<std::size_t>(k)] = 100.0 * hits[static_cast<std::size_t>(k)] / r.valid_queries;
    r.map = 100.0 * ap_sum / r.valid_queries;
  }
  return r;
}

double cmc_rank_k(const Tensor& dist, const std::vector<int>& q_ids, const std::vector<int>& g_ids,
                  const std::vector<int>& q_cams, const std::vector<int>& g_cams, int k) {
  if (k < 1) throw std::invalid_argument("cmc_rank_k: k must be >= 1");
  return evaluate_ranking(dist, q_ids, g_ids, q_cams, g_cams).rank(k);
}

double mean_ap(const Tensor& dist, const std::vector<int>& q_ids, const std::vector<int>& g_ids,
               const std::vector<int>& q_cams, const std::vector<int>& g_cams) {
  return evaluate_ranking(dist, q_ids, g_ids, q_cams, g_cams).map;
}

ConsistencyResult target_consistency(const Tensor& adv_embeddings, const std::vector<int>& targets) {
  const int n = adv_embeddings.dim(0);
  if (static_cast<int>(targets.size()) != n) throw std::invalid_argument("target_consistency: label count mismatch");
  std::map<int, int> members;
  for (int t : targets) ++members[t];
  Tensor d = distance_matrix(adv_embeddings, adv_embeddings);
  ConsistencyResult r;
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    if (members[targets[i]] < 2) {
      ++r.excluded;
      continue;
    }
    int best = -1;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if (best < 0 || d.at(i, j) < d.at(i, best)) best = j;
    }
    ++r.used;
    hits += targets[best] == targets[i];
  }
  r.percentage = r.used ? 100.0 * hits / r.used : 0.0;
  return r;
}

ConsistencyResult target_consistency_reference(const Tensor& adv_embeddings, const std::vector<int>& targets,
                                               const Tensor& reference, const std::vector<int>& reference_ids) {
  const int n = adv_embeddings.dim(0);
  if (static_cast<int>(targets.size()) != n || static_cast<int>(reference_ids.size()) != reference.dim(0)) {
    throw std::invalid_argument("target_consistency_reference: label count mismatch");
  }
  Tensor d = distance_matrix(adv_embeddings, reference);
  ConsistencyResult r;
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < reference.dim(0); ++j)
      if (d.at(i, j) < d.at(i, best)) best = j;
    ++r.used;
    hits += reference_ids[best] == targets[i];
  }
  r.percentage = r.used ? 100.0 * hits / r.used : 0.0;
  return r;
}

double consistency_chance(int gamma, int targets) {
  return 100.0 * (gamma - 1) / (static_cast<double>(gamma) * targets - 1);
}

Perceptibility perceptibility_report(const Tensor& clean, const Tensor& adv) {
  if (clean.shape() != adv.shape() || clean.rank() != 4) {
    throw std::invalid_argument("perceptibility_report: shape mismatch " + shape_str(clean.shape()) + " vs " +
                                shape_str(adv.shape()));
  }
  const int b = clean.dim(0);
  const std::size_t per = clean.size() / static_cast<std::size_t>(b);
  Perceptibility p;
  for (int i = 0; i < b; ++i) {
    double linf = 0.0, l2 = 0.0;
    for (std::size_t k = 0; k < per; ++k) {
      const double d = adv[i * per + k] - clean[i * per + k];
      linf = std::max(linf, std::abs(d));
      l2 += d * d;
    }
    p.mean_linf += linf / b;
    p.mean_l2 += std::sqrt(l2) / b;
  }
  loss::SsimOptions o;
  if (clean.dim(2) >= o.window && clean.dim(3) >= o.window) {
    const Tensor s = loss::ssim_per_image(clean, adv, o);
    const int scales = std::min(3, loss::max_ms_ssim_scales(clean.dim(2), clean.dim(3), o.window));
    const Tensor ms = loss::ms_ssim_per_image(clean, adv, scales, o);
    for (int i = 0; i < b; ++i) {
      p.mean_ssim += s[i] / b;
      p.mean_ms_ssim += ms[i] / b;
    }
  }
  return p;
}

void EvalReport::validate() const {
  for (double v : {rank1, rank5, rank10, map}) {
    if (!(v >= 0.0 && v <= 100.0)) throw std::logic_error("EvalReport: percentage out of range");
  }
  if (target_consistency && !(*target_consistency >= 0.0 && *target_consistency <= 100.0)) {
    throw std::logic_error("EvalReport: target consistency out of range");
  }
  if (!(rank1 <= rank5 && rank5 <= rank10)) throw std::logic_error("EvalReport: ranks not ordered");
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["rank1"] = rank1;
  j["rank5"] = rank5;
  j["rank10"] = rank10;
  j["map"] = map;
  j["target_consistency"] = target_consistency ? nlohmann::json(*target_consistency) : nlohmann::json(nullptr);
  j["perceptibility"] = {{"mean_ssim", perceptibility.mean_ssim},
                         {"mean_ms_ssim", perceptibility.mean_ms_ssim},
                         {"mean_linf", perceptibility.mean_linf},
                         {"mean_l2", perceptibility.mean_l2}};
  j["metadata"] = metadata;
  return j;
}

EvalReport EvalReport::from_ranking(const RankingResult& r) {
  EvalReport e;
  e.rank1 = r.rank(1);
  e.rank5 = r.rank(5);
  e.rank10 = r.rank(10);
  e.map = r.map;
  return e;
}

std::vector<std::string> csv_columns() {
  return {"schema_version", "experiment", "cell",          "rank1",     "rank5",   "rank10",     "map",
          "target_consistency", "mean_ssim", "mean_ms_ssim", "mean_linf", "mean_l2", "config_hash"};
}

std::string csv_header() {
  std::string s;
  for (const auto& c : csv_columns()) s += (s.empty() ? "" : ",") + c;
  return s;
}

std::string csv_row(const std::string& experiment, const std::string& cell, const EvalReport& r) {
  std::ostringstream o;
  o.precision(6);
  o << std::fixed;
  o << kReportSchemaVersion << ',' << experiment << ',' << cell << ',' << r.rank1 << ',' << r.rank5 << ',' << r.rank10
    << ',' << r.map << ',';
  if (r.target_consistency) o << *r.target_consistency;
  o << ',' << r.perceptibility.mean_ssim << ',' << r.perceptibility.mean_ms_ssim << ',' << r.perceptibility.mean_linf
    << ',' << r.perceptibility.mean_l2 << ',' << r.metadata.value("config_hash", std::string());
  return o.str();
}

}  // namespace lcye::metrics
