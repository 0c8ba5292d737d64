#include "lcye/memory.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "lcye/ops.hpp"

namespace lcye {

void PrototypeMemory::collect(nn::ParamList& list, const std::string& prefix) { list.add(prefix + "K", K); }

PrototypeMemory init_memory(int n, int c, std::uint64_t seed) {
  if (n < 1 || c < 1) throw std::invalid_argument("init_memory: dimensions must be positive");
  Rng rng = Rng(seed).substream("memory.init");
  Tensor k({n, c});
  for (int i = 0; i < n; ++i) {
    double norm = 0.0;
    for (int j = 0; j < c; ++j) {
      k.at(i, j) = rng.normal();
      norm += k.at(i, j) * k.at(i, j);
    }
    norm = std::sqrt(norm);
    for (int j = 0; j < c; ++j) k.at(i, j) /= norm;
  }
  return {ag::Var(std::move(k), true)};
}

namespace {
void check_pair(const ag::Var& f, const ag::Var& K) {
  if (f.value().rank() != 4) throw std::invalid_argument("memory read: f must be B x C x H x W");
  if (K.value().rank() != 2 || K.dim(1) != f.dim(1)) {
    throw std::invalid_argument("memory read: feature channels " + std::to_string(f.dim(1)) +
                                " do not match memory " + shape_str(K.shape()));
  }
}
}  // namespace

ag::Var address_weights(const ag::Var& f, const ag::Var& K, double temperature) {
  check_pair(f, K);
  if (!(temperature > 0.0)) throw std::invalid_argument("memory read: temperature must be positive");
  ag::Var cos = ag::matmul(ag::row_normalize(ag::to_rows(f)), ag::row_normalize(K), false, true);
  if (temperature != 1.0) cos = ag::scale(cos, 1.0 / temperature);
  return ag::softmax_rows(cos);
}

MemoryRead memory_read(const ag::Var& f, const ag::Var& K, const ReadOptions& options) {
  ag::Var w = address_weights(f, K, options.temperature);
  const int b = f.dim(0), h = f.dim(2), wd = f.dim(3), n = K.dim(0);
  if (options.indicator) {
    const Tensor& q = *options.indicator;
    const bool per_sample = q.rank() == 2;
    if ((per_sample && (q.dim(0) != b || q.dim(1) != n)) || (!per_sample && (q.rank() != 1 || q.dim(0) != n))) {
      throw std::invalid_argument("memory read: indicator shape " + shape_str(q.shape()));
    }
    const int rows_per = h * wd;
    for (int s = 0; s < (per_sample ? b : 1); ++s) {
      bool any = false;
      for (int j = 0; j < n; ++j) {
        const double v = q[static_cast<std::size_t>(s) * n + j];
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("memory read: indicator entries must be 0 or 1");
        any = any || v == 1.0;
      }
      if (!any) throw std::invalid_argument("memory read: indicator has no selected identity");
    }
    Tensor mask(w.shape());
    for (int r = 0; r < b * rows_per; ++r) {
      const int s = per_sample ? r / rows_per : 0;
      for (int j = 0; j < n; ++j) mask.at(r, j) = q[static_cast<std::size_t>(s) * n + j];
    }
    w = ag::mul_const(w, mask);
    if (options.renormalize) w = ag::rows_div_sum(w);
  }
  ag::Var h_rows = ag::matmul(w, K);
  return {ag::from_rows(h_rows, b, h, wd), w};
}

ag::Var mra_read(const ag::Var& f, const ag::Var& K, double temperature) {
  ReadOptions o;
  o.temperature = temperature;
  return memory_read(f, K, o).h;
}

ag::Var mra_read_targeted(const ag::Var& f, const ag::Var& K, const Tensor& q, bool renormalize, double temperature) {
  ReadOptions o;
  o.temperature = temperature;
  o.indicator = &q;
  o.renormalize = renormalize;
  return memory_read(f, K, o).h;
}

Tensor exclusion_indicator(const std::vector<int>& ids, int n) {
  Tensor q({static_cast<int>(ids.size()), n}, 1.0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= 0 && ids[i] < n) q.at(static_cast<int>(i), ids[i]) = 0.0;
  }
  return q;
}

Tensor one_hot_indicator(const std::vector<int>& targets, int n) {
  Tensor q({static_cast<int>(targets.size()), n}, 0.0);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= n) throw std::invalid_argument("target id out of range");
    q.at(static_cast<int>(i), targets[i]) = 1.0;
  }
  return q;
}

Tensor address_mass(const Tensor& weights, int batch) {
  const int rows = weights.dim(0), n = weights.dim(1);
  if (rows % batch != 0) throw std::invalid_argument("address_mass: rows not divisible by batch");
  const int per = rows / batch;
  Tensor out({batch, n}, 0.0);
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < n; ++j) out.at(r / per, j) += weights.at(r, j);
  return out;
}

std::vector<int> dominant_prototype(const Tensor& weights, int batch) {
  Tensor mass = address_mass(weights, batch);
  std::vector<int> out(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    int best = 0;
    for (int j = 1; j < mass.dim(1); ++j)
      if (mass.at(b, j) > mass.at(b, best)) best = j;
    out[static_cast<std::size_t>(b)] = best;
  }
  return out;
}

}  // namespace lcye
