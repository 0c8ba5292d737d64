#pragma once

#include <cstdint>
#include <vector>

#include "lcye/nn.hpp"

namespace lcye {

/// N x C matrix of identity prototypes, one row per training identity.
struct PrototypeMemory {
  ag::Var K;

  int rows() const { return K.dim(0); }
  int channels() const { return K.dim(1); }
  void collect(nn::ParamList& list, const std::string& prefix = "memory.");
};

/// Standard-normal rows scaled to unit norm.
PrototypeMemory init_memory(int n, int c, std::uint64_t seed);

struct ReadOptions {
  double temperature = 1.0;
  /// Optional (B x N) or (N) indicator; each weight w_ij is multiplied by q_j.
  const Tensor* indicator = nullptr;
  /// Divide the indicator-masked weights by their row sum.
  bool renormalize = false;
};

struct MemoryRead {
  ag::Var h;        // same shape as f
  ag::Var weights;  // (B*H'*W') x N address weights after any indicator
};

/// Softmax over prototypes of the cosine similarity of every spatial slice of
/// f (B x C x H' x W'). Slices or rows with norm below 1e-12 get cosine 0.
ag::Var address_weights(const ag::Var& f, const ag::Var& K, double temperature = 1.0);

/// h_i = sum_j w_ij q_j k_j, with q = 1 unless an indicator is given.
MemoryRead memory_read(const ag::Var& f, const ag::Var& K, const ReadOptions& options = {});

ag::Var mra_read(const ag::Var& f, const ag::Var& K, double temperature = 1.0);

/// Throws if any row of q is all zero or has entries outside {0,1}.
ag::Var mra_read_targeted(const ag::Var& f, const ag::Var& K, const Tensor& q, bool renormalize = false,
                          double temperature = 1.0);

/// Indicator rows (B x N) that are 1 everywhere except at each sample's own id.
Tensor exclusion_indicator(const std::vector<int>& ids, int n);

/// Indicator rows (B x N), one-hot at each sample's target.
Tensor one_hot_indicator(const std::vector<int>& targets, int n);

/// B x N total address mass per sample, summed over its spatial slices.
Tensor address_mass(const Tensor& weights, int batch);

/// Row of maximal address mass per sample.
std::vector<int> dominant_prototype(const Tensor& weights, int batch);

}  // namespace lcye
