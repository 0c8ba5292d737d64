#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lcye/autograd.hpp"
#include "lcye/rng.hpp"

namespace lcye::nn {

/// Non-owning view of a model's learnable parameters and persistent buffers,
/// keyed by dotted names. Rebuilt on demand; valid while the model lives.
struct ParamList {
  struct Param {
    std::string name;
    ag::Var* var;
  };
  struct Buffer {
    std::string name;
    Tensor* tensor;
  };
  std::vector<Param> params;
  std::vector<Buffer> buffers;

  void add(std::string name, ag::Var& v) { params.push_back({std::move(name), &v}); }
  void add_buffer(std::string name, Tensor& t) { buffers.push_back({std::move(name), &t}); }
  void append(const ParamList& other, const std::string& prefix);
  std::vector<ag::Var> vars() const;
};

/// Order-sensitive hash over every parameter and buffer value.
std::uint64_t checksum(const ParamList& list);
void set_requires_grad(const ParamList& list, bool on);
void zero_grad(const ParamList& list);
std::size_t parameter_count(const ParamList& list);
/// Copies values of `from` into `to`; names and shapes must match pairwise.
void copy_values(const ParamList& from, const ParamList& to);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, bool bias, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
  void collect(ParamList& list, const std::string& prefix);

  ag::Var weight;
  ag::Var bias;
  int stride = 1;
  int pad = 0;
};

class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, bool bias, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
  void collect(ParamList& list, const std::string& prefix);

  ag::Var weight;
  ag::Var bias;
};

/// Batch normalization over axis 1. Training mode normalizes with batch
/// statistics and updates the running averages; inference mode uses the
/// running averages only, so per-sample outputs do not depend on the batch.
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(int channels, double momentum = 0.1, double eps = 1e-5);
  ag::Var operator()(const ag::Var& x, bool training);
  void collect(ParamList& list, const std::string& prefix);

  ag::Var gamma;
  ag::Var beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// First-order adaptive-moment optimizer with bias correction.
class Adam {
 public:
  Adam(std::vector<ag::Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step();
  void zero_grad();
  double lr() const { return lr_; }

 private:
  std::vector<ag::Var> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace lcye::nn
