#include "lcye/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lcye {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != numel(shape_)) {
    throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_batch(int begin, int end) const {
  if (shape_.empty() || begin < 0 || end > shape_[0] || begin > end) {
    throw std::out_of_range("slice_batch out of range");
  }
  std::size_t per = shape_[0] == 0 ? 0 : data_.size() / static_cast<std::size_t>(shape_[0]);
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(s, std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(per * begin),
                                       data_.begin() + static_cast<std::ptrdiff_t>(per * end)));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor stack_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) return {};
  Shape s = parts.front().shape();
  s.insert(s.begin(), static_cast<int>(parts.size()));
  std::vector<double> data;
  data.reserve(numel(s));
  for (const auto& p : parts) {
    if (p.shape() != parts.front().shape()) throw std::invalid_argument("stack_batch: shape mismatch");
    data.insert(data.end(), p.values().begin(), p.values().end());
  }
  return Tensor(s, std::move(data));
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_batch: no parts");
  Shape s = parts.front().shape();
  s[0] = 0;
  std::vector<double> data;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    ps[0] = s[0];
    if (ps != s) throw std::invalid_argument("concat_batch: trailing shape mismatch");
    s[0] += p.dim(0);
    data.insert(data.end(), p.values().begin(), p.values().end());
  }
  return Tensor(s, std::move(data));
}

Tensor gather_batch(const Tensor& t, const std::vector<int>& indices) {
  Shape s = t.shape();
  const std::size_t per = s[0] == 0 ? 0 : t.size() / static_cast<std::size_t>(s[0]);
  s[0] = static_cast<int>(indices.size());
  std::vector<double> data;
  data.reserve(per * indices.size());
  for (int i : indices) {
    if (i < 0 || i >= t.dim(0)) throw std::out_of_range("gather_batch index out of range");
    auto first = t.values().begin() + static_cast<std::ptrdiff_t>(per * i);
    data.insert(data.end(), first, first + static_cast<std::ptrdiff_t>(per));
  }
  return Tensor(s, std::move(data));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<int> argmax_rows(const Tensor& m) {
  std::vector<int> out(static_cast<std::size_t>(m.dim(0)));
  for (int r = 0; r < m.dim(0); ++r) {
    int best = 0;
    for (int c = 1; c < m.dim(1); ++c)
      if (m.at(r, c) > m.at(r, best)) best = c;
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

std::vector<int> argmin_rows(const Tensor& m) {
  std::vector<int> out(static_cast<std::size_t>(m.dim(0)));
  for (int r = 0; r < m.dim(0); ++r) {
    int best = 0;
    for (int c = 1; c < m.dim(1); ++c)
      if (m.at(r, c) < m.at(r, best)) best = c;
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

}  // namespace lcye
