#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace lcye {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. Images are laid out B x C x H x W.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

  /// Same data, new shape; element counts must agree.
  Tensor reshaped(Shape shape) const;

  /// Copies samples [begin, end) along the leading axis.
  Tensor slice_batch(int begin, int end) const;

  void fill(double v);

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Stacks tensors of identical shape along a new leading axis.
Tensor stack_batch(const std::vector<Tensor>& parts);

/// Concatenates along the leading axis; trailing axes must agree.
Tensor concat_batch(const std::vector<Tensor>& parts);

/// Selects samples along the leading axis.
Tensor gather_batch(const Tensor& t, const std::vector<int>& indices);

double max_abs_diff(const Tensor& a, const Tensor& b);

/// Column index of the largest (smallest) entry of each row; first wins ties.
std::vector<int> argmax_rows(const Tensor& m);
std::vector<int> argmin_rows(const Tensor& m);

}  // namespace lcye
