#pragma once
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace evstereo {

// Dense row-major tensor of f64. The only element type in this codebase.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, double v);
  static Tensor from_data(std::vector<int64_t> shape, std::vector<double> data);
  static Tensor scalar(double v) { return from_data({}, {v}); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim() const { return int64_t(shape_.size()); }
  int64_t size(int64_t axis) const;
  int64_t numel() const { return int64_t(data_.size()); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[size_t(i)]; }
  double operator[](int64_t i) const { return data_[size_t(i)]; }

  // Bounds-checked multi-index access; convenient in tests and cold paths.
  double& at(std::initializer_list<int64_t> idx);
  double at(std::initializer_list<int64_t> idx) const;

  bool requires_grad = false;

 private:
  int64_t offset_of(std::initializer_list<int64_t> idx) const;
  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

int64_t numel_of(const std::vector<int64_t>& shape);
std::vector<int64_t> strides_of(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

}  // namespace evstereo
