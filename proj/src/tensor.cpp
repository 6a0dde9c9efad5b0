#include "evstereo/tensor.hpp"

#include <sstream>

#include "evstereo/errors.hpp"

namespace evstereo {

int64_t numel_of(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t s : shape) {
    contract(s >= 0, "tensor: negative extent in shape " + shape_str(shape));
    n *= s;
  }
  return n;
}

std::vector<int64_t> strides_of(const std::vector<int64_t>& shape) {
  std::vector<int64_t> st(shape.size(), 1);
  for (int64_t i = int64_t(shape.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * shape[i + 1];
  return st;
}

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(size_t(numel_of(shape_)), 0.0);
}

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = v;
  return t;
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<double> data) {
  Tensor t;
  t.shape_ = std::move(shape);
  contract(int64_t(data.size()) == numel_of(t.shape_),
           "tensor: data size does not match shape " + shape_str(t.shape_));
  t.data_ = std::move(data);
  return t;
}

int64_t Tensor::size(int64_t axis) const {
  contract(axis >= 0 && axis < dim(), "tensor: axis out of range");
  return shape_[size_t(axis)];
}

int64_t Tensor::offset_of(std::initializer_list<int64_t> idx) const {
  contract(int64_t(idx.size()) == dim(), "tensor: index rank mismatch");
  int64_t off = 0;
  auto st = strides_of(shape_);
  size_t k = 0;
  for (int64_t i : idx) {
    contract(i >= 0 && i < shape_[k], "tensor: index out of bounds");
    off += i * st[k];
    ++k;
  }
  return off;
}

double& Tensor::at(std::initializer_list<int64_t> idx) { return data_[size_t(offset_of(idx))]; }
double Tensor::at(std::initializer_list<int64_t> idx) const { return data_[size_t(offset_of(idx))]; }

}  // namespace evstereo
