#include "shadowpeft/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace shadowpeft {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(Shape shape, DType dtype) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(static_cast<size_t>(shape_numel(t.impl_->shape)), 0.0);
  t.impl_->dtype = dtype;
  return t;
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t = zeros(std::move(shape), dtype);
  for (auto& v : t.impl_->data) v = value;
  t.apply_precision();
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, DType dtype) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw DimensionError("Tensor::from: " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  t.impl_->dtype = dtype;
  t.apply_precision();
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return from({}, {value}, dtype); }

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("Tensor::item: tensor has shape " + shape_str(impl_->shape));
  }
  return impl_->data[0];
}

void Tensor::ensure_grad() {
  if (impl_->grad.empty()) {
    impl_->grad.assign(impl_->data.size(), 0.0);
  }
}

void Tensor::zero_grad() {
  for (auto& g : impl_->grad) g = 0.0;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<Impl>(*impl_);
  return t;
}

void Tensor::copy_from(const Tensor& src) {
  if (numel() != src.numel()) {
    throw DimensionError("copy_from: numel mismatch " + shape_str(impl_->shape) + " vs " +
                         shape_str(src.shape()));
  }
  impl_->data = src.impl_->data;
  impl_->dtype = src.impl_->dtype;
  apply_precision();
}

void Tensor::apply_precision() {
  if (impl_->dtype == DType::kF32) {
    for (auto& v : impl_->data) v = static_cast<double>(static_cast<float>(v));
  }
}

void Tensor::check_finite(const char* op) const {
  for (double v : impl_->data) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string(op) + ": non-finite value in output of shape " +
                           shape_str(impl_->shape));
    }
  }
}

IntMatrix IntMatrix::filled(int64_t rows, int64_t cols, int32_t value) {
  IntMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.values.assign(static_cast<size_t>(rows * cols), value);
  return m;
}

void Tape::record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

void Tape::backward(Tensor& root) {
  if (root.numel() != 1) {
    throw DimensionError("Tape::backward: root must hold one element, got " +
                         shape_str(root.shape()));
  }
  root.ensure_grad();
  root.grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    (*it)();
  }
}

}  // namespace shadowpeft
