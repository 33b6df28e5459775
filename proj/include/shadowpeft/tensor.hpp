#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace shadowpeft {

enum class DType { kF32, kF64 };

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor handle. Copies share storage; clone() deep-copies.
/// Gradient buffer lives next to the data and is allocated on demand, so every
/// handle to the same tensor sees the same gradient.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::kF64);
  static Tensor full(Shape shape, double value, DType dtype = DType::kF64);
  static Tensor from(Shape shape, std::vector<double> values, DType dtype = DType::kF64);
  static Tensor scalar(double value, DType dtype = DType::kF64);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t rank() const { return static_cast<int64_t>(impl_->shape.size()); }
  int64_t dim(int64_t i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return shape_numel(impl_->shape); }
  DType dtype() const { return impl_->dtype; }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  double& at(int64_t i) { return impl_->data[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }
  /// Value of a rank-0 or single-element tensor.
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Allocates the gradient buffer (zero-filled) if absent.
  void ensure_grad();
  void zero_grad();
  double* grad() { return impl_->grad.data(); }
  const double* grad() const { return impl_->grad.data(); }
  double grad_at(int64_t i) const { return impl_->grad[static_cast<size_t>(i)]; }

  Tensor clone() const;
  /// Copies values from src (same numel required); shape is kept.
  void copy_from(const Tensor& src);

  bool same_shape(const Tensor& other) const { return impl_->shape == other.impl_->shape; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  /// Rounds every entry through IEEE-754 binary32 when dtype is kF32.
  /// Called by every primitive on its output so the 32-bit mode behaves
  /// like a genuine single-precision pipeline.
  void apply_precision();

  /// Throws NumericalError if any entry is NaN or Inf.
  void check_finite(const char* op) const;

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until ensure_grad()
    bool requires_grad = false;
    DType dtype = DType::kF64;
  };
  std::shared_ptr<Impl> impl_;
};

/// Integer token matrix, kept outside the autodiff tensor type.
struct IntMatrix {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<int32_t> values;  // row-major

  int32_t at(int64_t r, int64_t c) const { return values[static_cast<size_t>(r * cols + c)]; }
  int32_t& at(int64_t r, int64_t c) { return values[static_cast<size_t>(r * cols + c)]; }
  int64_t numel() const { return rows * cols; }

  static IntMatrix filled(int64_t rows, int64_t cols, int32_t value);
};

/// Record of one reverse pass step. The tape stores closures in execution
/// order; backward() replays them in exact reverse order, which is a valid
/// topological order because every op's inputs were produced earlier.
class Tape {
 public:
  void record(std::function<void()> backward_fn);
  /// Seeds root.grad with 1 (root must be a single-element tensor) and runs
  /// all recorded backward steps in reverse.
  void backward(Tensor& root);
  size_t node_count() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IndexError : std::runtime_error {
  explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct SequencingError : std::runtime_error {
  explicit SequencingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace shadowpeft
