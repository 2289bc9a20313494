#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "common.hpp"

namespace add {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ",";
  }
  return out + "]";
}

namespace detail {

// Recycles float buffers across training steps. Tape-heavy training allocates
// and drops thousands of identically-sized buffers per step; the pool turns
// that churn into pointer swaps. Thread-local, so independent graphs on
// different threads never contend.
class BufferPool {
 public:
  static std::vector<real> acquire(size_t n, bool zeroed);
  static void release(std::vector<real>&& v);
};

struct Storage {
  std::vector<real> v;
  explicit Storage(size_t n, bool zeroed) : v(BufferPool::acquire(n, zeroed)) {}
  Storage(const Storage&) = delete;
  ~Storage() { BufferPool::release(std::move(v)); }
};

// Gradient state shared by every copy of a tensor. Kept behind its own
// indirection so that a gradient buffer allocated lazily during backward is
// seen by all copies, including ones captured in closures before allocation.
struct GradCell {
  std::shared_ptr<Storage> storage;
  bool participating = false;  // reached from some leaf that requires grad
  bool leaf = false;           // a parameter: grads persist across backward passes
};

}  // namespace detail

// Dense n-dimensional row-major array with an optional gradient buffer.
// Copies are shallow: they share value storage and gradient state, which is
// what lets a parameter held by an optimizer and the same parameter captured
// in an autodiff closure accumulate into one gradient buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), true); }

  static Tensor full(Shape shape, real value) {
    Tensor t(std::move(shape), false);
    std::fill(t.data(), t.data() + t.numel(), value);
    return t;
  }

  static Tensor scalar(real value) { return full({1}, value); }

  static Tensor from(Shape shape, const std::vector<real>& values) {
    Tensor t(std::move(shape), false);
    ADD_CHECK_ARG(static_cast<int64_t>(values.size()) == t.numel(),
                  "tensor data size %zu does not match shape %s", values.size(),
                  shape_str(t.shape()).c_str());
    std::memcpy(t.data(), values.data(), sizeof(real) * values.size());
    return t;
  }

  // Uninitialized contents; caller must fill every element.
  static Tensor empty(Shape shape) { return Tensor(std::move(shape), false); }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return numel_; }

  real* data() { return data_->v.data(); }
  const real* data() const { return data_->v.data(); }
  real item() const {
    ADD_CHECK_ARG(numel_ == 1, "item() on non-scalar tensor %s", shape_str(shape_).c_str());
    return data()[0];
  }

  // --- autodiff state ---

  // True when this tensor is a leaf parameter or was produced from one; ops
  // record backward closures only for participating tensors.
  bool participates() const { return cell_ && (cell_->leaf || cell_->participating); }
  void mark_participating() const { cell_->participating = true; }

  Tensor& set_requires_grad() {
    cell_->leaf = true;
    grad_acquire();
    return *this;
  }
  bool is_leaf() const { return cell_ && cell_->leaf; }

  bool has_grad() const { return cell_ && cell_->storage != nullptr; }
  real* grad() { return has_grad() ? cell_->storage->v.data() : nullptr; }
  const real* grad() const { return has_grad() ? cell_->storage->v.data() : nullptr; }

  // Gradient buffer for accumulation, allocated (zeroed) on first use.
  real* grad_acquire() {
    if (!cell_->storage)
      cell_->storage = std::make_shared<detail::Storage>(static_cast<size_t>(numel_), true);
    return cell_->storage->v.data();
  }

  void zero_grad() {
    if (has_grad())
      std::memset(cell_->storage->v.data(), 0, sizeof(real) * static_cast<size_t>(numel_));
  }

  // Drop the gradient buffer (state flags survive).
  void release_grad() {
    if (cell_) cell_->storage.reset();
  }

  // Same storage, same gradient state, different shape. Gradient of a reshape
  // is the reshape of the gradient, so no tape node is needed.
  Tensor reshaped(Shape shape) const {
    ADD_CHECK_ARG(shape_numel(shape) == numel_, "reshape %s -> %s changes element count",
                  shape_str(shape_).c_str(), shape_str(shape).c_str());
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  // Deep copy of values only; fresh gradient state.
  Tensor clone_values() const {
    Tensor t(shape_, false);
    std::memcpy(t.data(), data(), sizeof(real) * static_cast<size_t>(numel_));
    return t;
  }

  bool all_finite() const {
    const real* p = data();
    for (int64_t i = 0; i < numel_; ++i)
      if (!std::isfinite(static_cast<double>(p[i]))) return false;
    return true;
  }

  bool same_storage(const Tensor& o) const { return data_ == o.data_; }

 private:
  Tensor(Shape shape, bool zeroed) : shape_(std::move(shape)), numel_(shape_numel(shape_)) {
    for (int d : shape_)
      ADD_CHECK_ARG(d > 0, "tensor dims must be positive, got %s", shape_str(shape_).c_str());
    data_ = std::make_shared<detail::Storage>(static_cast<size_t>(numel_), zeroed);
    cell_ = std::make_shared<detail::GradCell>();
  }

  Shape shape_;
  int64_t numel_ = 0;
  std::shared_ptr<detail::Storage> data_;
  std::shared_ptr<detail::GradCell> cell_;
};

}  // namespace add
