#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "transfg/errors.hpp"

namespace transfg {

using Shape = std::vector<std::size_t>;

// Cache-line aligned allocation. Vectorised kernels peel differently
// depending on where a buffer starts, so a fixed alignment keeps the
// floating-point summation order, and hence every result, reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlignment));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array with an optional gradient buffer.
///
/// A Tensor is a handle: copies share the underlying storage, which is what
/// lets a recorded backward rule accumulate into the same buffer the caller
/// holds. Use clone() for an independent copy. reshaped() returns a view
/// over the same storage (values and gradient).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }
  static Tensor filled(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false) {
    return filled({1}, value, requires_grad);
  }

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return defined() ? storage_->values.size() : 0; }

  std::span<T> data() { return storage_->values; }
  std::span<const T> data() const { return storage_->values; }
  T* raw() { return storage_->values.data(); }
  const T* raw() const { return storage_->values.data(); }

  T& operator[](std::size_t i) { return storage_->values[i]; }
  const T& operator[](std::size_t i) const { return storage_->values[i]; }
  // 2-D element access, row-major.
  T& operator()(std::size_t r, std::size_t c) { return storage_->values[r * shape_.back() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return storage_->values[r * shape_.back() + c];
  }

  T item() const;

  bool requires_grad() const { return defined() && storage_->requires_grad; }
  void set_requires_grad(bool on);
  // Empty span when requires_grad is off.
  std::span<T> grad() { return storage_->grad; }
  std::span<const T> grad() const { return storage_->grad; }
  void zero_grad();

  Tensor clone() const;
  Tensor reshaped(Shape shape) const;
  bool shares_storage(const Tensor& other) const { return storage_ == other.storage_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < numel(); ++i) out[i] = static_cast<U>((*this)[i]);
    return out;
  }

 private:
  struct Storage {
    AlignedVector<T> values;
    AlignedVector<T> grad;
    bool requires_grad = false;
  };
  Tensor(std::shared_ptr<Storage> storage, Shape shape)
      : storage_(std::move(storage)), shape_(std::move(shape)) {}

  std::shared_ptr<Storage> storage_;
  Shape shape_;
};

/// Define-by-run record of executed operations.
///
/// Operations append a backward rule whenever one of their inputs requires a
/// gradient. backward() seeds d(loss)/d(loss) = 1 and replays the rules in
/// reverse order; a tape can be replayed only once. A tape created with
/// Tape::inference() never records and its outputs never require gradients.
template <typename T>
class Tape {
 public:
  Tape() = default;
  static Tape inference() {
    Tape t;
    t.recording_ = false;
    return t;
  }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  bool recording() const { return recording_; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return rules_.size(); }

  // True when an op over these inputs has to be differentiated.
  bool tracks(std::initializer_list<const Tensor<T>*> inputs) const;

  void record(std::function<void()> rule);
  void backward(Tensor<T>& loss);

 private:
  std::vector<std::function<void()>> rules_;
  bool recording_ = true;
  bool consumed_ = false;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace transfg
