#pragma once

#include <cmath>

#include "transfg/rng.hpp"
#include "transfg/tensor.hpp"

namespace transfg {

// Zero-mean uniform weights in ±1/sqrt(fan_in), marked trainable.
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> trainable_filled(Shape shape, T value) {
  return Tensor<T>::filled(std::move(shape), value, true);
}

}  // namespace transfg
