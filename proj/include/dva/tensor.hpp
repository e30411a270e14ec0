#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace dva {

// Dense row-major tensor of 64-bit reals. Everything in this project is rank
// 0 (scalar), 1 (vector) or 2 (matrix).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != data.size()) throw std::invalid_argument("tensor: shape/data size mismatch");
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor vec(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }
  static Tensor zeros(std::vector<std::size_t> s) {
    std::vector<double> d(numel(s), 0.0);
    return Tensor(std::move(s), std::move(d));
  }

  static std::size_t numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  bool finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor& o) const { return shape == o.shape && data == o.data; }
};

}  // namespace dva
