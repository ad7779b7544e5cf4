#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "vpl/common.hpp"

namespace vpl {

// Dense row-major float tensor. grad is allocated lazily by backward passes.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0);
  }
  Tensor(std::vector<int> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != std::size_t(numel_of(shape)))
      throw Error("tensor: data length does not match shape");
  }

  static long numel_of(const std::vector<int>& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
  }
  long numel() const { return long(data.size()); }

  double& operator[](long i) { return data[i]; }
  double operator[](long i) const { return data[i]; }

  // NCHW helpers
  double& at4(int n, int c, int h, int w) {
    return data[((long(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  double at4(int n, int c, int h, int w) const {
    return data[((long(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  double& at2(int n, int c) { return data[long(n) * shape[1] + c]; }
  double at2(int n, int c) const { return data[long(n) * shape[1] + c]; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i)
      s += (i ? "," : "") + std::to_string(shape[i]);
    return s + ")";
  }
};

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* where) {
  if (a.shape != b.shape)
    throw Error(std::string(where) + ": shape mismatch " + a.shape_str() +
                " vs " + b.shape_str());
}

}  // namespace vpl
