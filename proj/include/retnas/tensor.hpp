#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "retnas/common.hpp"

namespace retnas {

// Dense row-major double tensor. Feature maps use [N, C, H, W].
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s)
      : shape(std::move(s)), v(static_cast<size_t>(numel_of(shape)), 0.0) {}

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (const int64_t d : s) {
      RETNAS_CHECK(d >= 0, "negative tensor dimension");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int64_t> s, double x) {
    Tensor t(std::move(s));
    for (double& e : t.v) e = x;
    return t;
  }

  static Tensor scalar(double x) {
    Tensor t(std::vector<int64_t>{});
    t.v.assign(1, x);
    return t;
  }

  static Tensor of(std::vector<int64_t> s, std::initializer_list<double> vals) {
    Tensor t(std::move(s));
    RETNAS_CHECK(static_cast<int64_t>(vals.size()) == t.numel(),
                 "Tensor::of: value count mismatch");
    size_t i = 0;
    for (const double x : vals) t.v[i++] = x;
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

  // [N, C, H, W] indexing.
  double& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
    return v[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  double at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return v[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }

  double& at3(int64_t a, int64_t b, int64_t c) {
    return v[static_cast<size_t>((a * shape[1] + b) * shape[2] + c)];
  }
  double at3(int64_t a, int64_t b, int64_t c) const {
    return v[static_cast<size_t>((a * shape[1] + b) * shape[2] + c)];
  }

  double& at2(int64_t r, int64_t c) { return v[static_cast<size_t>(r * shape[1] + c)]; }
  double at2(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * shape[1] + c)]; }

  bool all_finite() const {
    for (const double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) s += a.v[i] * b.v[i];
  return s;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::fabs(a.v[i] - b.v[i]));
  return m;
}

}  // namespace retnas
