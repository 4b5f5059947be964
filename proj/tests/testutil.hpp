#pragma once

// Shared helpers for the test binaries: random tensors and a central
// finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "retnas/autograd.hpp"
#include "retnas/rng.hpp"
#include "retnas/tensor.hpp"

namespace testutil {

inline retnas::Tensor randt(std::vector<int64_t> s, retnas::Rng& rng,
                            double scale = 1.0) {
  retnas::Tensor t = retnas::Tensor::zeros(std::move(s));
  for (double& x : t.v) x = scale * rng.normal();
  return t;
}

// Like randt but keeps every entry away from zero (for kinked ops).
inline retnas::Tensor randt_no_kink(std::vector<int64_t> s, retnas::Rng& rng,
                                    double margin = 0.05) {
  retnas::Tensor t = randt(std::move(s), rng);
  for (double& x : t.v)
    if (std::abs(x) < margin) x += (x >= 0.0 ? 1.0 : -1.0) * 2.0 * margin;
  return t;
}

// Reduce an arbitrary output to a scalar with fixed coefficients so every
// output element influences the loss differently. The coefficients freeze
// on first use so graph rebuilds during FD probing see the same function.
struct CoeffSum {
  retnas::Rng rng;
  retnas::Tensor c;
  bool init = false;
  explicit CoeffSum(uint64_t seed) : rng(seed) {}
  retnas::Var operator()(const retnas::Var& out) {
    if (!init) {
      c = randt(out.val().shape, rng);
      init = true;
    }
    return retnas::sum_all(retnas::mul(out, retnas::Var::leaf(c)));
  }
};

// Max relative error between analytic gradients and central differences.
// `f` rebuilds the graph from the (mutated-in-place) leaf values.
inline double fd_max_rel_err(std::vector<retnas::Var> leaves,
                             const std::function<retnas::Var()>& f,
                             double eps = 1e-5) {
  retnas::backward(f());
  std::vector<retnas::Tensor> analytic;
  analytic.reserve(leaves.size());
  for (const retnas::Var& l : leaves) analytic.push_back(l.grad());

  double worst = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    retnas::Tensor& x = leaves[li].val_mut();
    for (int64_t i = 0; i < x.numel(); ++i) {
      const double x0 = x[i];
      x[i] = x0 + eps;
      const double yp = f().val()[0];
      x[i] = x0 - eps;
      const double ym = f().val()[0];
      x[i] = x0;
      const double num = (yp - ym) / (2.0 * eps);
      const double ana = analytic[li][i];
      const double denom = std::max({std::abs(num), std::abs(ana), 1e-6});
      worst = std::max(worst, std::abs(num - ana) / denom);
    }
  }
  return worst;
}

}  // namespace testutil
