#pragma once

#include <cmath>
#include <vector>

#include "retnas/autograd.hpp"
#include "retnas/nn.hpp"

namespace retnas {

// Cosine annealing over whole epochs with exact endpoints:
// lr(0) = lr0 and lr(epochs-1) = lr_min.
inline double cosine_lr(double lr0, double lr_min, int epoch, int epochs) {
  RETNAS_CHECK(epochs >= 1, "cosine_lr: epochs must be >= 1");
  RETNAS_CHECK(epoch >= 0 && epoch < epochs, "cosine_lr: epoch out of range");
  if (epochs == 1) return lr0;
  const double t = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(M_PI * t));
}

// Multiply by `gamma` at each milestone epoch; milestones are inclusive
// (epoch == milestone already uses the decayed rate).
inline double step_decay_lr(double lr0, double gamma,
                            const std::vector<int>& milestones, int epoch) {
  double lr = lr0;
  for (int m : milestones)
    if (epoch >= m) lr *= gamma;
  return lr;
}

// Classic SGD with momentum buffers and L2 weight decay folded into the
// gradient: v = mu*v + (g + wd*w); w -= lr*v.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Var> params, double momentum, double weight_decay)
      : params_(std::move(params)), momentum_(momentum), wd_(weight_decay) {
    for (const Var& p : params_)
      bufs_.push_back(Tensor::zeros(p.val().shape));
  }

  void step(double lr) {
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor& w = params_[i].val_mut();
      const Tensor& g = params_[i].grad();
      if (g.numel() == 0) continue;  // param unreachable from the last loss
      Tensor& v = bufs_[i];
      for (int64_t j = 0; j < w.numel(); ++j) {
        const double gj = g.v[j] + wd_ * w.v[j];
        v.v[j] = momentum_ * v.v[j] + gj;
        w.v[j] -= lr * v.v[j];
      }
    }
  }

  const std::vector<Var>& params() const { return params_; }
  std::vector<Tensor>& state() { return bufs_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> bufs_;
  double momentum_, wd_;
};

// Adam with L2 weight decay added to the raw gradient (not decoupled).
class Adam {
 public:
  Adam(std::vector<Var> params, double weight_decay, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)),
        wd_(weight_decay),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {
    for (const Var& p : params_) {
      m_.push_back(Tensor::zeros(p.val().shape));
      v_.push_back(Tensor::zeros(p.val().shape));
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor& w = params_[i].val_mut();
      const Tensor& g = params_[i].grad();
      if (g.numel() == 0) continue;  // param unreachable from the last loss
      for (int64_t j = 0; j < w.numel(); ++j) {
        const double gj = g.v[j] + wd_ * w.v[j];
        m_[i].v[j] = beta1_ * m_[i].v[j] + (1.0 - beta1_) * gj;
        v_[i].v[j] = beta2_ * v_[i].v[j] + (1.0 - beta2_) * gj * gj;
        const double mh = m_[i].v[j] / bc1;
        const double vh = v_[i].v[j] / bc2;
        w.v[j] -= lr * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

  const std::vector<Var>& params() const { return params_; }
  int64_t step_count() const { return t_; }
  std::vector<Tensor>& state_m() { return m_; }
  std::vector<Tensor>& state_v() { return v_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  double wd_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace retnas
