#pragma once

#include <memory>
#include <string>

#include "retnas/archspace.hpp"
#include "retnas/nn.hpp"
#include "retnas/partaware.hpp"

namespace retnas {

// Candidate operations instantiated at a fixed (width, stride). Every op
// maps [N, C, H, W] -> [N, C, ceil(H/s), ceil(W/s)] with C = width.

class Op {
 public:
  virtual ~Op() = default;
  virtual Var forward(const Var& x, bool training) const = 0;
  virtual OpKind kind() const = 0;
};

namespace ops {

class Zero : public Op {
 public:
  explicit Zero(int stride) : stride_(stride) {}
  Var forward(const Var& x, bool) const override {
    const Tensor& xv = x.val();
    Tensor out = Tensor::zeros({xv.dim(0), xv.dim(1),
                                (xv.dim(2) + stride_ - 1) / stride_,
                                (xv.dim(3) + stride_ - 1) / stride_});
    return Var::leaf(std::move(out));
  }
  OpKind kind() const override { return OpKind::kZero; }

 private:
  int stride_;
};

class Identity : public Op {
 public:
  explicit Identity(int stride) : stride_(stride) {}
  Var forward(const Var& x, bool) const override {
    return stride_ == 1 ? x : subsample2(x);
  }
  OpKind kind() const override { return OpKind::kIdentity; }

 private:
  int stride_;
};

class MaxPool3x3 : public Op {
 public:
  explicit MaxPool3x3(int stride) : stride_(stride) {}
  Var forward(const Var& x, bool) const override {
    return max_pool(x, 3, stride_, 1);
  }
  OpKind kind() const override { return OpKind::kMaxPool3x3; }

 private:
  int stride_;
};

class AvgPool3x3 : public Op {
 public:
  explicit AvgPool3x3(int stride) : stride_(stride) {}
  Var forward(const Var& x, bool) const override {
    return avg_pool(x, 3, stride_, 1);
  }
  OpKind kind() const override { return OpKind::kAvgPool3x3; }

 private:
  int stride_;
};

// Two stacked depthwise-separable 3x3 applications; the stride sits in the
// first depthwise conv.
class SepConv3x3 : public Op {
 public:
  SepConv3x3(ParamStore& ps, const std::string& prefix, int width, int stride,
             Rng& rng) {
    dw1_ = ps.add_param(prefix + ".dw1.w", init_conv_weight(width, 1, 3, 3, rng));
    pw1_ = ConvBn::make(ps, prefix + ".pw1", width, width, 1, 1, 0, rng);
    dw2_ = ps.add_param(prefix + ".dw2.w", init_conv_weight(width, 1, 3, 3, rng));
    pw2_ = ConvBn::make(ps, prefix + ".pw2", width, width, 1, 1, 0, rng);
    width_ = width;
    stride_ = stride;
  }
  Var forward(const Var& x, bool training) const override {
    Var y = conv2d(relu(x), dw1_, stride_, 1, 1, width_);
    y = pw1_.forward(y, training);
    y = conv2d(relu(y), dw2_, 1, 1, 1, width_);
    return pw2_.forward(y, training);
  }
  OpKind kind() const override { return OpKind::kSepConv3x3; }

 private:
  Var dw1_, dw2_;
  ConvBn pw1_, pw2_;
  int width_ = 0, stride_ = 1;
};

// Single dilated depthwise-separable application (dilation 2, pad 2).
class DilConv3x3 : public Op {
 public:
  DilConv3x3(ParamStore& ps, const std::string& prefix, int width, int stride,
             Rng& rng) {
    dw_ = ps.add_param(prefix + ".dw.w", init_conv_weight(width, 1, 3, 3, rng));
    pw_ = ConvBn::make(ps, prefix + ".pw", width, width, 1, 1, 0, rng);
    width_ = width;
    stride_ = stride;
  }
  Var forward(const Var& x, bool training) const override {
    Var y = conv2d(relu(x), dw_, stride_, 2, 2, width_);
    return pw_.forward(y, training);
  }
  OpKind kind() const override { return OpKind::kDilConv3x3; }

 private:
  Var dw_;
  ConvBn pw_;
  int width_ = 0, stride_ = 1;
};

class PartAware : public Op {
 public:
  PartAware(ParamStore& ps, const std::string& prefix, int width, int stride,
            const PartAwareDefaults& pd, Rng& rng) {
    cfg_.M = pd.M;
    cfg_.heads = pd.heads;
    cfg_.d = pd.d > 0 ? pd.d : width;
    cfg_.cin = width;
    cfg_.cout = width;
    cfg_.stride = stride;
    params_ = PartAwareParams::make(ps, prefix, cfg_, rng);
  }
  Var forward(const Var& x, bool) const override {
    return part_aware_forward(x, cfg_, params_);
  }
  OpKind kind() const override { return OpKind::kPartAware; }

 private:
  PartAwareConfig cfg_;
  PartAwareParams params_;
};

}  // namespace ops

inline std::unique_ptr<Op> make_op_module(OpKind kind, ParamStore& ps,
                                          const std::string& prefix, int width,
                                          int stride,
                                          const PartAwareDefaults& pd, Rng& rng) {
  switch (kind) {
    case OpKind::kZero: return std::make_unique<ops::Zero>(stride);
    case OpKind::kIdentity: return std::make_unique<ops::Identity>(stride);
    case OpKind::kMaxPool3x3: return std::make_unique<ops::MaxPool3x3>(stride);
    case OpKind::kAvgPool3x3: return std::make_unique<ops::AvgPool3x3>(stride);
    case OpKind::kSepConv3x3:
      return std::make_unique<ops::SepConv3x3>(ps, prefix, width, stride, rng);
    case OpKind::kDilConv3x3:
      return std::make_unique<ops::DilConv3x3>(ps, prefix, width, stride, rng);
    case OpKind::kPartAware:
      return std::make_unique<ops::PartAware>(ps, prefix, width, stride, pd, rng);
  }
  throw std::invalid_argument("bad OpKind");
}

}  // namespace retnas
