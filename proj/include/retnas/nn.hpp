#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "retnas/autograd.hpp"
#include "retnas/rng.hpp"

namespace retnas {

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad,
                            int64_t dilation) {
  return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

// ---------------------------------------------------------------------------
// Convolution (no bias; batch norm follows every conv in this codebase)
// ---------------------------------------------------------------------------

/// x: [N, Cin, H, W], w: [Cout, Cin/groups, kh, kw] -> [N, Cout, Ho, Wo].
inline Var conv2d(const Var& x, const Var& w, int64_t stride, int64_t pad,
                  int64_t dilation = 1, int64_t groups = 1) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  RETNAS_CHECK(xv.rank() == 4 && wv.rank() == 4, "conv2d: rank-4 expected");
  const int64_t N = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int64_t Cout = wv.dim(0), Cing = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
  RETNAS_CHECK(Cin % groups == 0 && Cout % groups == 0 && Cing == Cin / groups,
               "conv2d: channel/group mismatch (Cin=", Cin, " Cout=", Cout,
               " groups=", groups, ")");
  const int64_t Ho = conv_out_dim(H, kh, stride, pad, dilation);
  const int64_t Wo = conv_out_dim(W, kw, stride, pad, dilation);
  RETNAS_CHECK(Ho > 0 && Wo > 0, "conv2d: empty output");
  const int64_t cout_g = Cout / groups;

  Tensor out({N, Cout, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t g = 0; g < groups; ++g)
      for (int64_t oc = 0; oc < cout_g; ++oc) {
        const int64_t co = g * cout_g + oc;
        for (int64_t oh = 0; oh < Ho; ++oh)
          for (int64_t ow = 0; ow < Wo; ++ow) {
            double acc = 0.0;
            for (int64_t ic = 0; ic < Cing; ++ic) {
              const int64_t ci = g * Cing + ic;
              for (int64_t r = 0; r < kh; ++r) {
                const int64_t ih = oh * stride - pad + r * dilation;
                if (ih < 0 || ih >= H) continue;
                for (int64_t s = 0; s < kw; ++s) {
                  const int64_t iw = ow * stride - pad + s * dilation;
                  if (iw < 0 || iw >= W) continue;
                  acc += xv.at4(n, ci, ih, iw) * wv.at4(co, ic, r, s);
                }
              }
            }
            out.at4(n, co, oh, ow) = acc;
          }
      }

  return make_op(std::move(out), {x, w},
                 [stride, pad, dilation, groups, N, Cin, H, W, Cout, Cing, kh,
                  kw, Ho, Wo, cout_g](Node& node) {
                   const NodePtr& xp = node.parents[0];
                   const NodePtr& wp = node.parents[1];
                   const Tensor& xv = xp->val;
                   const Tensor& wv = wp->val;
                   for (int64_t n = 0; n < N; ++n)
                     for (int64_t g = 0; g < groups; ++g)
                       for (int64_t oc = 0; oc < cout_g; ++oc) {
                         const int64_t co = g * cout_g + oc;
                         for (int64_t oh = 0; oh < Ho; ++oh)
                           for (int64_t ow = 0; ow < Wo; ++ow) {
                             const double go = node.grad.at4(n, co, oh, ow);
                             if (go == 0.0) continue;
                             for (int64_t ic = 0; ic < Cing; ++ic) {
                               const int64_t ci = g * Cing + ic;
                               for (int64_t r = 0; r < kh; ++r) {
                                 const int64_t ih = oh * stride - pad + r * dilation;
                                 if (ih < 0 || ih >= H) continue;
                                 for (int64_t s = 0; s < kw; ++s) {
                                   const int64_t iw = ow * stride - pad + s * dilation;
                                   if (iw < 0 || iw >= W) continue;
                                   if (xp->needs_grad)
                                     xp->grad.at4(n, ci, ih, iw) +=
                                         go * wv.at4(co, ic, r, s);
                                   if (wp->needs_grad)
                                     wp->grad.at4(co, ic, r, s) +=
                                         go * xv.at4(n, ci, ih, iw);
                                 }
                               }
                             }
                           }
                       }
                 });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

// Training mode normalizes with biased batch statistics and updates the
// running buffers in place as a side effect of the forward pass. Eval mode
// normalizes with the running buffers and keeps them fixed.
inline Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
                      Var running_mean, Var running_var, bool training,
                      double momentum = 0.1, double eps = 1e-5) {
  const Tensor& xv = x.val();
  RETNAS_CHECK(xv.rank() == 4, "batch_norm: rank-4 expected");
  const int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  RETNAS_CHECK(gamma.val().numel() == C && beta.val().numel() == C,
               "batch_norm: affine size mismatch");
  const int64_t cnt = N * H * W;

  Tensor mean({C}), var({C});
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      double m = 0.0;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t w = 0; w < W; ++w) m += xv.at4(n, c, h, w);
      m /= static_cast<double>(cnt);
      double v = 0.0;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t w = 0; w < W; ++w) {
            const double d = xv.at4(n, c, h, w) - m;
            v += d * d;
          }
      v /= static_cast<double>(cnt);
      mean[c] = m;
      var[c] = v;
      running_mean.val_mut()[c] = (1.0 - momentum) * running_mean.val()[c] + momentum * m;
      running_var.val_mut()[c] = (1.0 - momentum) * running_var.val()[c] + momentum * v;
    }
  } else {
    mean = running_mean.val();
    var = running_var.val();
  }

  Tensor xhat({N, C, H, W});
  Tensor out({N, C, H, W});
  for (int64_t c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(var[c] + eps);
    const double g = gamma.val()[c], b = beta.val()[c];
    for (int64_t n = 0; n < N; ++n)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) {
          const double xh = (xv.at4(n, c, h, w) - mean[c]) * inv;
          xhat.at4(n, c, h, w) = xh;
          out.at4(n, c, h, w) = g * xh + b;
        }
  }

  return make_op(
      std::move(out), {x, gamma, beta},
      [training, eps, N, C, H, W, cnt, xhat = std::move(xhat),
       var = std::move(var)](Node& node) {
        const NodePtr& xp = node.parents[0];
        const NodePtr& gp = node.parents[1];
        const NodePtr& bp = node.parents[2];
        for (int64_t c = 0; c < C; ++c) {
          const double inv = 1.0 / std::sqrt(var[c] + eps);
          const double g = gp->val[c];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int64_t n = 0; n < N; ++n)
            for (int64_t h = 0; h < H; ++h)
              for (int64_t w = 0; w < W; ++w) {
                const double dy = node.grad.at4(n, c, h, w);
                sum_dy += dy;
                sum_dy_xhat += dy * xhat.at4(n, c, h, w);
              }
          if (bp->needs_grad) bp->grad[c] += sum_dy;
          if (gp->needs_grad) gp->grad[c] += sum_dy_xhat;
          if (!xp->needs_grad) continue;
          if (training) {
            const double m_dy = sum_dy / static_cast<double>(cnt);
            const double m_dy_xhat = sum_dy_xhat / static_cast<double>(cnt);
            for (int64_t n = 0; n < N; ++n)
              for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                  const double dy = node.grad.at4(n, c, h, w);
                  xp->grad.at4(n, c, h, w) +=
                      g * inv * (dy - m_dy - xhat.at4(n, c, h, w) * m_dy_xhat);
                }
          } else {
            for (int64_t n = 0; n < N; ++n)
              for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w)
                  xp->grad.at4(n, c, h, w) += g * inv * node.grad.at4(n, c, h, w);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Pooling and subsampling
// ---------------------------------------------------------------------------

inline Var max_pool(const Var& x, int64_t k, int64_t stride, int64_t pad) {
  const Tensor& xv = x.val();
  RETNAS_CHECK(xv.rank() == 4, "max_pool: rank-4 expected");
  const int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int64_t Ho = conv_out_dim(H, k, stride, pad, 1);
  const int64_t Wo = conv_out_dim(W, k, stride, pad, 1);
  Tensor out({N, C, Ho, Wo});
  std::vector<int64_t> argmax(static_cast<size_t>(out.numel()));
  int64_t oi = 0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow, ++oi) {
          double best = -1e300;
          int64_t best_idx = -1;
          for (int64_t r = 0; r < k; ++r) {
            const int64_t ih = oh * stride - pad + r;
            if (ih < 0 || ih >= H) continue;
            for (int64_t s = 0; s < k; ++s) {
              const int64_t iw = ow * stride - pad + s;
              if (iw < 0 || iw >= W) continue;
              const double v = xv.at4(n, c, ih, iw);
              if (v > best) {
                best = v;
                best_idx = ((n * C + c) * H + ih) * W + iw;
              }
            }
          }
          out[oi] = best;
          argmax[static_cast<size_t>(oi)] = best_idx;
        }
  return make_op(std::move(out), {x}, [argmax = std::move(argmax)](Node& node) {
    if (!node.parents[0]->needs_grad) return;
    for (size_t i = 0; i < argmax.size(); ++i)
      node.parents[0]->grad[argmax[i]] += node.grad[static_cast<int64_t>(i)];
  });
}

// Average pool; padding cells are excluded from the divisor.
inline Var avg_pool(const Var& x, int64_t k, int64_t stride, int64_t pad) {
  const Tensor& xv = x.val();
  RETNAS_CHECK(xv.rank() == 4, "avg_pool: rank-4 expected");
  const int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int64_t Ho = conv_out_dim(H, k, stride, pad, 1);
  const int64_t Wo = conv_out_dim(W, k, stride, pad, 1);
  Tensor out({N, C, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow) {
          double acc = 0.0;
          int64_t cntv = 0;
          for (int64_t r = 0; r < k; ++r) {
            const int64_t ih = oh * stride - pad + r;
            if (ih < 0 || ih >= H) continue;
            for (int64_t s = 0; s < k; ++s) {
              const int64_t iw = ow * stride - pad + s;
              if (iw < 0 || iw >= W) continue;
              acc += xv.at4(n, c, ih, iw);
              ++cntv;
            }
          }
          out.at4(n, c, oh, ow) = acc / static_cast<double>(cntv);
        }
  return make_op(std::move(out), {x}, [k, stride, pad, N, C, H, W, Ho, Wo](Node& node) {
    if (!node.parents[0]->needs_grad) return;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t oh = 0; oh < Ho; ++oh)
          for (int64_t ow = 0; ow < Wo; ++ow) {
            int64_t cntv = 0;
            for (int64_t r = 0; r < k; ++r) {
              const int64_t ih = oh * stride - pad + r;
              if (ih < 0 || ih >= H) continue;
              for (int64_t s = 0; s < k; ++s) {
                const int64_t iw = ow * stride - pad + s;
                if (iw < 0 || iw >= W) continue;
                ++cntv;
              }
            }
            const double g = node.grad.at4(n, c, oh, ow) / static_cast<double>(cntv);
            for (int64_t r = 0; r < k; ++r) {
              const int64_t ih = oh * stride - pad + r;
              if (ih < 0 || ih >= H) continue;
              for (int64_t s = 0; s < k; ++s) {
                const int64_t iw = ow * stride - pad + s;
                if (iw < 0 || iw >= W) continue;
                node.parents[0]->grad.at4(n, c, ih, iw) += g;
              }
            }
          }
  });
}

// Parameter-free stride-2 identity: keep every other pixel.
inline Var subsample2(const Var& x) {
  const Tensor& xv = x.val();
  RETNAS_CHECK(xv.rank() == 4, "subsample2: rank-4 expected");
  const int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int64_t Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  Tensor out({N, C, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t h = 0; h < Ho; ++h)
        for (int64_t w = 0; w < Wo; ++w)
          out.at4(n, c, h, w) = xv.at4(n, c, 2 * h, 2 * w);
  return make_op(std::move(out), {x}, [N, C, Ho, Wo](Node& node) {
    if (!node.parents[0]->needs_grad) return;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t h = 0; h < Ho; ++h)
          for (int64_t w = 0; w < Wo; ++w)
            node.parents[0]->grad.at4(n, c, 2 * h, 2 * w) +=
                node.grad.at4(n, c, h, w);
  });
}

inline Var global_avg_pool(const Var& x) {
  const Tensor& xv = x.val();
  RETNAS_CHECK(xv.rank() == 4, "global_avg_pool: rank-4 expected");
  const int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out({N, C});
  const double inv = 1.0 / static_cast<double>(H * W);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) acc += xv.at4(n, c, h, w);
      out.at2(n, c) = acc * inv;
    }
  return make_op(std::move(out), {x}, [N, C, H, W, inv](Node& node) {
    if (!node.parents[0]->needs_grad) return;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const double g = node.grad.at2(n, c) * inv;
        for (int64_t h = 0; h < H; ++h)
          for (int64_t w = 0; w < W; ++w) node.parents[0]->grad.at4(n, c, h, w) += g;
      }
  });
}

// Split [N, C, H, W] into M horizontal bands and average each band over
// space: -> [N, M, C]. H must be divisible by M.
inline Var band_avg_pool(const Var& x, int64_t M) {
  const Tensor& xv = x.val();
  RETNAS_CHECK(xv.rank() == 4, "band_avg_pool: rank-4 expected");
  const int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  RETNAS_CHECK(M >= 1 && H % M == 0, "band_avg_pool: height ", H,
               " not divisible by M=", M);
  const int64_t Hb = H / M;
  const double inv = 1.0 / static_cast<double>(Hb * W);
  Tensor out({N, M, C});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t m = 0; m < M; ++m)
      for (int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int64_t h = m * Hb; h < (m + 1) * Hb; ++h)
          for (int64_t w = 0; w < W; ++w) acc += xv.at4(n, c, h, w);
        out.at3(n, m, c) = acc * inv;
      }
  return make_op(std::move(out), {x}, [N, C, W, M, Hb, inv](Node& node) {
    if (!node.parents[0]->needs_grad) return;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t m = 0; m < M; ++m)
        for (int64_t c = 0; c < C; ++c) {
          const double g = node.grad.at3(n, m, c) * inv;
          for (int64_t h = m * Hb; h < (m + 1) * Hb; ++h)
            for (int64_t w = 0; w < W; ++w)
              node.parents[0]->grad.at4(n, c, h, w) += g;
        }
  });
}

// Inverse of band pooling: repeat each of M vectors over its band's
// spatial extent. [N, M, d] -> [N, d, H, W].
inline Var band_broadcast(const Var& a, int64_t H, int64_t W) {
  const Tensor& av = a.val();
  RETNAS_CHECK(av.rank() == 3, "band_broadcast: rank-3 expected");
  const int64_t N = av.dim(0), M = av.dim(1), d = av.dim(2);
  RETNAS_CHECK(H % M == 0, "band_broadcast: height ", H, " not divisible by M=", M);
  const int64_t Hb = H / M;
  Tensor out({N, d, H, W});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t m = 0; m < M; ++m)
      for (int64_t c = 0; c < d; ++c) {
        const double v = av.at3(n, m, c);
        for (int64_t h = m * Hb; h < (m + 1) * Hb; ++h)
          for (int64_t w = 0; w < W; ++w) out.at4(n, c, h, w) = v;
      }
  return make_op(std::move(out), {a}, [N, M, d, Hb, W](Node& node) {
    if (!node.parents[0]->needs_grad) return;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t m = 0; m < M; ++m)
        for (int64_t c = 0; c < d; ++c) {
          double g = 0.0;
          for (int64_t h = m * Hb; h < (m + 1) * Hb; ++h)
            for (int64_t w = 0; w < W; ++w) g += node.grad.at4(n, c, h, w);
          node.parents[0]->grad.at3(n, m, c) += g;
        }
  });
}

// ---------------------------------------------------------------------------
// Linear, dropout
// ---------------------------------------------------------------------------

/// x: [N, din], w: [dout, din], b: [dout] (optional, pass undefined Var).
inline Var linear(const Var& x, const Var& w, const Var& b = {}) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  RETNAS_CHECK(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(1),
               "linear: shape mismatch ", xv.shape_str(), " vs ", wv.shape_str());
  const int64_t N = xv.dim(0), din = xv.dim(1), dout = wv.dim(0);
  Tensor out({N, dout});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < dout; ++o) {
      double acc = b.defined() ? b.val()[o] : 0.0;
      for (int64_t i = 0; i < din; ++i) acc += xv.at2(n, i) * wv.at2(o, i);
      out.at2(n, o) = acc;
    }
  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make_op(std::move(out), std::move(parents), [N, din, dout](Node& node) {
    const NodePtr& xp = node.parents[0];
    const NodePtr& wp = node.parents[1];
    for (int64_t n = 0; n < N; ++n)
      for (int64_t o = 0; o < dout; ++o) {
        const double g = node.grad.at2(n, o);
        if (g == 0.0) continue;
        if (xp->needs_grad)
          for (int64_t i = 0; i < din; ++i)
            xp->grad.at2(n, i) += g * wp->val.at2(o, i);
        if (wp->needs_grad)
          for (int64_t i = 0; i < din; ++i)
            wp->grad.at2(o, i) += g * xp->val.at2(n, i);
      }
    if (node.parents.size() > 2 && node.parents[2]->needs_grad)
      for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < dout; ++o)
          node.parents[2]->grad[o] += node.grad.at2(n, o);
  });
}

// Inverted dropout. Identity when not training or p == 0 (no rng draws).
inline Var dropout(const Var& x, double p, bool training, Rng* rng) {
  RETNAS_CHECK(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1), got ", p);
  if (!training || p == 0.0) return x;
  RETNAS_CHECK(rng != nullptr, "dropout: rng required in training mode");
  const double keep = 1.0 - p;
  Tensor mask(x.val().shape);
  for (double& m : mask.v) m = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
  Tensor out = x.val();
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= mask.v[i];
  return make_op(std::move(out), {x}, [mask = std::move(mask)](Node& node) {
    if (!node.parents[0]->needs_grad) return;
    for (size_t i = 0; i < node.grad.v.size(); ++i)
      node.parents[0]->grad.v[i] += mask.v[i] * node.grad.v[i];
  });
}

// ---------------------------------------------------------------------------
// Parameter registry
// ---------------------------------------------------------------------------

// Owns the leaf Vars of a network: trainable parameters and
// non-trainable buffers (batch-norm running statistics).
class ParamStore {
 public:
  Var add_param(const std::string& name, Tensor t) {
    RETNAS_CHECK(!index_.count(name), "duplicate parameter name: ", name);
    Var v = Var::leaf(std::move(t), /*needs_grad=*/true, name);
    index_[name] = params_.size();
    params_.push_back(v);
    return v;
  }

  Var add_buffer(const std::string& name, Tensor t) {
    RETNAS_CHECK(!buffer_index_.count(name), "duplicate buffer name: ", name);
    Var v = Var::leaf(std::move(t), /*needs_grad=*/false, name);
    buffer_index_[name] = buffers_.size();
    buffers_.push_back(v);
    return v;
  }

  const std::vector<Var>& params() const { return params_; }
  const std::vector<Var>& buffers() const { return buffers_; }

  Var find_param(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? Var() : params_[it->second];
  }
  Var find_buffer(const std::string& name) const {
    auto it = buffer_index_.find(name);
    return it == buffer_index_.end() ? Var() : buffers_[it->second];
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const Var& p : params_) n += p.val().numel();
    return n;
  }

 private:
  std::vector<Var> params_;
  std::vector<Var> buffers_;
  std::unordered_map<std::string, size_t> index_;
  std::unordered_map<std::string, size_t> buffer_index_;
};

// Fan-out-scaled Gaussian for convolutions, fan-in-scaled for linear maps.
inline Tensor init_conv_weight(int64_t cout, int64_t cin_g, int64_t kh, int64_t kw,
                               Rng& rng) {
  Tensor w({cout, cin_g, kh, kw});
  const double stddev = std::sqrt(2.0 / static_cast<double>(cout * kh * kw));
  for (double& x : w.v) x = rng.normal(0.0, stddev);
  return w;
}

inline Tensor init_linear_weight(int64_t dout, int64_t din, Rng& rng) {
  Tensor w({dout, din});
  const double stddev = std::sqrt(2.0 / static_cast<double>(din));
  for (double& x : w.v) x = rng.normal(0.0, stddev);
  return w;
}

// ---------------------------------------------------------------------------
// Conv + BN blocks used everywhere in the macro network
// ---------------------------------------------------------------------------

struct ConvBn {
  Var w, gamma, beta, rmean, rvar;
  int64_t stride = 1, pad = 0, dilation = 1, groups = 1;

  static ConvBn make(ParamStore& ps, const std::string& prefix, int64_t cin,
                     int64_t cout, int64_t k, int64_t stride, int64_t pad,
                     Rng& rng, int64_t dilation = 1, int64_t groups = 1) {
    ConvBn m;
    m.w = ps.add_param(prefix + ".conv.w",
                       init_conv_weight(cout, cin / groups, k, k, rng));
    m.gamma = ps.add_param(prefix + ".bn.gamma", Tensor::full({cout}, 1.0));
    m.beta = ps.add_param(prefix + ".bn.beta", Tensor::zeros({cout}));
    m.rmean = ps.add_buffer(prefix + ".bn.rmean", Tensor::zeros({cout}));
    m.rvar = ps.add_buffer(prefix + ".bn.rvar", Tensor::full({cout}, 1.0));
    m.stride = stride;
    m.pad = pad;
    m.dilation = dilation;
    m.groups = groups;
    return m;
  }

  Var forward(const Var& x, bool training) const {
    Var y = conv2d(x, w, stride, pad, dilation, groups);
    return batch_norm(y, gamma, beta, rmean, rvar, training);
  }
};

}  // namespace retnas
