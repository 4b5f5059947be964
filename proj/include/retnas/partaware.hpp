#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "retnas/nn.hpp"

namespace retnas {

// Body-part feature operation: split the input into M horizontal bands,
// pool each band to a vector, project to d-dimensional body vectors, run
// self-attention across the M vectors, re-expand over space and fuse with
// the input through a 1x1 convolution.

struct PartAwareConfig {
  int M = 4;       // part count
  int d = 0;       // body-vector width
  int heads = 1;   // attention heads
  int cin = 0;
  int cout = 0;
  int stride = 1;  // applied at the fusion conv

  void validate() const {
    RETNAS_CHECK(M >= 1, "part_aware: M must be >= 1, got ", M);
    RETNAS_CHECK(d >= 1, "part_aware: d must be >= 1, got ", d);
    RETNAS_CHECK(heads >= 1 && d % heads == 0,
                 "part_aware: heads must divide d (heads=", heads, ", d=", d, ")");
    RETNAS_CHECK(cin >= 1 && cout >= 1, "part_aware: cin/cout must be >= 1");
    RETNAS_CHECK(stride == 1 || stride == 2, "part_aware: stride must be 1 or 2");
  }
};

// One part projection shared across all M parts; Q/K/V/output projections
// for the attention step; fusion conv over the channel-concatenated pair.
// All maps are bias-free.
struct PartAwareParams {
  Var w_part;  // [d, cin]
  Var w_q, w_k, w_v, w_o;  // [d, d]
  Var w_fuse;  // [cout, cin+d, 1, 1]

  static PartAwareParams make(ParamStore& ps, const std::string& prefix,
                              const PartAwareConfig& cfg, Rng& rng) {
    cfg.validate();
    PartAwareParams p;
    p.w_part = ps.add_param(prefix + ".wp", init_linear_weight(cfg.d, cfg.cin, rng));
    p.w_q = ps.add_param(prefix + ".wq", init_linear_weight(cfg.d, cfg.d, rng));
    p.w_k = ps.add_param(prefix + ".wk", init_linear_weight(cfg.d, cfg.d, rng));
    p.w_v = ps.add_param(prefix + ".wv", init_linear_weight(cfg.d, cfg.d, rng));
    p.w_o = ps.add_param(prefix + ".wo", init_linear_weight(cfg.d, cfg.d, rng));
    p.w_fuse = ps.add_param(
        prefix + ".wf", init_conv_weight(cfg.cout, cfg.cin + cfg.d, 1, 1, rng));
    return p;
  }
};

namespace detail {

// Apply a [dout, din] map to every row of [N, M, din].
inline Var project_rows(const Var& x, const Var& w) {
  const int64_t N = x.val().dim(0), M = x.val().dim(1), din = x.val().dim(2);
  Var flat = reshape(x, {N * M, din});
  Var y = linear(flat, w);
  return reshape(y, {N, M, w.val().dim(0)});
}

}  // namespace detail

// Scaled-dot-product self-attention over the M body vectors with a
// residual connection. `attn_mask`, when given, is added to every
// sample's [M, M] score matrix before the softmax (used by tests to pin
// the attention pattern).
inline Var part_self_attention(const Var& body, const PartAwareConfig& cfg,
                               const PartAwareParams& p,
                               const Tensor* attn_mask = nullptr) {
  const int64_t d = cfg.d, heads = cfg.heads, dh = d / heads;
  Var q = detail::project_rows(body, p.w_q);
  Var k = detail::project_rows(body, p.w_k);
  Var v = detail::project_rows(body, p.w_v);
  std::vector<Var> ctx_heads;
  for (int64_t h = 0; h < heads; ++h) {
    Var qh = narrow_last(q, h * dh, (h + 1) * dh);
    Var kh = narrow_last(k, h * dh, (h + 1) * dh);
    Var vh = narrow_last(v, h * dh, (h + 1) * dh);
    Var scores = scale(bmm(qh, transpose_last2(kh)),
                       1.0 / std::sqrt(static_cast<double>(dh)));
    if (attn_mask != nullptr) scores = add_const_broadcast(scores, *attn_mask);
    Var attn = softmax_last(scores);
    ctx_heads.push_back(bmm(attn, vh));
  }
  Var ctx = heads == 1 ? ctx_heads[0] : concat_last(ctx_heads);
  return add(body, detail::project_rows(ctx, p.w_o));
}

/// x: [N, cin, H, W] -> [N, cout, H/stride, W/stride].
inline Var part_aware_forward(const Var& x, const PartAwareConfig& cfg,
                              const PartAwareParams& p,
                              const Tensor* attn_mask = nullptr) {
  cfg.validate();
  const Tensor& xv = x.val();
  RETNAS_CHECK(xv.rank() == 4, "part_aware: rank-4 input expected");
  const int64_t H = xv.dim(2), W = xv.dim(3);
  RETNAS_CHECK(xv.dim(1) == cfg.cin, "part_aware: channel mismatch");
  RETNAS_CHECK(H % cfg.M == 0, "part_aware: input height ", H,
               " not divisible by M=", cfg.M);
  RETNAS_CHECK(H % cfg.stride == 0 && W % cfg.stride == 0,
               "part_aware: input not divisible by stride");

  Var pooled = band_avg_pool(x, cfg.M);                    // [N, M, cin]
  Var body = detail::project_rows(pooled, p.w_part);       // [N, M, d]
  Var attended = part_self_attention(body, cfg, p, attn_mask);
  Var enhanced = band_broadcast(attended, H, W);           // [N, d, H, W]
  Var fused = concat_channels({x, enhanced});              // [N, cin+d, H, W]
  return conv2d(fused, p.w_fuse, cfg.stride, /*pad=*/0);
}

/// Single-sample convenience wrapper: [cin, H, W] -> [cout, H/s, W/s].
inline Var part_aware_forward_single(const Var& x, const PartAwareConfig& cfg,
                                     const PartAwareParams& p,
                                     const Tensor* attn_mask = nullptr) {
  const Tensor& xv = x.val();
  RETNAS_CHECK(xv.rank() == 3, "part_aware: rank-3 input expected");
  Var x4 = reshape(x, {1, xv.dim(0), xv.dim(1), xv.dim(2)});
  Var y = part_aware_forward(x4, cfg, p, attn_mask);
  return reshape(y, {y.val().dim(1), y.val().dim(2), y.val().dim(3)});
}

// Closed-form cost. The attention terms do not depend on the input
// resolution; only the fusion conv scales with the output plane.
struct PartAwareCost {
  int64_t params = 0;
  int64_t macs_fixed = 0;       // part projection + attention, per sample
  int64_t macs_per_out_px = 0;  // fusion conv

  int64_t macs_at(int64_t in_h, int64_t in_w, int stride) const {
    const int64_t oh = (in_h + stride - 1) / stride;
    const int64_t ow = (in_w + stride - 1) / stride;
    return macs_fixed + macs_per_out_px * oh * ow;
  }
};

inline PartAwareCost part_aware_cost(const PartAwareConfig& cfg) {
  cfg.validate();
  const int64_t M = cfg.M, d = cfg.d, cin = cfg.cin, cout = cfg.cout;
  PartAwareCost c;
  c.params = cin * d          // shared part projection
             + 3 * d * d      // Q, K, V
             + d * d          // output projection
             + (cin + d) * cout;  // fusion 1x1 conv
  c.macs_fixed = M * cin * d      // part projection over M pooled vectors
                 + 3 * M * d * d  // Q, K, V
                 + 2 * M * M * d  // scores and context (per head: 2 M^2 dh)
                 + M * d * d;     // output projection
  c.macs_per_out_px = (cin + d) * cout;
  return c;
}

}  // namespace retnas
