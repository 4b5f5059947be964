#pragma once

#include <array>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "retnas/archspace.hpp"
#include "retnas/nn.hpp"
#include "retnas/ops.hpp"

namespace retnas {

// ---------------------------------------------------------------------------
// Softmax over a masked subset of one architecture-logit row
// ---------------------------------------------------------------------------

// out[k] = softmax(alpha[idx])[k]; logits outside idx get weight zero and no
// gradient. Disabled candidates are never evaluated by the caller.
inline Var subset_softmax(const Var& alpha_row, const std::vector<int64_t>& idx) {
  const Tensor& a = alpha_row.val();
  RETNAS_CHECK(a.rank() == 1, "subset_softmax: rank-1 logits expected");
  RETNAS_CHECK(!idx.empty(), "subset_softmax: empty subset");
  for (int64_t j : idx)
    RETNAS_CHECK(j >= 0 && j < a.dim(0), "subset_softmax: index ", j,
                 " out of range for ", a.dim(0), " logits");
  const int64_t k = static_cast<int64_t>(idx.size());
  Tensor w({k});
  double m = a[idx[0]];
  for (int64_t j : idx) m = std::max(m, a[j]);
  double sum = 0.0;
  for (int64_t i = 0; i < k; ++i) {
    w[i] = std::exp(a[idx[i]] - m);
    sum += w[i];
  }
  for (int64_t i = 0; i < k; ++i) w[i] /= sum;
  return make_op(std::move(w), {alpha_row}, [idx](Node& n) {
    const NodePtr& a = n.parents[0];
    if (!a->needs_grad) return;
    double gw = 0.0;
    for (size_t i = 0; i < idx.size(); ++i) gw += n.grad.v[i] * n.val.v[i];
    for (size_t i = 0; i < idx.size(); ++i)
      a->grad.v[static_cast<size_t>(idx[i])] += n.val.v[i] * (n.grad.v[i] - gw);
  });
}

// ---------------------------------------------------------------------------
// Mixed edge: softmax-weighted sum of candidate ops
// ---------------------------------------------------------------------------

inline std::string edge_prefix(int cell, int block, int input, OpKind kind) {
  return cat("cell", cell, ".b", block, ".h", input, ".", to_string(kind));
}

class MixedEdge {
 public:
  // `enabled` empty means every op in the space; otherwise a subset mask.
  MixedEdge(OpSpace space, ParamStore& ps, int cell, int block, int input,
            int width, int stride, const PartAwareDefaults& pd, Rng& rng,
            std::vector<OpKind> enabled = {}) {
    const std::vector<OpKind> all = ops_in_space(space);
    if (enabled.empty()) enabled = all;
    for (OpKind kind : enabled) {
      int64_t ord = -1;
      for (size_t i = 0; i < all.size(); ++i)
        if (all[i] == kind) ord = static_cast<int64_t>(i);
      RETNAS_CHECK(ord >= 0, "mixed edge: op ", to_string(kind),
                   " not in space ", to_string(space));
      idx_.push_back(ord);
      ops_.push_back(make_op_module(kind, ps, edge_prefix(cell, block, input, kind),
                                    width, stride, pd, rng));
    }
  }

  // alpha_row holds one logit per op in the space.
  Var forward(const Var& x, const Var& alpha_row, bool training) const {
    Var w = subset_softmax(alpha_row, idx_);
    std::vector<Var> outs;
    outs.reserve(ops_.size());
    for (const auto& op : ops_) outs.push_back(op->forward(x, training));
    return weighted_sum(w, outs);
  }

  const std::vector<int64_t>& enabled_ordinals() const { return idx_; }

 private:
  std::vector<std::unique_ptr<Op>> ops_;
  std::vector<int64_t> idx_;
};

// ---------------------------------------------------------------------------
// Cells
// ---------------------------------------------------------------------------

// Both cell flavors share the preprocessing (1x1 conv+BN per input, stride 2
// when the producing cell ran at the coarser resolution not yet reached) and
// the output projection (1x1 conv+BN from the B concatenated block outputs).

class SupernetCell {
 public:
  // `edge_mask` non-empty restricts every edge to that op subset (tests force
  // cells to single-op behavior with it).
  SupernetCell(OpSpace space, const CellPlan& cp, int cell_index, int B,
               ParamStore& ps, const PartAwareDefaults& pd, Rng& rng,
               std::vector<OpKind> edge_mask = {}) {
    B_ = B;
    const std::string base = cat("cell", cell_index);
    pre0_ = ConvBn::make(ps, base + ".pre0", cp.in0_c, cp.width, 1,
                         cp.pre0_stride, 0, rng);
    pre1_ = ConvBn::make(ps, base + ".pre1", cp.in1_c, cp.width, 1,
                         cp.pre1_stride, 0, rng);
    edges_.reserve(static_cast<size_t>(AlphaParams::num_edges(B)));
    for (int blk = 0; blk < B; ++blk)
      for (int h = 0; h < 2 + blk; ++h) {
        const int stride = (cp.reduction && h < 2) ? cp.stride() : 1;
        edges_.emplace_back(space, ps, cell_index, blk, h, cp.width, stride,
                            pd, rng, edge_mask);
      }
    proj_ = ConvBn::make(ps, base + ".proj", static_cast<int64_t>(B) * cp.width,
                         cp.width, 1, 1, 0, rng);
  }

  // Returns {pre0(s0), pre1(s1), block_0, ..., block_{B-1}}.
  std::vector<Var> forward_blocks(const Var& s0, const Var& s1,
                                  const std::vector<Var>& alpha_rows,
                                  bool training) const {
    RETNAS_CHECK(static_cast<int>(alpha_rows.size()) ==
                     AlphaParams::num_edges(B_),
                 "cell: expected ", AlphaParams::num_edges(B_),
                 " alpha rows, got ", alpha_rows.size());
    std::vector<Var> states{pre0_.forward(s0, training),
                            pre1_.forward(s1, training)};
    for (int blk = 0; blk < B_; ++blk) {
      std::vector<Var> terms;
      terms.reserve(static_cast<size_t>(2 + blk));
      for (int h = 0; h < 2 + blk; ++h) {
        const int e = AlphaParams::edge_index(blk, h);
        terms.push_back(edges_[static_cast<size_t>(e)].forward(
            states[static_cast<size_t>(h)], alpha_rows[static_cast<size_t>(e)],
            training));
      }
      states.push_back(add_n(terms));
    }
    return states;
  }

  Var forward(const Var& s0, const Var& s1, const std::vector<Var>& alpha_rows,
              bool training) const {
    std::vector<Var> states = forward_blocks(s0, s1, alpha_rows, training);
    std::vector<Var> blocks(states.begin() + 2, states.end());
    return proj_.forward(concat_channels(blocks), training);
  }

 private:
  ConvBn pre0_, pre1_, proj_;
  std::vector<MixedEdge> edges_;
  int B_ = 0;
};

class FinalCell {
 public:
  FinalCell(const std::vector<BlockSpec>& blocks, const CellPlan& cp,
            int cell_index, ParamStore& ps, const PartAwareDefaults& pd,
            Rng& rng) {
    const std::string base = cat("cell", cell_index);
    pre0_ = ConvBn::make(ps, base + ".pre0", cp.in0_c, cp.width, 1,
                         cp.pre0_stride, 0, rng);
    pre1_ = ConvBn::make(ps, base + ".pre1", cp.in1_c, cp.width, 1,
                         cp.pre1_stride, 0, rng);
    for (int blk = 0; blk < static_cast<int>(blocks.size()); ++blk) {
      const BlockSpec& b = blocks[static_cast<size_t>(blk)];
      auto make_half = [&](int input, OpKind op) {
        const int stride = (cp.reduction && input < 2) ? cp.stride() : 1;
        owned_.push_back(make_op_module(op, ps,
                                        edge_prefix(cell_index, blk, input, op),
                                        cp.width, stride, pd, rng));
        return owned_.back().get();
      };
      Block wired;
      wired.in1 = b.i1;
      wired.in2 = b.i2;
      wired.op1 = make_half(b.i1, b.o1);
      // A block may pick the same (input, op) pair twice; reuse the module so
      // parameter names stay unique.
      wired.op2 = (b.i2 == b.i1 && b.o2 == b.o1) ? wired.op1
                                                 : make_half(b.i2, b.o2);
      blocks_.push_back(wired);
    }
    proj_ = ConvBn::make(
        ps, base + ".proj",
        static_cast<int64_t>(blocks.size()) * cp.width, cp.width, 1, 1, 0, rng);
  }

  Var forward(const Var& s0, const Var& s1, bool training) const {
    std::vector<Var> states{pre0_.forward(s0, training),
                            pre1_.forward(s1, training)};
    for (const Block& b : blocks_) {
      Var lhs = b.op1->forward(states[static_cast<size_t>(b.in1)], training);
      Var rhs = b.op2->forward(states[static_cast<size_t>(b.in2)], training);
      states.push_back(add(lhs, rhs));
    }
    std::vector<Var> blocks(states.begin() + 2, states.end());
    return proj_.forward(concat_channels(blocks), training);
  }

 private:
  struct Block {
    int in1 = 0, in2 = 0;
    const Op* op1 = nullptr;
    const Op* op2 = nullptr;
  };
  ConvBn pre0_, pre1_, proj_;
  std::vector<std::unique_ptr<Op>> owned_;
  std::vector<Block> blocks_;
};

// ---------------------------------------------------------------------------
// Head: GAP -> f -> dropout -> embedding g -> dropout -> id logits h
// ---------------------------------------------------------------------------

struct HeadOut {
  Var f;  // pooled backbone feature      [N, feat_c]
  Var g;  // retrieval embedding          [N, embed_dim]
  Var h;  // identity logits              [N, num_ids]
};

class Head {
 public:
  Head() = default;
  Head(ParamStore& ps, int64_t feat_c, const MacroConfig& cfg, Rng& rng) {
    embed_w_ = ps.add_param("head.embed.w",
                            init_linear_weight(cfg.embed_dim, feat_c, rng));
    embed_b_ = ps.add_param("head.embed.b", Tensor::zeros({cfg.embed_dim}));
    cls_w_ = ps.add_param("head.cls.w",
                          init_linear_weight(cfg.num_ids, cfg.embed_dim, rng));
    cls_b_ = ps.add_param("head.cls.b", Tensor::zeros({cfg.num_ids}));
    dropout_f_ = cfg.dropout_f;
    dropout_g_ = cfg.dropout_g;
  }

  HeadOut forward(const Var& feat, bool training, Rng* drop_rng) const {
    HeadOut out;
    out.f = global_avg_pool(feat);
    Var fd = dropout(out.f, dropout_f_, training, drop_rng);
    out.g = linear(fd, embed_w_, embed_b_);
    Var gd = dropout(out.g, dropout_g_, training, drop_rng);
    out.h = linear(gd, cls_w_, cls_b_);
    return out;
  }

 private:
  Var embed_w_, embed_b_, cls_w_, cls_b_;
  double dropout_f_ = 0.5, dropout_g_ = 0.5;
};

// ---------------------------------------------------------------------------
// Supernet
// ---------------------------------------------------------------------------

class SupernetModel {
 public:
  SupernetModel(const MacroConfig& cfg, OpSpace space, uint64_t seed,
                const PartAwareDefaults& pd = {})
      : space_(space), plan_(build_macro_plan(cfg, pd.M)) {
    Rng rng(seed);
    stem_ = ConvBn::make(ps_, "stem", 3, cfg.C, 3, 1, 1, rng);
    const int n_ops = static_cast<int>(ops_in_space(space).size());
    for (int e = 0; e < AlphaParams::num_edges(cfg.B); ++e) {
      alpha_normal_.push_back(Var::leaf(Tensor::zeros({n_ops}), true,
                                        cat("alpha.normal.", e)));
      alpha_reduction_.push_back(Var::leaf(Tensor::zeros({n_ops}), true,
                                           cat("alpha.reduction.", e)));
    }
    cells_.reserve(plan_.cells.size());
    for (size_t ci = 0; ci < plan_.cells.size(); ++ci)
      cells_.emplace_back(space, plan_.cells[ci], static_cast<int>(ci), cfg.B,
                          ps_, pd, rng);
    head_ = Head(ps_, plan_.feat_c, cfg, rng);
  }

  HeadOut forward(const Var& x, bool training, Rng* drop_rng = nullptr) const {
    check_input(x, plan_);
    Var s = stem_.forward(x, training);
    Var prev_prev = s, prev = s;
    for (size_t ci = 0; ci < cells_.size(); ++ci) {
      const auto& rows =
          plan_.cells[ci].reduction ? alpha_reduction_ : alpha_normal_;
      Var out = cells_[ci].forward(prev_prev, prev, rows, training);
      prev_prev = prev;
      prev = out;
    }
    return head_.forward(prev, training, drop_rng);
  }

  // Architecture logits, shared across all cells of the same type. Order:
  // every normal row, then every reduction row (block-major within each).
  std::vector<Var> alpha_vars() const {
    std::vector<Var> all = alpha_normal_;
    all.insert(all.end(), alpha_reduction_.begin(), alpha_reduction_.end());
    return all;
  }
  const std::vector<Var>& alpha_normal() const { return alpha_normal_; }
  const std::vector<Var>& alpha_reduction() const { return alpha_reduction_; }

  AlphaParams alpha_snapshot() const {
    AlphaParams a = AlphaParams::zeros(space_, plan_.cfg.B);
    for (size_t e = 0; e < alpha_normal_.size(); ++e) {
      a.normal[e] = alpha_normal_[e].val().v;
      a.reduction[e] = alpha_reduction_[e].val().v;
    }
    return a;
  }

  void set_alpha(const AlphaParams& a) {
    a.validate();
    RETNAS_CHECK(a.space == space_ && a.B == plan_.cfg.B,
                 "set_alpha: space/B mismatch");
    for (size_t e = 0; e < alpha_normal_.size(); ++e) {
      alpha_normal_[e].val_mut().v = a.normal[e];
      alpha_reduction_[e].val_mut().v = a.reduction[e];
    }
  }

  Genotype derive() const { return derive_genotype(alpha_snapshot()); }

  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  const MacroPlan& plan() const { return plan_; }
  OpSpace space() const { return space_; }

  static void check_input(const Var& x, const MacroPlan& plan) {
    const Tensor& xv = x.val();
    RETNAS_CHECK(xv.rank() == 4 && xv.dim(1) == 3 &&
                     xv.dim(2) == plan.cfg.in_h && xv.dim(3) == plan.cfg.in_w,
                 "forward: expected [N, 3, ", plan.cfg.in_h, ", ",
                 plan.cfg.in_w, "], got ", xv.shape_str());
  }

 private:
  OpSpace space_;
  MacroPlan plan_;
  ParamStore ps_;
  ConvBn stem_;
  std::vector<Var> alpha_normal_, alpha_reduction_;
  std::vector<SupernetCell> cells_;
  Head head_;
};

// ---------------------------------------------------------------------------
// Derived network for a fixed genotype
// ---------------------------------------------------------------------------

class FinalModel {
 public:
  FinalModel(const MacroConfig& cfg, const Genotype& g, uint64_t seed,
             const PartAwareDefaults& pd = {})
      : genotype_(g), plan_(build_macro_plan(cfg, pd.M)) {
    g.validate();
    RETNAS_CHECK(g.B == cfg.B, "final model: genotype B=", g.B,
                 " != macro B=", cfg.B);
    Rng rng(seed);
    stem_ = ConvBn::make(ps_, "stem", 3, cfg.C, 3, 1, 1, rng);
    cells_.reserve(plan_.cells.size());
    for (size_t ci = 0; ci < plan_.cells.size(); ++ci) {
      const CellPlan& cp = plan_.cells[ci];
      cells_.emplace_back(cp.reduction ? g.reduction : g.normal, cp,
                          static_cast<int>(ci), ps_, pd, rng);
    }
    head_ = Head(ps_, plan_.feat_c, cfg, rng);
  }

  HeadOut forward(const Var& x, bool training, Rng* drop_rng = nullptr) const {
    SupernetModel::check_input(x, plan_);
    Var s = stem_.forward(x, training);
    Var prev_prev = s, prev = s;
    for (const FinalCell& cell : cells_) {
      Var out = cell.forward(prev_prev, prev, training);
      prev_prev = prev;
      prev = out;
    }
    return head_.forward(prev, training, drop_rng);
  }

  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  const MacroPlan& plan() const { return plan_; }
  const Genotype& genotype() const { return genotype_; }

 private:
  Genotype genotype_;
  MacroPlan plan_;
  ParamStore ps_;
  ConvBn stem_;
  std::vector<FinalCell> cells_;
  Head head_;
};

// Copies every destination parameter/buffer whose name exists in the source
// store (shapes must agree). Returns the number of tensors copied; used to
// seed a derived network from searched supernet weights.
inline int64_t copy_weights_by_name(const ParamStore& src, ParamStore& dst) {
  int64_t copied = 0;
  for (const Var& d : dst.params()) {
    Var s = src.find_param(d.name());
    if (!s.defined()) continue;
    RETNAS_CHECK(s.val().same_shape(d.val()), "weight copy: shape mismatch for ",
                 d.name());
    const_cast<Var&>(d).val_mut() = s.val();
    ++copied;
  }
  for (const Var& d : dst.buffers()) {
    Var s = src.find_buffer(d.name());
    if (!s.defined()) continue;
    RETNAS_CHECK(s.val().same_shape(d.val()), "buffer copy: shape mismatch for ",
                 d.name());
    const_cast<Var&>(d).val_mut() = s.val();
    ++copied;
  }
  return copied;
}

// One-hot architecture logits reproducing a genotype: +`gain` on the chosen
// op of each kept edge, +`gain` on ZERO for every dropped edge. Useful for
// discretization consistency checks.
inline AlphaParams alpha_for_genotype(const Genotype& g, double gain = 40.0) {
  g.validate();
  AlphaParams a = AlphaParams::zeros(g.space, g.B);
  const std::vector<OpKind> ops = ops_in_space(g.space);
  auto ordinal = [&](OpKind k) {
    for (size_t i = 0; i < ops.size(); ++i)
      if (ops[i] == k) return i;
    throw std::invalid_argument("alpha_for_genotype: op outside space");
  };
  auto fill = [&](const std::vector<BlockSpec>& cell,
                  std::vector<std::vector<double>>& rows) {
    for (auto& row : rows) row[ordinal(OpKind::kZero)] = gain;
    for (int blk = 0; blk < g.B; ++blk) {
      const BlockSpec& b = cell[static_cast<size_t>(blk)];
      for (const auto& [input, op] :
           {std::pair{b.i1, b.o1}, std::pair{b.i2, b.o2}}) {
        auto& row = rows[static_cast<size_t>(AlphaParams::edge_index(blk, input))];
        std::fill(row.begin(), row.end(), 0.0);
        row[ordinal(op)] = gain;
      }
    }
  };
  fill(g.normal, a.normal);
  fill(g.reduction, a.reduction);
  return a;
}

}  // namespace retnas
