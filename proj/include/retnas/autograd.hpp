#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "retnas/tensor.hpp"

namespace retnas {

// Reverse-mode tape. Each forward op allocates a Node whose backprop
// closure scatters this->grad into its parents. Nodes are created in
// topological order (monotone sequence ids), so backward() is a sort by
// creation order plus one sweep.

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor val;
  Tensor grad;  // allocated by backward() for reachable grad nodes
  bool needs_grad = false;
  uint64_t seq = 0;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backprop;
  std::string name;  // set for parameters/buffers
};

inline uint64_t next_seq() {
  static std::atomic<uint64_t> counter{0};
  return ++counter;
}

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : n_(std::move(n)) {}

  static Var leaf(Tensor t, bool needs_grad = false, std::string name = {}) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    n->needs_grad = needs_grad;
    n->seq = next_seq();
    n->name = std::move(name);
    return Var(n);
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Tensor& val() const { return n_->val; }
  Tensor& val_mut() { return n_->val; }  // optimizers update leaves in place
  const Tensor& grad() const { return n_->grad; }
  Tensor& grad_mut() { return n_->grad; }
  bool needs_grad() const { return n_->needs_grad; }
  const std::string& name() const { return n_->name; }
  const NodePtr& node() const { return n_; }

 private:
  NodePtr n_;
};

inline Var make_op(Tensor out, std::vector<Var> parents,
                   std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->val = std::move(out);
  n->seq = next_seq();
  for (const Var& p : parents) {
    n->parents.push_back(p.node());
    if (p.node()->needs_grad) n->needs_grad = true;
  }
  if (n->needs_grad) n->backprop = std::move(backprop);
  return Var(n);
}

// Accumulate g into p's grad if p participates in the tape.
inline void accum(const NodePtr& p, const Tensor& g) {
  if (!p->needs_grad) return;
  for (size_t i = 0; i < g.v.size(); ++i) p->grad.v[i] += g.v[i];
}

// Seeds d(root)/d(root) = 1 and sweeps the tape. Grads of all reachable
// grad-requiring nodes are freshly allocated, so no explicit zeroing is
// needed between steps.
inline void backward(const Var& root) {
  RETNAS_CHECK(root.defined() && root.val().numel() == 1,
               "backward: root must be a scalar");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<NodePtr> stack{root.node()};
  std::vector<NodePtr> keepalive;
  while (!stack.empty()) {
    NodePtr n = stack.back();
    stack.pop_back();
    if (!n->needs_grad || seen.count(n.get())) continue;
    seen.insert(n.get());
    keepalive.push_back(n);
    order.push_back(n.get());
    for (const NodePtr& p : n->parents) stack.push_back(p);
  }
  for (Node* n : order) n->grad = Tensor::zeros(n->val.shape);
  root.node()->grad.v[0] = 1.0;
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });
  for (Node* n : order)
    if (n->backprop) n->backprop(*n);
}

// ---------------------------------------------------------------------------
// Elementwise / structural ops
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  RETNAS_CHECK(a.val().same_shape(b.val()), "add: shape mismatch ",
               a.val().shape_str(), " vs ", b.val().shape_str());
  Tensor out = a.val();
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.val().v[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    accum(n.parents[0], n.grad);
    accum(n.parents[1], n.grad);
  });
}

inline Var add_n(const std::vector<Var>& xs) {
  RETNAS_CHECK(!xs.empty(), "add_n: empty input");
  Tensor out = xs[0].val();
  for (size_t k = 1; k < xs.size(); ++k) {
    RETNAS_CHECK(out.same_shape(xs[k].val()), "add_n: shape mismatch");
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += xs[k].val().v[i];
  }
  return make_op(std::move(out), xs, [](Node& n) {
    for (const NodePtr& p : n.parents) accum(p, n.grad);
  });
}

inline Var scale(const Var& a, double c) {
  Tensor out = a.val();
  for (double& x : out.v) x *= c;
  return make_op(std::move(out), {a}, [c](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    for (size_t i = 0; i < n.grad.v.size(); ++i)
      n.parents[0]->grad.v[i] += c * n.grad.v[i];
  });
}

inline Var mul(const Var& a, const Var& b) {
  RETNAS_CHECK(a.val().same_shape(b.val()), "mul: shape mismatch");
  Tensor out = a.val();
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.val().v[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = n.parents[0]->val;
    const Tensor& bv = n.parents[1]->val;
    if (n.parents[0]->needs_grad)
      for (size_t i = 0; i < n.grad.v.size(); ++i)
        n.parents[0]->grad.v[i] += bv.v[i] * n.grad.v[i];
    if (n.parents[1]->needs_grad)
      for (size_t i = 0; i < n.grad.v.size(); ++i)
        n.parents[1]->grad.v[i] += av.v[i] * n.grad.v[i];
  });
}

// out = sum_k w[k] * t_k. Weights come first in the parent list.
inline Var weighted_sum(const Var& w, const std::vector<Var>& ts) {
  RETNAS_CHECK(w.val().rank() == 1 &&
                   w.val().dim(0) == static_cast<int64_t>(ts.size()),
               "weighted_sum: weight/operand count mismatch");
  Tensor out = Tensor::zeros(ts[0].val().shape);
  for (size_t k = 0; k < ts.size(); ++k) {
    RETNAS_CHECK(out.same_shape(ts[k].val()), "weighted_sum: shape mismatch");
    const double wk = w.val()[static_cast<int64_t>(k)];
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += wk * ts[k].val().v[i];
  }
  std::vector<Var> parents{w};
  parents.insert(parents.end(), ts.begin(), ts.end());
  return make_op(std::move(out), std::move(parents), [](Node& n) {
    const NodePtr& wn = n.parents[0];
    for (size_t k = 1; k < n.parents.size(); ++k) {
      const NodePtr& tk = n.parents[k];
      const double wk = wn->val[static_cast<int64_t>(k - 1)];
      if (tk->needs_grad)
        for (size_t i = 0; i < n.grad.v.size(); ++i)
          tk->grad.v[i] += wk * n.grad.v[i];
      if (wn->needs_grad) wn->grad[static_cast<int64_t>(k - 1)] += dot(n.grad, tk->val);
    }
  });
}

inline Var relu(const Var& a) {
  Tensor out = a.val();
  for (double& x : out.v) x = x > 0.0 ? x : 0.0;
  return make_op(std::move(out), {a}, [](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    const Tensor& x = n.parents[0]->val;
    for (size_t i = 0; i < n.grad.v.size(); ++i)
      if (x.v[i] > 0.0) n.parents[0]->grad.v[i] += n.grad.v[i];
  });
}

inline Var reshape(const Var& a, std::vector<int64_t> new_shape) {
  RETNAS_CHECK(Tensor::numel_of(new_shape) == a.val().numel(),
               "reshape: numel mismatch");
  Tensor out = a.val();
  out.shape = std::move(new_shape);
  return make_op(std::move(out), {a}, [](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    for (size_t i = 0; i < n.grad.v.size(); ++i)
      n.parents[0]->grad.v[i] += n.grad.v[i];
  });
}

// Concatenate [N, C_k, H, W] tensors along the channel axis.
inline Var concat_channels(const std::vector<Var>& xs) {
  RETNAS_CHECK(!xs.empty(), "concat_channels: empty input");
  const Tensor& x0 = xs[0].val();
  RETNAS_CHECK(x0.rank() == 4, "concat_channels: rank-4 tensors expected");
  int64_t ctot = 0;
  for (const Var& x : xs) {
    RETNAS_CHECK(x.val().rank() == 4 && x.val().dim(0) == x0.dim(0) &&
                     x.val().dim(2) == x0.dim(2) && x.val().dim(3) == x0.dim(3),
                 "concat_channels: incompatible shapes");
    ctot += x.val().dim(1);
  }
  const int64_t N = x0.dim(0), H = x0.dim(2), W = x0.dim(3);
  Tensor out({N, ctot, H, W});
  int64_t coff = 0;
  for (const Var& x : xs) {
    const Tensor& t = x.val();
    const int64_t C = t.dim(1);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t w = 0; w < W; ++w)
            out.at4(n, coff + c, h, w) = t.at4(n, c, h, w);
    coff += C;
  }
  return make_op(std::move(out), xs, [](Node& n) {
    const int64_t N = n.val.dim(0), H = n.val.dim(2), W = n.val.dim(3);
    int64_t coff = 0;
    for (const NodePtr& p : n.parents) {
      const int64_t C = p->val.dim(1);
      if (p->needs_grad)
        for (int64_t b = 0; b < N; ++b)
          for (int64_t c = 0; c < C; ++c)
            for (int64_t h = 0; h < H; ++h)
              for (int64_t w = 0; w < W; ++w)
                p->grad.at4(b, c, h, w) += n.grad.at4(b, coff + c, h, w);
      coff += C;
    }
  });
}

// ---------------------------------------------------------------------------
// Small dense algebra (used by the attention block and heads)
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  RETNAS_CHECK(a.val().rank() == 2 && b.val().rank() == 2 &&
                   a.val().dim(1) == b.val().dim(0),
               "matmul: shape mismatch");
  const int64_t M = a.val().dim(0), K = a.val().dim(1), N = b.val().dim(1);
  Tensor out({M, N});
  for (int64_t i = 0; i < M; ++i)
    for (int64_t k = 0; k < K; ++k) {
      const double av = a.val().at2(i, k);
      for (int64_t j = 0; j < N; ++j) out.at2(i, j) += av * b.val().at2(k, j);
    }
  return make_op(std::move(out), {a, b}, [M, K, N](Node& n) {
    const Tensor& av = n.parents[0]->val;
    const Tensor& bv = n.parents[1]->val;
    if (n.parents[0]->needs_grad)
      for (int64_t i = 0; i < M; ++i)
        for (int64_t j = 0; j < N; ++j) {
          const double g = n.grad.at2(i, j);
          for (int64_t k = 0; k < K; ++k)
            n.parents[0]->grad.at2(i, k) += g * bv.at2(k, j);
        }
    if (n.parents[1]->needs_grad)
      for (int64_t i = 0; i < M; ++i)
        for (int64_t k = 0; k < K; ++k) {
          const double a_ik = av.at2(i, k);
          for (int64_t j = 0; j < N; ++j)
            n.parents[1]->grad.at2(k, j) += a_ik * n.grad.at2(i, j);
        }
  });
}

// Batched matmul: [B, M, K] x [B, K, N] -> [B, M, N].
inline Var bmm(const Var& a, const Var& b) {
  RETNAS_CHECK(a.val().rank() == 3 && b.val().rank() == 3 &&
                   a.val().dim(0) == b.val().dim(0) &&
                   a.val().dim(2) == b.val().dim(1),
               "bmm: shape mismatch");
  const int64_t B = a.val().dim(0), M = a.val().dim(1), K = a.val().dim(2),
                N = b.val().dim(2);
  Tensor out({B, M, N});
  for (int64_t s = 0; s < B; ++s)
    for (int64_t i = 0; i < M; ++i)
      for (int64_t k = 0; k < K; ++k) {
        const double av = a.val().at3(s, i, k);
        for (int64_t j = 0; j < N; ++j)
          out.at3(s, i, j) += av * b.val().at3(s, k, j);
      }
  return make_op(std::move(out), {a, b}, [B, M, K, N](Node& n) {
    const Tensor& av = n.parents[0]->val;
    const Tensor& bv = n.parents[1]->val;
    if (n.parents[0]->needs_grad)
      for (int64_t s = 0; s < B; ++s)
        for (int64_t i = 0; i < M; ++i)
          for (int64_t j = 0; j < N; ++j) {
            const double g = n.grad.at3(s, i, j);
            for (int64_t k = 0; k < K; ++k)
              n.parents[0]->grad.at3(s, i, k) += g * bv.at3(s, k, j);
          }
    if (n.parents[1]->needs_grad)
      for (int64_t s = 0; s < B; ++s)
        for (int64_t i = 0; i < M; ++i)
          for (int64_t k = 0; k < K; ++k) {
            const double a_ik = av.at3(s, i, k);
            for (int64_t j = 0; j < N; ++j)
              n.parents[1]->grad.at3(s, k, j) += a_ik * n.grad.at3(s, i, j);
          }
  });
}

// Transpose the last two axes of a rank-3 tensor.
inline Var transpose_last2(const Var& a) {
  RETNAS_CHECK(a.val().rank() == 3, "transpose_last2: rank-3 expected");
  const int64_t B = a.val().dim(0), M = a.val().dim(1), N = a.val().dim(2);
  Tensor out({B, N, M});
  for (int64_t s = 0; s < B; ++s)
    for (int64_t i = 0; i < M; ++i)
      for (int64_t j = 0; j < N; ++j) out.at3(s, j, i) = a.val().at3(s, i, j);
  return make_op(std::move(out), {a}, [B, M, N](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    for (int64_t s = 0; s < B; ++s)
      for (int64_t i = 0; i < M; ++i)
        for (int64_t j = 0; j < N; ++j)
          n.parents[0]->grad.at3(s, i, j) += n.grad.at3(s, j, i);
  });
}

// Columns [lo, hi) of the last axis of a rank-3 tensor.
inline Var narrow_last(const Var& a, int64_t lo, int64_t hi) {
  RETNAS_CHECK(a.val().rank() == 3 && lo >= 0 && hi > lo && hi <= a.val().dim(2),
               "narrow_last: bad range");
  const int64_t B = a.val().dim(0), M = a.val().dim(1), W = hi - lo;
  Tensor out({B, M, W});
  for (int64_t s = 0; s < B; ++s)
    for (int64_t i = 0; i < M; ++i)
      for (int64_t j = 0; j < W; ++j) out.at3(s, i, j) = a.val().at3(s, i, lo + j);
  return make_op(std::move(out), {a}, [B, M, W, lo](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    for (int64_t s = 0; s < B; ++s)
      for (int64_t i = 0; i < M; ++i)
        for (int64_t j = 0; j < W; ++j)
          n.parents[0]->grad.at3(s, i, lo + j) += n.grad.at3(s, i, j);
  });
}

// Concatenate rank-3 tensors along the last axis.
inline Var concat_last(const std::vector<Var>& xs) {
  RETNAS_CHECK(!xs.empty(), "concat_last: empty input");
  const int64_t B = xs[0].val().dim(0), M = xs[0].val().dim(1);
  int64_t W = 0;
  for (const Var& x : xs) {
    RETNAS_CHECK(x.val().rank() == 3 && x.val().dim(0) == B && x.val().dim(1) == M,
                 "concat_last: incompatible shapes");
    W += x.val().dim(2);
  }
  Tensor out({B, M, W});
  int64_t off = 0;
  for (const Var& x : xs) {
    const int64_t w = x.val().dim(2);
    for (int64_t s = 0; s < B; ++s)
      for (int64_t i = 0; i < M; ++i)
        for (int64_t j = 0; j < w; ++j) out.at3(s, i, off + j) = x.val().at3(s, i, j);
    off += w;
  }
  return make_op(std::move(out), xs, [B, M](Node& n) {
    int64_t off = 0;
    for (const NodePtr& p : n.parents) {
      const int64_t w = p->val.dim(2);
      if (p->needs_grad)
        for (int64_t s = 0; s < B; ++s)
          for (int64_t i = 0; i < M; ++i)
            for (int64_t j = 0; j < w; ++j)
              p->grad.at3(s, i, j) += n.grad.at3(s, i, off + j);
      off += w;
    }
  });
}

// Softmax over the last axis (any rank, treated as rows).
inline Var softmax_last(const Var& a) {
  const Tensor& x = a.val();
  RETNAS_CHECK(x.rank() >= 1, "softmax_last: rank >= 1 expected");
  const int64_t K = x.shape.back();
  const int64_t rows = x.numel() / K;
  Tensor out = x;
  for (int64_t r = 0; r < rows; ++r) {
    double m = -1e300;
    for (int64_t k = 0; k < K; ++k) m = std::max(m, x[r * K + k]);
    double z = 0.0;
    for (int64_t k = 0; k < K; ++k) z += std::exp(x[r * K + k] - m);
    for (int64_t k = 0; k < K; ++k) out[r * K + k] = std::exp(x[r * K + k] - m) / z;
  }
  return make_op(std::move(out), {a}, [K, rows](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    for (int64_t r = 0; r < rows; ++r) {
      double gy = 0.0;
      for (int64_t k = 0; k < K; ++k) gy += n.grad[r * K + k] * n.val[r * K + k];
      for (int64_t k = 0; k < K; ++k)
        n.parents[0]->grad[r * K + k] +=
            n.val[r * K + k] * (n.grad[r * K + k] - gy);
    }
  });
}

// Add a constant (non-differentiated) tensor, broadcast over the leading axis.
// Used to inject additive attention masks.
inline Var add_const_broadcast(const Var& a, const Tensor& c) {
  const Tensor& x = a.val();
  RETNAS_CHECK(x.rank() == 3 && c.rank() == 2 && x.dim(1) == c.dim(0) &&
                   x.dim(2) == c.dim(1),
               "add_const_broadcast: shape mismatch");
  Tensor out = x;
  const int64_t B = x.dim(0), plane = c.numel();
  for (int64_t s = 0; s < B; ++s)
    for (int64_t i = 0; i < plane; ++i) out[s * plane + i] += c[i];
  return make_op(std::move(out), {a}, [](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    for (size_t i = 0; i < n.grad.v.size(); ++i)
      n.parents[0]->grad.v[i] += n.grad.v[i];
  });
}

inline Var sum_all(const Var& a) {
  double s = 0.0;
  for (const double x : a.val().v) s += x;
  return make_op(Tensor::scalar(s), {a}, [](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    const double g = n.grad.v[0];
    for (double& x : n.parents[0]->grad.v) x += g;
  });
}

inline Var mean_all(const Var& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.val().numel()));
}

}  // namespace retnas
