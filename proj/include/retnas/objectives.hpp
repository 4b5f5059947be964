#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "retnas/autograd.hpp"
#include "retnas/rng.hpp"

namespace retnas {

enum class Reduction { kSum, kMean };

// ---------------------------------------------------------------------------
// Identity cross-entropy
// ---------------------------------------------------------------------------

// Per-sample -log softmax(h_i)[label_i], reduced over the batch. Sum is the
// canonical form; training schedules are tuned against mean.
inline Var softmax_ce(const Var& h, const std::vector<int>& labels,
                      Reduction red = Reduction::kSum) {
  const Tensor& hv = h.val();
  RETNAS_CHECK(hv.rank() == 2, "softmax_ce: rank-2 logits expected, got ",
               hv.shape_str());
  const int64_t N = hv.dim(0), C = hv.dim(1);
  RETNAS_CHECK(static_cast<int64_t>(labels.size()) == N,
               "softmax_ce: ", labels.size(), " labels for ", N, " rows");
  for (int c : labels)
    RETNAS_CHECK(c >= 0 && c < C, "softmax_ce: label ", c, " outside [0, ", C,
                 ")");

  double total = 0.0;
  for (int64_t n = 0; n < N; ++n) {
    double m = hv.at2(n, 0);
    for (int64_t c = 1; c < C; ++c) m = std::max(m, hv.at2(n, c));
    double sum = 0.0;
    for (int64_t c = 0; c < C; ++c) sum += std::exp(hv.at2(n, c) - m);
    total += m + std::log(sum) - hv.at2(n, static_cast<int64_t>(labels[n]));
  }
  const double norm = red == Reduction::kMean ? 1.0 / static_cast<double>(N) : 1.0;
  return make_op(Tensor::scalar(total * norm), {h}, [labels, norm](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    const Tensor& hv = n.parents[0]->val;
    const int64_t N = hv.dim(0), C = hv.dim(1);
    const double g = n.grad.v[0] * norm;
    for (int64_t r = 0; r < N; ++r) {
      double m = hv.at2(r, 0);
      for (int64_t c = 1; c < C; ++c) m = std::max(m, hv.at2(r, c));
      double sum = 0.0;
      for (int64_t c = 0; c < C; ++c) sum += std::exp(hv.at2(r, c) - m);
      for (int64_t c = 0; c < C; ++c) {
        const double p = std::exp(hv.at2(r, c) - m) / sum;
        const double target = c == labels[static_cast<size_t>(r)] ? 1.0 : 0.0;
        n.parents[0]->grad.v[static_cast<size_t>(r * C + c)] += g * (p - target);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Batch-hard triplet
// ---------------------------------------------------------------------------

enum class TripletForm {
  kHinge,   // max(0, margin + d_p - d_n)
  kLiteral  // max(margin, d_p - d_n)
};

namespace detail {

// Epsilon-stabilized Euclidean distance between two feature rows.
inline Var row_distance(const Var& f, int64_t i, int64_t j,
                        double eps = 1e-12) {
  const Tensor& fv = f.val();
  const int64_t D = fv.dim(1);
  double sq = eps;
  for (int64_t k = 0; k < D; ++k) {
    const double d = fv.at2(i, k) - fv.at2(j, k);
    sq += d * d;
  }
  const double dist = std::sqrt(sq);
  return make_op(Tensor::scalar(dist), {f}, [i, j, dist](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    const Tensor& fv = n.parents[0]->val;
    const int64_t D = fv.dim(1);
    const double c = n.grad.v[0] / dist;
    for (int64_t k = 0; k < D; ++k) {
      const double d = c * (fv.at2(i, k) - fv.at2(j, k));
      n.parents[0]->grad.v[static_cast<size_t>(i * D + k)] += d;
      n.parents[0]->grad.v[static_cast<size_t>(j * D + k)] -= d;
    }
  });
}

// max(x, c) for a scalar x; gradient passes only on the x > c side.
inline Var max_const(const Var& x, double c) {
  const double v = x.val()[0];
  return make_op(Tensor::scalar(std::max(v, c)), {x}, [c](Node& n) {
    if (n.parents[0]->needs_grad && n.parents[0]->val.v[0] > c)
      n.parents[0]->grad.v[0] += n.grad.v[0];
  });
}

}  // namespace detail

// For each anchor: hardest positive (max distance, same identity) against
// hardest negative (min distance, any other identity).
inline Var batch_hard_triplet(const Var& f, const std::vector<int>& labels,
                              double margin,
                              Reduction red = Reduction::kSum,
                              TripletForm form = TripletForm::kHinge) {
  const Tensor& fv = f.val();
  RETNAS_CHECK(fv.rank() == 2, "triplet: rank-2 features expected, got ",
               fv.shape_str());
  RETNAS_CHECK(margin >= 0.0, "triplet: margin must be nonnegative");
  const int64_t N = fv.dim(0);
  RETNAS_CHECK(static_cast<int64_t>(labels.size()) == N,
               "triplet: ", labels.size(), " labels for ", N, " rows");
  std::map<int, int> counts;
  for (int c : labels) ++counts[c];
  for (const auto& [id, cnt] : counts)
    RETNAS_CHECK(cnt >= 2, "triplet: identity ", id,
                 " has a single sample; hardest positive undefined");
  RETNAS_CHECK(counts.size() >= 2,
               "triplet: batch needs at least two identities");

  // Mining is a discrete choice over distance values.
  auto dist = [&](int64_t i, int64_t j) {
    double sq = 1e-12;
    for (int64_t k = 0; k < fv.dim(1); ++k) {
      const double d = fv.at2(i, k) - fv.at2(j, k);
      sq += d * d;
    }
    return std::sqrt(sq);
  };

  std::vector<Var> terms;
  terms.reserve(static_cast<size_t>(N));
  for (int64_t i = 0; i < N; ++i) {
    int64_t jp = -1, jn = -1;
    double dp = -1.0, dn = 0.0;
    for (int64_t j = 0; j < N; ++j) {
      if (j == i) continue;
      const double d = dist(i, j);
      if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) {
        if (d > dp) {
          dp = d;
          jp = j;
        }
      } else if (jn < 0 || d < dn) {
        dn = d;
        jn = j;
      }
    }
    Var gap = add(detail::row_distance(f, i, jp),
                  scale(detail::row_distance(f, i, jn), -1.0));
    if (form == TripletForm::kHinge)
      terms.push_back(relu(add(Var::leaf(Tensor::scalar(margin)), gap)));
    else
      terms.push_back(detail::max_const(gap, margin));
  }
  Var total = add_n(terms);
  return red == Reduction::kMean ? scale(total, 1.0 / static_cast<double>(N))
                                 : total;
}

// ---------------------------------------------------------------------------
// Mixture
// ---------------------------------------------------------------------------

// lambda * ce + (1 - lambda) * tri; boundary values return the operand
// unchanged so degenerate runs reduce to the pure objective exactly.
inline Var mixture_loss(const Var& ce, const Var& tri, double lambda) {
  RETNAS_CHECK(lambda >= 0.0 && lambda <= 1.0, "mixture: lambda=", lambda,
               " outside [0, 1]");
  RETNAS_CHECK(std::isfinite(ce.val()[0]) && std::isfinite(tri.val()[0]),
               "mixture: non-finite loss input");
  if (lambda == 1.0) return ce;
  if (lambda == 0.0) return tri;
  return add(scale(ce, lambda), scale(tri, 1.0 - lambda));
}

// ---------------------------------------------------------------------------
// Class-balance PK sampler
// ---------------------------------------------------------------------------

struct PkBatch {
  std::vector<int64_t> indices;  // N = P*K positions into the dataset
  std::vector<int> labels;       // identity per slot
};

// P identities uniformly without replacement; K images per identity without
// replacement when the identity has >= K images, otherwise each image appears
// at least once and the remaining slots are drawn with replacement.
inline PkBatch pk_sample(const std::vector<int>& item_labels, int P, int K,
                         Rng& rng) {
  RETNAS_CHECK(P >= 1 && K >= 1, "pk_sample: P and K must be >= 1");
  std::map<int, std::vector<int64_t>> by_id;
  for (size_t i = 0; i < item_labels.size(); ++i)
    by_id[item_labels[i]].push_back(static_cast<int64_t>(i));
  RETNAS_CHECK(static_cast<int>(by_id.size()) >= P, "pk_sample: need ", P,
               " identities, dataset has ", by_id.size());

  std::vector<int> ids;
  ids.reserve(by_id.size());
  for (const auto& [id, _] : by_id) ids.push_back(id);

  PkBatch batch;
  for (int64_t pick : rng.sample_without_replacement(
           static_cast<int64_t>(ids.size()), P)) {
    const int id = ids[static_cast<size_t>(pick)];
    const std::vector<int64_t>& items = by_id[id];
    const int64_t n = static_cast<int64_t>(items.size());
    std::vector<int64_t> slots;
    if (n >= K) {
      for (int64_t s : rng.sample_without_replacement(n, K))
        slots.push_back(items[static_cast<size_t>(s)]);
    } else {
      slots = items;
      for (int64_t s = n; s < K; ++s)
        slots.push_back(items[static_cast<size_t>(rng.uniform_int(n))]);
      rng.shuffle(slots);
    }
    for (int64_t s : slots) {
      batch.indices.push_back(s);
      batch.labels.push_back(id);
    }
  }
  return batch;
}

}  // namespace retnas
