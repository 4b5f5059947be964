#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "retnas/checkpoint.hpp"
#include "retnas/config.hpp"
#include "retnas/dataset.hpp"
#include "retnas/objectives.hpp"
#include "retnas/optim.hpp"
#include "retnas/supernet.hpp"

namespace retnas {

// ---------------------------------------------------------------------------
// Identity-stratified split of one labeled set into two halves
// ---------------------------------------------------------------------------

struct IdentitySplit {
  std::vector<int64_t> train, val;
  int warnings = 0;
};

// Divides each identity's images by `fraction` (train side). Identities whose
// split would leave either side empty go wholly to the training half with a
// warning, so nothing is silently dropped.
inline IdentitySplit split_dataset(const std::vector<int>& labels,
                                   double fraction, uint64_t seed,
                                   std::ostream* warn = &std::cerr) {
  RETNAS_CHECK(fraction > 0.0 && fraction < 1.0,
               "split: fraction must lie in (0, 1)");
  RETNAS_CHECK(!labels.empty(), "split: empty dataset");
  std::map<int, std::vector<int64_t>> by_id;
  for (size_t i = 0; i < labels.size(); ++i)
    by_id[labels[i]].push_back(static_cast<int64_t>(i));

  Rng rng(seed);
  IdentitySplit out;
  for (auto& [id, idx] : by_id) {
    const int64_t n = static_cast<int64_t>(idx.size());
    const int64_t n_train = std::llround(static_cast<double>(n) * fraction);
    if (n < 2 || n_train == 0 || n_train == n) {
      if (warn)
        *warn << "warning: identity " << id << " cannot fill both halves ("
              << n << " images); keeping all in the training half\n";
      ++out.warnings;
      out.train.insert(out.train.end(), idx.begin(), idx.end());
      continue;
    }
    rng.shuffle(idx);
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + n_train);
    out.val.insert(out.val.end(), idx.begin() + n_train, idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

// ---------------------------------------------------------------------------
// Loss and batch plumbing shared by search and final training
// ---------------------------------------------------------------------------

// lambda * CE + (1 - lambda) * batch-hard triplet, both mean-reduced. The
// boundaries return the single active term itself, so a lambda=1 run is
// literally a CE-only run.
inline Var reid_loss(const HeadOut& out, const std::vector<int>& labels,
                     double margin, double lambda) {
  if (lambda == 1.0) return softmax_ce(out.h, labels, Reduction::kMean);
  Var tri = batch_hard_triplet(out.g, labels, margin, Reduction::kMean);
  if (lambda == 0.0) return tri;
  Var ce = softmax_ce(out.h, labels, Reduction::kMean);
  // Surface divergence as a non-finite loss instead of tripping the
  // mixture's finiteness check, so loops can abort cleanly.
  if (!std::isfinite(ce.val()[0])) return ce;
  if (!std::isfinite(tri.val()[0])) return tri;
  return mixture_loss(ce, tri, lambda);
}

// Gathers a PK batch from `subset` (indices into `images`) as one input
// tensor plus its label vector.
struct GatheredBatch {
  Tensor x;
  std::vector<int> y;
};

inline GatheredBatch gather_pk_batch(const std::vector<Tensor>& images,
                                     const std::vector<int>& labels,
                                     const std::vector<int64_t>& subset,
                                     int P, int K, Rng& rng) {
  std::vector<int> subset_labels;
  subset_labels.reserve(subset.size());
  for (int64_t i : subset)
    subset_labels.push_back(labels[static_cast<size_t>(i)]);
  PkBatch pk = pk_sample(subset_labels, P, K, rng);
  std::vector<int64_t> global;
  global.reserve(pk.indices.size());
  for (int64_t i : pk.indices)
    global.push_back(subset[static_cast<size_t>(i)]);
  return {stack_images(images, global), pk.labels};
}

// ---------------------------------------------------------------------------
// Alternating bi-level step
// ---------------------------------------------------------------------------

struct SearchState {
  int epoch = 0;
  int64_t step = 0;
  std::vector<double> loss_train, loss_val;  // one entry per step
  std::vector<Genotype> genotype_history;    // one entry per finished epoch
  bool diverged = false;
};

struct StepLosses {
  double train = 0.0, val = 0.0;
  bool ok = true;
};

// Owns the two optimizers of the alternating scheme. Operation weights live
// in the supernet's parameter store; architecture logits are the alpha rows,
// so each optimizer can only ever touch its own variable set.
class SearchLoop {
 public:
  SearchLoop(SupernetModel& net, const SearchConfig& cfg, uint64_t seed)
      : net_(net),
        cfg_(cfg),
        opt_w_(net.params().params(), cfg.momentum, cfg.weight_decay),
        opt_a_(net.alpha_vars(), cfg.weight_decay),
        drop_rng_(sub_seed(seed, "dropout")) {
    cfg.validate();
  }

  // Sub-step (a): one SGD update of the operation weights from a training
  // batch. Returns the loss; a non-finite loss applies no update.
  double omega_step(const Tensor& x, const std::vector<int>& y, double lr) {
    Var loss = batch_loss(x, y, /*alpha_step=*/false);
    const double v = loss.val()[0];
    if (!std::isfinite(v)) return v;
    backward(loss);
    opt_w_.step(lr);
    return v;
  }

  // Sub-step (b): one Adam update of the architecture logits from a
  // validation batch (first-order: the weights are treated as constants).
  double alpha_step(const Tensor& x, const std::vector<int>& y, double lr) {
    Var loss = batch_loss(x, y, /*alpha_step=*/true);
    const double v = loss.val()[0];
    if (!std::isfinite(v)) return v;
    backward(loss);
    opt_a_.step(lr);
    return v;
  }

  StepLosses step(const GatheredBatch& bt, const GatheredBatch& bv,
                  double lr_w, double lr_a) {
    StepLosses r;
    r.train = omega_step(bt.x, bt.y, lr_w);
    if (!std::isfinite(r.train)) {
      r.ok = false;
      return r;
    }
    r.val = alpha_step(bv.x, bv.y, lr_a);
    r.ok = std::isfinite(r.val);
    return r;
  }

  Rng& dropout_rng() { return drop_rng_; }

 private:
  Var batch_loss(const Tensor& x, const std::vector<int>& y, bool alpha_step) {
    HeadOut out = net_.forward(Var::leaf(x), /*training=*/true, &drop_rng_);
    const double lambda =
        alpha_step && cfg_.alpha_triplet_only ? 0.0 : cfg_.lambda;
    return reid_loss(out, y, cfg_.margin, lambda);
  }

  SupernetModel& net_;
  SearchConfig cfg_;
  SgdMomentum opt_w_;
  Adam opt_a_;
  Rng drop_rng_;
};

// ---------------------------------------------------------------------------
// Alpha checkpoints
// ---------------------------------------------------------------------------

inline Checkpoint alpha_to_checkpoint(const AlphaParams& a) {
  a.validate();
  Checkpoint ck;
  ck.meta["kind"] = "alpha";
  ck.meta["space"] = to_string(a.space);
  ck.meta["B"] = std::to_string(a.B);
  const int64_t E = AlphaParams::num_edges(a.B);
  const int64_t O = a.num_ops();
  Tensor normal({E, O}), reduction({E, O});
  for (int64_t e = 0; e < E; ++e)
    for (int64_t o = 0; o < O; ++o) {
      normal.at2(e, o) = a.normal[static_cast<size_t>(e)][static_cast<size_t>(o)];
      reduction.at2(e, o) =
          a.reduction[static_cast<size_t>(e)][static_cast<size_t>(o)];
    }
  ck.tensors["alpha.normal"] = std::move(normal);
  ck.tensors["alpha.reduction"] = std::move(reduction);
  return ck;
}

inline AlphaParams alpha_from_checkpoint(const Checkpoint& ck,
                                         const std::string& path) {
  if (ck.require_meta("kind", path) != "alpha")
    throw ParseError(path, "not an alpha checkpoint");
  std::optional<OpSpace> space =
      op_space_from_string(ck.require_meta("space", path));
  if (!space) throw ParseError(path, "unknown op space");
  int B = 0;
  try {
    B = std::stoi(ck.require_meta("B", path));
  } catch (const std::exception&) {
    throw ParseError(path, "bad B in alpha checkpoint");
  }
  if (B < 1) throw ParseError(path, "bad B in alpha checkpoint");

  AlphaParams a = AlphaParams::zeros(*space, B);
  const Tensor& normal = ck.require_tensor("alpha.normal", path);
  const Tensor& reduction = ck.require_tensor("alpha.reduction", path);
  const int64_t E = AlphaParams::num_edges(B);
  const int64_t O = a.num_ops();
  for (const Tensor* t : {&normal, &reduction})
    if (t->rank() != 2 || t->dim(0) != E || t->dim(1) != O)
      throw ParseError(path, cat("alpha tensor shape ", t->shape_str(),
                                 " does not match B=", B));
  for (int64_t e = 0; e < E; ++e)
    for (int64_t o = 0; o < O; ++o) {
      a.normal[static_cast<size_t>(e)][static_cast<size_t>(o)] = normal.at2(e, o);
      a.reduction[static_cast<size_t>(e)][static_cast<size_t>(o)] =
          reduction.at2(e, o);
    }
  return a;
}

// ---------------------------------------------------------------------------
// Full search
// ---------------------------------------------------------------------------

struct SearchArtifacts {
  Genotype genotype;
  SearchState state;
};

// Runs the alternating search over the labeled image set: splits it in two,
// then per epoch walks PK batches updating weights from the training half and
// logits from the validation half. Writes search_log.csv, per-epoch
// alpha_epoch{N}.ckpt files and the final genotype.json into out_dir. On a
// non-finite loss the last finished epoch's checkpoint is left as the
// last-good state and the run aborts.
inline SearchArtifacts run_search(SupernetModel& net,
                                  const std::vector<Tensor>& images,
                                  const std::vector<int>& labels,
                                  const SearchConfig& cfg,
                                  const std::string& out_dir, uint64_t seed,
                                  std::ostream* warn = &std::cerr) {
  cfg.validate();
  RETNAS_CHECK(images.size() == labels.size(),
               "run_search: image/label count mismatch");
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path out(out_dir);

  IdentitySplit split =
      split_dataset(labels, cfg.split_fraction, sub_seed(seed, "split"), warn);
  RETNAS_CHECK(!split.val.empty(),
               "run_search: validation half is empty; every identity is too "
               "small to split");

  const int64_t batch = static_cast<int64_t>(cfg.P) * cfg.K;
  const int64_t steps_per_epoch =
      std::max<int64_t>(1, static_cast<int64_t>(split.train.size()) / batch);

  std::ofstream log(out / "search_log.csv");
  if (!log) throw std::runtime_error(cat("cannot write search_log.csv in ", out_dir));
  log << "epoch,step,loss_train,loss_val,lr_w,lr_a\n";
  log.precision(17);

  SearchLoop loop(net, cfg, seed);
  Rng rng_train(sub_seed(seed, "sampler"));
  Rng rng_val(sub_seed(seed, "sampler_val"));

  SearchArtifacts art;
  SearchState& st = art.state;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    st.epoch = epoch;
    const double lr_w = cosine_lr(cfg.lr_w0, cfg.lr_w_min, epoch, cfg.epochs);
    const double lr_a = step_decay_lr(
        cfg.lr_a0, 0.1, {cfg.a_decay[0], cfg.a_decay[1]}, epoch);
    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      GatheredBatch bt =
          gather_pk_batch(images, labels, split.train, cfg.P, cfg.K, rng_train);
      GatheredBatch bv =
          gather_pk_batch(images, labels, split.val, cfg.P, cfg.K, rng_val);
      StepLosses r = loop.step(bt, bv, lr_w, lr_a);
      log << epoch << "," << st.step << "," << r.train << "," << r.val << ","
          << lr_w << "," << lr_a << "\n";
      if (!r.ok) {
        st.diverged = true;
        log.flush();
        throw std::runtime_error(cat("search diverged at epoch ", epoch,
                                     " step ", st.step,
                                     " (non-finite loss); last-good "
                                     "checkpoint retained in ", out_dir));
      }
      st.loss_train.push_back(r.train);
      st.loss_val.push_back(r.val);
      ++st.step;
    }
    alpha_to_checkpoint(net.alpha_snapshot())
        .save((out / cat("alpha_epoch", epoch, ".ckpt")).string());
    st.genotype_history.push_back(net.derive());
    log.flush();
  }

  art.genotype = net.derive();
  std::ofstream gj(out / "genotype.json");
  if (!gj) throw std::runtime_error(cat("cannot write genotype.json in ", out_dir));
  gj << genotype_to_json(art.genotype) << "\n";
  return art;
}

}  // namespace retnas
