#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "retnas/retrieval.hpp"
#include "retnas/searcher.hpp"

namespace retnas {

// ---------------------------------------------------------------------------
// Identity holdout for model selection
// ---------------------------------------------------------------------------

// Reserves a fraction of the identities (not images) as a validation pool.
// Training labels are re-packed densely so the classifier head matches the
// remaining identity count.
struct IdentityHoldout {
  std::vector<int64_t> train_idx;
  std::vector<int> train_labels;  // dense in [0, num_train_ids)
  std::vector<int64_t> val_idx;
  std::vector<int> val_ids;  // original ids, used only for matching
  int num_train_ids = 0;
};

inline IdentityHoldout holdout_identities(const std::vector<int>& labels,
                                          double fraction, uint64_t seed,
                                          std::ostream* warn = &std::cerr) {
  RETNAS_CHECK(fraction >= 0.0 && fraction < 1.0,
               "holdout: fraction must lie in [0, 1)");
  RETNAS_CHECK(!labels.empty(), "holdout: empty dataset");
  const std::set<int> uniq(labels.begin(), labels.end());
  const std::vector<int> ids(uniq.begin(), uniq.end());
  const int total = static_cast<int>(ids.size());

  int n_val =
      fraction == 0.0
          ? 0
          : std::max<int>(1, static_cast<int>(std::llround(total * fraction)));
  if (total - n_val < 2) {
    // Triplet mining needs at least two training identities.
    if (n_val > 0 && warn)
      *warn << "warning: only " << total
            << " identities; skipping the validation holdout\n";
    n_val = 0;
  }

  Rng rng(seed);
  std::vector<int64_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::set<int> val_set;
  for (int k = 0; k < n_val; ++k)
    val_set.insert(ids[static_cast<size_t>(order[static_cast<size_t>(k)])]);

  std::map<int, int> dense;
  for (int id : ids)
    if (!val_set.count(id)) {
      const int next = static_cast<int>(dense.size());
      dense[id] = next;
    }

  IdentityHoldout out;
  out.num_train_ids = static_cast<int>(dense.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    if (val_set.count(labels[i])) {
      out.val_idx.push_back(static_cast<int64_t>(i));
      out.val_ids.push_back(labels[i]);
    } else {
      out.train_idx.push_back(static_cast<int64_t>(i));
      out.train_labels.push_back(dense[labels[i]]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation and validation scoring
// ---------------------------------------------------------------------------

inline Tensor train_augment(const Tensor& x, bool flip_on, bool crop_on,
                            int pad, Rng& rng) {
  Tensor out = x;
  if (flip_on && rng.bernoulli(0.5)) out = hflip(out);
  if (crop_on && pad > 0) out = pad_random_crop(out, pad, rng);
  return out;
}

// Self-retrieval protocol for sets without a query/gallery partition: every
// image queries all the others. Giving each image a unique camera id makes
// the standard same-id-same-camera exclusion drop exactly the self-match.
inline EvalResult self_retrieval_eval(const Tensor& feats,
                                      const std::vector<int>& ids) {
  std::vector<int> cams(ids.size());
  std::iota(cams.begin(), cams.end(), 0);
  return evaluate(feats, ids, cams, feats, ids, cams, /*camera_filter=*/true);
}

template <typename Model>
double validation_map(const Model& net, const std::vector<Tensor>& images,
                      const std::vector<int64_t>& val_idx,
                      const std::vector<int>& val_ids) {
  std::vector<Tensor> vimgs;
  vimgs.reserve(val_idx.size());
  for (int64_t i : val_idx) vimgs.push_back(images[static_cast<size_t>(i)]);
  return self_retrieval_eval(extract_features(net, vimgs), val_ids).map;
}

// ---------------------------------------------------------------------------
// Model checkpoints
// ---------------------------------------------------------------------------

inline void save_model_checkpoint(const FinalModel& net,
                                  const std::string& path) {
  Checkpoint ck;
  ck.meta["kind"] = "model";
  ck.meta["genotype"] = genotype_to_json(net.genotype());
  ck.meta["num_ids"] = std::to_string(net.plan().cfg.num_ids);
  pack_store(ck, net.params());
  ck.save(path);
}

inline Genotype genotype_from_model_checkpoint(const Checkpoint& ck,
                                               const std::string& path) {
  if (ck.require_meta("kind", path) != "model")
    throw ParseError(path, "not a model checkpoint");
  return genotype_from_json(ck.require_meta("genotype", path));
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainState {
  std::vector<double> loss;     // one entry per step
  std::vector<double> val_map;  // one entry per epoch (empty without holdout)
  double best_map = -1.0;
  int best_epoch = -1;
  int64_t steps = 0;
};

// One Adam step on a prepared batch; exposed so callers can drive custom
// schedules or inspect the trajectory step by step.
class TrainLoop {
 public:
  TrainLoop(FinalModel& net, const TrainConfig& cfg, uint64_t seed)
      : net_(net),
        cfg_(cfg),
        opt_(net.params().params(), cfg.weight_decay, cfg.beta1),
        drop_rng_(sub_seed(seed, "train_dropout")) {
    cfg.validate();
  }

  double step(const Tensor& x, const std::vector<int>& y, double lr) {
    HeadOut out = net_.forward(Var::leaf(x), /*training=*/true, &drop_rng_);
    Var loss = reid_loss(out, y, cfg_.margin, cfg_.lambda);
    const double v = loss.val()[0];
    if (!std::isfinite(v)) return v;
    backward(loss);
    opt_.step(lr);
    return v;
  }

  Rng& dropout_rng() { return drop_rng_; }

 private:
  FinalModel& net_;
  TrainConfig cfg_;
  Adam opt_;
  Rng drop_rng_;
};

// Trains the final network on the holdout's training side, scoring the
// validation identities by self-retrieval mAP after every epoch. Writes
// train_log.csv (epoch,step,loss,lr,val_map; the val_map column is filled on
// each epoch's closing row), best.ckpt (highest validation mAP, later epoch
// on ties; equal to last.ckpt when there is no holdout) and last.ckpt.
inline TrainState run_train(FinalModel& net, const std::vector<Tensor>& images,
                            const IdentityHoldout& ho, const TrainConfig& cfg,
                            const std::string& out_dir, uint64_t seed,
                            std::ostream* warn = &std::cerr) {
  cfg.validate();
  RETNAS_CHECK(net.plan().cfg.num_ids == ho.num_train_ids,
               "run_train: classifier head is sized for ",
               net.plan().cfg.num_ids, " ids but the split has ",
               ho.num_train_ids);
  RETNAS_CHECK(ho.num_train_ids >= 2,
               "run_train: need at least two training identities");
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path out(out_dir);

  int P = cfg.P;
  if (P > ho.num_train_ids) {
    if (warn)
      *warn << "warning: clamping P from " << P << " to " << ho.num_train_ids
            << " (identity count)\n";
    P = ho.num_train_ids;
  }
  const int64_t steps_per_epoch = std::max<int64_t>(
      1, static_cast<int64_t>(ho.train_idx.size()) /
             (static_cast<int64_t>(P) * cfg.K));

  std::ofstream log(out / "train_log.csv");
  if (!log) throw std::runtime_error(cat("cannot write train_log.csv in ", out_dir));
  log << "epoch,step,loss,lr,val_map\n";
  log.precision(17);

  TrainLoop loop(net, cfg, seed);
  Rng rng_sampler(sub_seed(seed, "train_sampler"));
  Rng rng_aug(sub_seed(seed, "train_aug"));

  TrainState st;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        step_decay_lr(cfg.lr0, 0.1, {cfg.decay[0], cfg.decay[1]}, epoch);
    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      PkBatch pk = pk_sample(ho.train_labels, P, cfg.K, rng_sampler);
      std::vector<Tensor> batch;
      batch.reserve(pk.indices.size());
      for (int64_t i : pk.indices)
        batch.push_back(train_augment(
            images[static_cast<size_t>(ho.train_idx[static_cast<size_t>(i)])],
            cfg.flip, cfg.crop, cfg.crop_pad, rng_aug));
      std::vector<int64_t> all(batch.size());
      std::iota(all.begin(), all.end(), 0);
      const double v = loop.step(stack_images(batch, all), pk.labels, lr);

      const bool last_in_epoch = s + 1 == steps_per_epoch;
      log << epoch << "," << st.steps << "," << v << "," << lr << ",";
      if (!std::isfinite(v)) {
        log << "\n";
        log.flush();
        throw std::runtime_error(cat("training diverged at epoch ", epoch,
                                     " step ", st.steps,
                                     " (non-finite loss)"));
      }
      st.loss.push_back(v);
      ++st.steps;
      if (last_in_epoch && !ho.val_idx.empty()) {
        const double m = validation_map(net, images, ho.val_idx, ho.val_ids);
        st.val_map.push_back(m);
        log << m;
        if (m >= st.best_map) {
          st.best_map = m;
          st.best_epoch = epoch;
          save_model_checkpoint(net, (out / "best.ckpt").string());
        }
      }
      log << "\n";
    }
    log.flush();
  }

  save_model_checkpoint(net, (out / "last.ckpt").string());
  if (ho.val_idx.empty() || cfg.epochs == 0)
    save_model_checkpoint(net, (out / "best.ckpt").string());
  return st;
}

}  // namespace retnas
