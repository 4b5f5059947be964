// Command-line front end tying the library together:
//
//   retnas gen-data   write a synthetic PNG dataset
//   retnas search     architecture search on the dataset's fit split
//   retnas derive     alpha checkpoint -> genotype.json
//   retnas train      train a derived genotype from scratch
//   retnas eval       retrieval metrics on the held-out test split
//   retnas count      parameter / MAC accounting for a genotype
//
// Every subcommand resolves an ExperimentConfig (file, then --set overrides,
// then --seed/--out shorthands), validates it and persists it as
// <out_dir>/config_resolved so any run can be reproduced from that file alone.
// Errors come out as a single `error: ...` line on stderr with a nonzero exit.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "retnas/retnas.hpp"

namespace fs = std::filesystem;
using namespace retnas;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(cat("cannot open ", path));
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

template <typename T>
std::vector<T> gather(const std::vector<T>& v,
                      const std::vector<int64_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (int64_t i : idx) out.push_back(v[static_cast<size_t>(i)]);
  return out;
}

// Flags shared by every subcommand.
struct SubCtx {
  CLI::App* app = nullptr;
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  uint64_t seed = 0;
  CLI::Option* out_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  // Per-command extras; unused ones stay empty.
  std::string genotype, alpha, checkpoint, macro;
};

void add_common(SubCtx& c) {
  c.app->add_option("--config", c.config, "experiment config file")
      ->check(CLI::ExistingFile);
  c.app->add_option("--set", c.sets,
                    "override a config entry, key=value (repeatable)");
  c.out_opt = c.app->add_option("--out", c.out, "output directory");
  c.seed_opt = c.app->add_option("--seed", c.seed, "experiment seed");
}

ExperimentConfig resolve(const SubCtx& c, const std::string& mode) {
  ExperimentConfig cfg;
  if (!c.config.empty()) cfg = load_config(c.config);
  for (const std::string& kv : c.sets) apply_override(cfg, kv);
  if (c.seed_opt->count() > 0) cfg.seed = c.seed;
  if (c.out_opt->count() > 0) cfg.out_dir = c.out;
  cfg.mode = mode;
  cfg.validate();
  write_resolved_config(cfg);
  return cfg;
}

// The dataset with its per-identity fit/test image split. The test side is
// reserved for `eval`; search and train never see it.
struct LoadedData {
  DatasetIndex index;
  std::vector<Tensor> images;
  std::vector<int> labels;
  std::vector<int64_t> fit, test;
};

LoadedData load_experiment_data(const ExperimentConfig& cfg) {
  LoadedData d;
  d.index = load_folder(cfg.data.root);
  d.images = load_images(d.index);
  d.labels = d.index.labels();
  if (cfg.data.test_fraction > 0.0) {
    IdentitySplit s =
        split_dataset(d.labels, 1.0 - cfg.data.test_fraction,
                      sub_seed(cfg.seed, "testsplit"), &std::cerr);
    d.fit = std::move(s.train);
    d.test = std::move(s.val);
  } else {
    d.fit.resize(d.images.size());
    std::iota(d.fit.begin(), d.fit.end(), 0);
  }
  return d;
}

int cmd_gen_data(const ExperimentConfig& cfg) {
  RETNAS_CHECK(cfg.data.kind == DatasetKind::kSynthetic,
               "gen-data: data.kind must be synthetic");
  SyntheticSpec s;
  s.num_ids = cfg.data.num_ids;
  s.imgs_per_id = cfg.data.imgs_per_id;
  s.h = cfg.data.h;
  s.w = cfg.data.w;
  s.noise = cfg.data.noise;
  s.seed = sub_seed(cfg.seed, "data");
  generate_synthetic(cfg.data.root, s);
  std::cout << "gen-data: wrote " << s.num_ids * s.imgs_per_id
            << " images under " << cfg.data.root << "\n";
  return 0;
}

int cmd_search(const ExperimentConfig& cfg) {
  LoadedData d = load_experiment_data(cfg);
  MacroConfig m = cfg.macro;
  if (m.num_ids == 0) m.num_ids = d.index.num_ids();
  SupernetModel net(m, cfg.search.space, sub_seed(cfg.seed, "init"));
  SearchArtifacts art =
      run_search(net, gather(d.images, d.fit), gather(d.labels, d.fit),
                 cfg.search, cfg.out_dir, cfg.seed);
  std::cout << "search: wrote "
            << (fs::path(cfg.out_dir) / "genotype.json").string() << "\n"
            << genotype_to_json(art.genotype) << "\n";
  return 0;
}

int cmd_derive(const ExperimentConfig& cfg, const std::string& alpha_path,
               const std::string& out_path) {
  Checkpoint ck = Checkpoint::load(alpha_path);
  AlphaParams a = alpha_from_checkpoint(ck, alpha_path);
  Genotype g = derive_genotype(a);
  const std::string gpath =
      out_path.empty() ? (fs::path(cfg.out_dir) / "genotype.json").string()
                       : out_path;
  std::ofstream os(gpath);
  if (!os) throw std::runtime_error(cat("cannot write ", gpath));
  os << genotype_to_json(g) << "\n";
  std::cout << "derive: wrote " << gpath << "\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& genotype_path) {
  const std::string gpath =
      genotype_path.empty()
          ? (fs::path(cfg.out_dir) / "genotype.json").string()
          : genotype_path;
  Genotype g = genotype_from_json(read_text(gpath));

  LoadedData d = load_experiment_data(cfg);
  std::vector<Tensor> fit_images = gather(d.images, d.fit);
  std::vector<int> fit_labels = gather(d.labels, d.fit);
  IdentityHoldout ho =
      holdout_identities(fit_labels, cfg.train.val_fraction,
                         sub_seed(cfg.seed, "holdout"), &std::cerr);

  MacroConfig m = cfg.macro;
  m.B = g.B;  // the genotype fixes the cell size
  if (m.num_ids == 0) m.num_ids = ho.num_train_ids;
  FinalModel net(m, g, sub_seed(cfg.seed, "train_init"));
  TrainState st = run_train(net, fit_images, ho, cfg.train, cfg.out_dir,
                            cfg.seed);
  if (st.best_epoch >= 0)
    std::cout << "train: best epoch " << st.best_epoch << " val mAP "
              << st.best_map << "\n";
  else
    std::cout << "train: finished " << st.steps << " steps\n";
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& ckpt_flag) {
  const std::string cpath =
      ckpt_flag.empty() ? (fs::path(cfg.out_dir) / "best.ckpt").string()
                        : ckpt_flag;
  Checkpoint ck = Checkpoint::load(cpath);
  Genotype g = genotype_from_model_checkpoint(ck, cpath);
  int num_ids = 0;
  try {
    num_ids = std::stoi(ck.require_meta("num_ids", cpath));
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError(cpath, "bad num_ids in checkpoint");
  }
  MacroConfig m = cfg.macro;
  m.B = g.B;
  m.num_ids = num_ids;  // the head must match the stored weights
  FinalModel net(m, g, 0);
  unpack_store(ck, net.params(), cpath);

  LoadedData d = load_experiment_data(cfg);
  std::vector<int64_t> pool = d.test;
  if (pool.empty()) {
    std::cerr << "warning: data.test_fraction is 0; evaluating on the "
                 "training images\n";
    pool = d.fit;
  }
  std::vector<Tensor> imgs = gather(d.images, pool);
  std::vector<int> ids = gather(d.labels, pool);
  Tensor feats = extract_features(net, imgs);

  // Query = gallery = test pool. With real camera ids the standard
  // same-identity-same-camera exclusion applies; without them each image
  // gets a unique camera so only the self-match is excluded.
  std::vector<int> cams;
  cams.reserve(pool.size());
  if (d.index.has_cameras()) {
    for (int64_t i : pool)
      cams.push_back(d.index.items[static_cast<size_t>(i)].camera);
  } else {
    cams.resize(pool.size());
    std::iota(cams.begin(), cams.end(), 0);
  }
  EvalResult res = evaluate(feats, ids, cams, feats, ids, cams, true);

  write_features((fs::path(cfg.out_dir) / "features.bin").string(), feats);
  write_eval_report((fs::path(cfg.out_dir) / "eval_report.json").string(),
                    res, feats.dim(0), feats.dim(0));
  std::cout << "eval: map " << res.map << " rank1 " << res.cmc_at(1)
            << " valid_queries " << res.valid_queries << "\n";
  return 0;
}

int cmd_count(const ExperimentConfig& cfg, const std::string& genotype_path,
              const std::string& macro_spec) {
  Genotype g = genotype_from_json(read_text(genotype_path));
  MacroConfig m = cfg.macro;
  if (!macro_spec.empty()) m = parse_macro_spec(macro_spec, m);
  m.B = g.B;
  RETNAS_CHECK(m.num_ids >= 1,
               "count: macro num_ids must be >= 1 (use --macro ids=...)");
  CostReport r = count_params_flops(g, m);
  std::cout << "params " << r.params << "\n";
  std::cout << "macs " << r.macs << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentiable architecture search for person re-id"};
  app.require_subcommand(1);

  SubCtx gen, search, derive, train, eval_, count;
  gen.app = app.add_subcommand("gen-data", "write a synthetic dataset");
  search.app = app.add_subcommand("search", "run the architecture search");
  derive.app = app.add_subcommand("derive", "derive a genotype from alpha");
  train.app = app.add_subcommand("train", "train a genotype from scratch");
  eval_.app = app.add_subcommand("eval", "retrieval metrics on the test split");
  count.app = app.add_subcommand("count", "count genotype params and MACs");
  for (SubCtx* c : {&gen, &search, &derive, &train, &eval_, &count})
    add_common(*c);

  derive.app->add_option("--alpha", derive.alpha, "alpha checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  derive.app->add_option("--genotype", derive.genotype,
                         "output path (default <out_dir>/genotype.json)");
  train.app->add_option("--genotype", train.genotype,
                        "genotype file (default <out_dir>/genotype.json)");
  eval_.app->add_option("--checkpoint", eval_.checkpoint,
                        "model checkpoint (default <out_dir>/best.ckpt)");
  count.app->add_option("--genotype", count.genotype, "genotype file")
      ->required()
      ->check(CLI::ExistingFile);
  count.app->add_option("--macro", count.macro,
                        "macro override, e.g. C=64,l=2.2.2.2,hw=384x128");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (app.got_subcommand(gen.app)) return cmd_gen_data(resolve(gen, "gen-data"));
    if (app.got_subcommand(search.app)) return cmd_search(resolve(search, "search"));
    if (app.got_subcommand(derive.app))
      return cmd_derive(resolve(derive, "derive"), derive.alpha, derive.genotype);
    if (app.got_subcommand(train.app))
      return cmd_train(resolve(train, "train"), train.genotype);
    if (app.got_subcommand(eval_.app))
      return cmd_eval(resolve(eval_, "eval"), eval_.checkpoint);
    if (app.got_subcommand(count.app))
      return cmd_count(resolve(count, "count"), count.genotype, count.macro);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";  // unreachable with require_subcommand
  return 2;
}
