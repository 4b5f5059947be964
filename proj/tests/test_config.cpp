#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "retnas/config.hpp"

using namespace retnas;
namespace fs = std::filesystem;

TEST_CASE("config: serialize/parse round trip preserves every field") {
  ExperimentConfig a;
  a.seed = 1234567890123456789ull;
  a.out_dir = "runs/exp 1";
  a.mode = "search";
  a.macro.C = 12;
  a.macro.l = {1, 2, 3, 4};
  a.macro.B = 3;
  a.macro.in_h = 96;
  a.macro.in_w = 40;
  a.macro.num_ids = 17;
  a.macro.embed_dim = 24;
  a.macro.dropout_f = 0.1234567890123456789;  // exercises exact double io
  a.search.epochs = 7;
  a.search.space = OpSpace::kClassic;
  a.search.lambda = 1.0 / 3.0;
  a.search.alpha_triplet_only = true;
  a.search.a_decay = {3, 5};
  a.train.epochs = 9;
  a.train.decay = {4, 8};
  a.train.flip = false;
  a.train.crop_pad = 6;
  a.data.kind = DatasetKind::kFolder;
  a.data.root = "/tmp/some where";
  a.data.noise = 0.07;
  a.data.test_fraction = 0.2;

  ExperimentConfig b = parse_config_text(serialize_config(a));
  CHECK(serialize_config(b) == serialize_config(a));
  CHECK(b.seed == a.seed);
  CHECK(b.macro.dropout_f == a.macro.dropout_f);
  CHECK(b.search.lambda == a.search.lambda);
  CHECK(b.search.space == OpSpace::kClassic);
  CHECK(b.data.kind == DatasetKind::kFolder);
  CHECK(b.train.flip == false);
}

TEST_CASE("config: comments, blank lines and overrides") {
  ExperimentConfig cfg = parse_config_text(
      "# a comment\n"
      "\n"
      "seed = 42   # trailing comment\n"
      "macro.l = 2, 2, 2, 2\n"
      "search.lambda = 0.25\n");
  CHECK(cfg.seed == 42);
  CHECK(cfg.search.lambda == 0.25);

  apply_override(cfg, "macro.C=16");
  apply_override(cfg, "train.flip = false");
  CHECK(cfg.macro.C == 16);
  CHECK(cfg.train.flip == false);

  CHECK_THROWS_AS(apply_override(cfg, "no_equals_sign"), ParseError);
  CHECK_THROWS_AS(apply_override(cfg, "macro.unknown=3"), ParseError);
  CHECK_THROWS_AS(apply_override(cfg, "macro.C=abc"), ParseError);
  CHECK_THROWS_AS(apply_override(cfg, "train.flip=maybe"), ParseError);
  CHECK_THROWS_AS(apply_override(cfg, "macro.l=1,2,3"), ParseError);
  CHECK_THROWS_AS(apply_override(cfg, "search.space=wide"), ParseError);
  CHECK_THROWS_AS(parse_config_text("just a line\n"), ParseError);
}

TEST_CASE("config: file io") {
  const fs::path dir =
      fs::temp_directory_path() / cat("retnas_cfg_", getpid());
  fs::remove_all(dir);
  fs::create_directories(dir);

  ExperimentConfig a;
  a.seed = 9;
  a.out_dir = (dir / "run").string();
  a.mode = "train";
  {
    std::ofstream os(dir / "exp.cfg");
    os << serialize_config(a);
  }
  ExperimentConfig b = load_config((dir / "exp.cfg").string());
  CHECK(serialize_config(b) == serialize_config(a));
  CHECK_THROWS_AS(load_config((dir / "missing.cfg").string()), ParseError);

  write_resolved_config(a);
  ExperimentConfig c = load_config((dir / "run" / "config_resolved").string());
  CHECK(serialize_config(c) == serialize_config(a));
  fs::remove_all(dir);
}

TEST_CASE("config: validation catches contradictions") {
  ExperimentConfig cfg;
  cfg.macro.num_ids = 0;  // deferred to dataset resolution: allowed
  CHECK_NOTHROW(cfg.validate());

  ExperimentConfig bad = cfg;
  bad.search.split_fraction = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = cfg;
  bad.search.P = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = cfg;
  bad.train.decay = {150, 80};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = cfg;
  bad.train.epochs = 100;  // default milestones 80/150 now out of range
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.train.decay = {40, 70};
  CHECK_NOTHROW(bad.validate());

  bad = cfg;
  bad.train.lambda = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = cfg;
  bad.data.test_fraction = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("config: compact macro spec for count") {
  MacroConfig m = parse_macro_spec("C=64,l=2.2.2.2,hw=384x128", MacroConfig{});
  CHECK(m.C == 64);
  CHECK(m.l == std::array<int, 4>{2, 2, 2, 2});
  CHECK(m.in_h == 384);
  CHECK(m.in_w == 128);

  MacroConfig n = parse_macro_spec("B=2,ids=8,embed=32", MacroConfig{});
  CHECK(n.B == 2);
  CHECK(n.num_ids == 8);
  CHECK(n.embed_dim == 32);

  CHECK_THROWS_AS(parse_macro_spec("C=64,what=2", MacroConfig{}), ParseError);
  CHECK_THROWS_AS(parse_macro_spec("l=2.2.2", MacroConfig{}), ParseError);
  CHECK_THROWS_AS(parse_macro_spec("hw=384", MacroConfig{}), ParseError);
}

TEST_CASE("config: paper schedule constants are the defaults") {
  SearchConfig s;
  CHECK(s.lr_w0 == 0.1);
  CHECK(s.lr_w_min == 0.001);
  CHECK(s.momentum == 0.9);
  CHECK(s.lr_a0 == 0.02);
  CHECK(s.a_decay == std::array<int, 2>{60, 150});
  CHECK(s.weight_decay == 5e-4);
  CHECK(s.margin == 0.3);
  CHECK(s.lambda == 0.5);
  CHECK(s.split_fraction == 0.5);

  TrainConfig t;
  CHECK(t.epochs == 240);
  CHECK(t.lr0 == 0.0035);
  CHECK(t.decay == std::array<int, 2>{80, 150});
  CHECK(t.beta1 == 0.9);
  CHECK(t.weight_decay == 5e-4);
  CHECK(t.P == 8);
  CHECK(t.K == 4);
}
