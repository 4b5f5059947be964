#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "retnas/retnas.hpp"

using namespace retnas;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() /
               cat("retnas_", tag, "_", getpid(), "_", counter++);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p);
  os << s;
  REQUIRE(os.good());
}

struct CliResult {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = cat(RETNAS_CLI_PATH, " ", args, " 2>&1");
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult r;
  char buf[4096];
  size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int st = pclose(pipe);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

Genotype sample_genotype() {
  Genotype g;
  g.space = OpSpace::kReid;
  g.B = 2;
  g.normal = {{0, 1, OpKind::kSepConv3x3, OpKind::kIdentity},
              {1, 2, OpKind::kPartAware, OpKind::kMaxPool3x3}};
  g.reduction = {{0, 1, OpKind::kMaxPool3x3, OpKind::kIdentity},
                 {0, 2, OpKind::kDilConv3x3, OpKind::kAvgPool3x3}};
  g.validate();
  return g;
}

const std::string kDeskConfig = R"(seed = 7
out_dir = run

macro.C = 4
macro.l = 1,1,1,1
macro.B = 2
macro.in_h = 32
macro.in_w = 16
macro.num_ids = 0
macro.embed_dim = 16
macro.dropout_f = 0
macro.dropout_g = 0

search.epochs = 2
search.P = 4
search.K = 2

train.epochs = 2
train.P = 4
train.K = 2
train.decay = 0,1
train.val_fraction = 0.25

data.root = data
data.num_ids = 8
data.imgs_per_id = 8
data.h = 32
data.w = 16
data.test_fraction = 0.25
)";

}  // namespace

TEST_CASE("cli: count matches the library count") {
  const fs::path dir = temp_dir("cli_count");
  const Genotype g = sample_genotype();
  write_text(dir / "g.json", genotype_to_json(g));

  CliResult r = run_cli(cat("count --genotype ", (dir / "g.json").string(),
                            " --macro C=64,l=2.2.2.2,hw=384x128 --out ",
                            (dir / "out").string()));
  INFO(r.output);
  REQUIRE(r.code == 0);

  MacroConfig m = parse_macro_spec("C=64,l=2.2.2.2,hw=384x128", MacroConfig{});
  m.B = g.B;
  const CostReport want = count_params_flops(g, m);
  std::istringstream is(r.output);
  std::string k1, k2;
  int64_t params = 0, macs = 0;
  is >> k1 >> params >> k2 >> macs;
  CHECK(k1 == "params");
  CHECK(k2 == "macs");
  CHECK(params == want.params);
  CHECK(macs == want.macs);
  CHECK(fs::exists(dir / "out" / "config_resolved"));
}

TEST_CASE("cli: derive round-trips an alpha checkpoint") {
  const fs::path dir = temp_dir("cli_derive");
  Rng rng(99);
  const AlphaParams a = AlphaParams::random(OpSpace::kReid, 3, rng, 1.0);
  alpha_to_checkpoint(a).save((dir / "a.ckpt").string());

  CliResult r = run_cli(cat("derive --alpha ", (dir / "a.ckpt").string(),
                            " --out ", (dir / "out").string()));
  INFO(r.output);
  REQUIRE(r.code == 0);
  const Genotype got =
      genotype_from_json(slurp(dir / "out" / "genotype.json"));
  CHECK(got == derive_genotype(a));
}

TEST_CASE("cli: bad input yields a one-line error and nonzero exit") {
  const fs::path dir = temp_dir("cli_err");

  SECTION("unknown flag") {
    CliResult r = run_cli("search --bogus");
    CHECK(r.code != 0);
    CHECK(r.output.rfind("error: ", 0) == 0);
    CHECK(std::count(r.output.begin(), r.output.end(), '\n') == 1);
  }
  SECTION("missing config file") {
    CliResult r =
        run_cli(cat("gen-data --config ", (dir / "nope.cfg").string()));
    CHECK(r.code != 0);
    CHECK(r.output.rfind("error: ", 0) == 0);
    CHECK(std::count(r.output.begin(), r.output.end(), '\n') == 1);
  }
  SECTION("unknown config key") {
    CliResult r = run_cli(cat("gen-data --set nosuch.key=1 --out ",
                              (dir / "out").string()));
    CHECK(r.code != 0);
    CHECK(r.output.rfind("error: ", 0) == 0);
    CHECK(r.output.find("nosuch.key") != std::string::npos);
    CHECK(std::count(r.output.begin(), r.output.end(), '\n') == 1);
  }
  SECTION("contradictory config value") {
    CliResult r = run_cli(cat("gen-data --set search.P=1 --out ",
                              (dir / "out").string()));
    CHECK(r.code != 0);
    CHECK(r.output.rfind("error: ", 0) == 0);
  }
}

TEST_CASE("cli: full pipeline emits a sane eval report") {
  const fs::path dir = temp_dir("cli_pipe");
  write_text(dir / "desk.cfg", kDeskConfig);
  const std::string base =
      cat(" --config ", (dir / "desk.cfg").string(), " --set data.root=",
          (dir / "data").string(), " --out ", (dir / "run").string());

  for (const char* sub : {"gen-data", "search", "train", "eval"}) {
    CliResult r = run_cli(cat(sub, base));
    INFO(sub << ": " << r.output);
    REQUIRE(r.code == 0);
  }

  const fs::path run = dir / "run";
  for (const char* f :
       {"config_resolved", "genotype.json", "search_log.csv",
        "alpha_epoch0.ckpt", "alpha_epoch1.ckpt", "train_log.csv",
        "best.ckpt", "last.ckpt", "features.bin", "eval_report.json"}) {
    INFO(f);
    CHECK(fs::exists(run / f));
  }

  // The resolved config reflects the last subcommand and reparses cleanly.
  const ExperimentConfig cfg = load_config((run / "config_resolved").string());
  CHECK(cfg.mode == "eval");
  CHECK(cfg.seed == 7);

  const Genotype g = genotype_from_json(slurp(run / "genotype.json"));
  CHECK(g.B == 2);

  // 8 ids x 8 images at test_fraction 0.25 -> 16 held-out rows.
  const Tensor feats = read_features((run / "features.bin").string());
  CHECK(feats.dim(0) == 16);
  CHECK(feats.dim(1) == 16);

  const auto rep = nlohmann::json::parse(slurp(run / "eval_report.json"));
  const double map = rep.at("map").get<double>();
  const double rank1 = rep.at("cmc").at("rank1").get<double>();
  CHECK(map >= 0.0);
  CHECK(map <= 1.0);
  CHECK(rank1 >= 0.0);
  CHECK(rank1 <= 1.0);
  CHECK(rep.at("valid_queries").get<int>() == 16);
  CHECK(rep.at("num_query").get<int>() == 16);
}
