#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "retnas/archspace.hpp"
#include "retnas/dataset.hpp"

namespace retnas {

// ---------------------------------------------------------------------------
// Experiment configuration: one text file drives every subcommand. Format is
// flat `key = value` lines with '#' comments; keys are dotted per section.
// Flag overrides use the same `key=value` syntax.
// ---------------------------------------------------------------------------

enum class DatasetKind { kSynthetic, kFolder };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::kSynthetic;
  std::string root = "data";
  // Generator parameters (synthetic only). The generator seed is derived
  // from the experiment seed, so it is not part of the config surface.
  int num_ids = 8;
  int imgs_per_id = 16;
  int h = 64, w = 32;
  double noise = 0.05;
  // Per-identity fraction of images held out from search/train and used by
  // `eval` as the query/gallery pool.
  double test_fraction = 0.25;

  void validate() const {
    RETNAS_CHECK(!root.empty(), "data: root path is empty");
    RETNAS_CHECK(test_fraction >= 0.0 && test_fraction < 1.0,
                 "data: test_fraction must lie in [0, 1)");
    if (kind == DatasetKind::kSynthetic) {
      RETNAS_CHECK(num_ids >= 2 && imgs_per_id >= 2,
                   "data: synthetic set needs >= 2 ids and >= 2 images each");
      RETNAS_CHECK(h >= 1 && w >= 1, "data: bad image size");
      RETNAS_CHECK(noise >= 0.0, "data: noise must be >= 0");
    }
  }
};

struct SearchConfig {
  int epochs = 50;
  int P = 4, K = 4;
  OpSpace space = OpSpace::kReid;
  double lr_w0 = 0.1, lr_w_min = 0.001;  // cosine over epochs
  double momentum = 0.9;
  double lr_a0 = 0.02;
  std::array<int, 2> a_decay{60, 150};  // x0.1 milestones
  double weight_decay = 5e-4;
  double margin = 0.3;
  double lambda = 0.5;
  double split_fraction = 0.5;
  bool alpha_triplet_only = false;  // variant objective for the alpha step

  void validate() const {
    RETNAS_CHECK(epochs >= 0, "search: epochs must be >= 0");
    RETNAS_CHECK(P >= 2 && K >= 2,
                 "search: P and K must be >= 2 for triplet mining");
    RETNAS_CHECK(lr_w0 > 0.0 && lr_w_min > 0.0 && lr_a0 > 0.0,
                 "search: learning rates must be > 0");
    RETNAS_CHECK(a_decay[0] < a_decay[1],
                 "search: decay milestones must increase");
    RETNAS_CHECK(split_fraction > 0.0 && split_fraction < 1.0,
                 "search: split fraction must lie in (0, 1)");
    RETNAS_CHECK(margin >= 0.0, "search: margin must be >= 0");
    RETNAS_CHECK(lambda >= 0.0 && lambda <= 1.0,
                 "search: lambda must lie in [0, 1]");
    RETNAS_CHECK(weight_decay >= 0.0, "search: weight decay must be >= 0");
  }
};

struct TrainConfig {
  int epochs = 240;
  int P = 8, K = 4;
  double lr0 = 0.0035;
  std::array<int, 2> decay{80, 150};  // x0.1 milestones
  double beta1 = 0.9;
  double weight_decay = 5e-4;
  double margin = 0.3;
  double lambda = 0.5;
  bool flip = true;
  bool crop = true;
  int crop_pad = 10;
  // Identity fraction held out for best-checkpoint selection; 0 disables
  // selection (best == last).
  double val_fraction = 0.1;

  void validate() const {
    RETNAS_CHECK(epochs >= 0, "train: epochs must be >= 0");
    RETNAS_CHECK(P >= 2 && K >= 2,
                 "train: P and K must be >= 2 for triplet mining");
    RETNAS_CHECK(lr0 > 0.0, "train: learning rate must be > 0");
    RETNAS_CHECK(decay[0] < decay[1],
                 "train: decay milestones must increase");
    RETNAS_CHECK(epochs == 0 || decay[1] < epochs,
                 "train: decay milestones must precede the final epoch");
    RETNAS_CHECK(margin >= 0.0, "train: margin must be >= 0");
    RETNAS_CHECK(lambda >= 0.0 && lambda <= 1.0,
                 "train: lambda must lie in [0, 1]");
    RETNAS_CHECK(crop_pad >= 0, "train: crop pad must be >= 0");
    RETNAS_CHECK(val_fraction >= 0.0 && val_fraction < 1.0,
                 "train: val fraction must lie in [0, 1)");
    RETNAS_CHECK(weight_decay >= 0.0, "train: weight decay must be >= 0");
  }
};

struct ExperimentConfig {
  uint64_t seed = 0;
  std::string out_dir = "run";
  std::string mode;  // last subcommand that resolved this config
  MacroConfig macro;
  SearchConfig search;
  TrainConfig train;
  DatasetSpec data;

  void validate() const {
    RETNAS_CHECK(!out_dir.empty(), "config: out_dir is empty");
    // macro.num_ids == 0 means "infer from the dataset"; resolve before use.
    if (macro.num_ids != 0) macro.validate();
    search.validate();
    train.validate();
    data.validate();
  }
};

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(trim(part));
  return out;
}

template <typename T>
T parse_num(const std::string& key, const std::string& s) {
  std::istringstream is(s);
  T v{};
  is >> v;
  if (is.fail() || !is.eof())
    throw ParseError(key, cat("cannot parse number from \"", s, "\""));
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ParseError(key, cat("expected a boolean, got \"", s, "\""));
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

// Applies `key = value` to one field; throws ParseError on unknown keys or
// malformed values. This is the single authority for the config schema.
inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value) {
  using detail::parse_bool;
  using detail::parse_num;
  auto num_list = [&](int n) {
    std::vector<std::string> parts = detail::split_commas(value);
    if (static_cast<int>(parts.size()) != n)
      throw ParseError(key, cat("expected ", n, " comma-separated values"));
    std::vector<int> out;
    for (const std::string& p : parts) out.push_back(parse_num<int>(key, p));
    return out;
  };

  if (key == "seed") cfg.seed = parse_num<uint64_t>(key, value);
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "mode") cfg.mode = value;

  else if (key == "macro.C") cfg.macro.C = parse_num<int>(key, value);
  else if (key == "macro.l") {
    std::vector<int> l = num_list(4);
    std::copy(l.begin(), l.end(), cfg.macro.l.begin());
  } else if (key == "macro.B") cfg.macro.B = parse_num<int>(key, value);
  else if (key == "macro.in_h") cfg.macro.in_h = parse_num<int>(key, value);
  else if (key == "macro.in_w") cfg.macro.in_w = parse_num<int>(key, value);
  else if (key == "macro.num_ids") cfg.macro.num_ids = parse_num<int>(key, value);
  else if (key == "macro.embed_dim") cfg.macro.embed_dim = parse_num<int>(key, value);
  else if (key == "macro.dropout_f") cfg.macro.dropout_f = parse_num<double>(key, value);
  else if (key == "macro.dropout_g") cfg.macro.dropout_g = parse_num<double>(key, value);

  else if (key == "search.epochs") cfg.search.epochs = parse_num<int>(key, value);
  else if (key == "search.P") cfg.search.P = parse_num<int>(key, value);
  else if (key == "search.K") cfg.search.K = parse_num<int>(key, value);
  else if (key == "search.space") {
    std::optional<OpSpace> s = op_space_from_string(value);
    if (!s) throw ParseError(key, "expected \"reid\" or \"classic\"");
    cfg.search.space = *s;
  } else if (key == "search.lr_w0") cfg.search.lr_w0 = parse_num<double>(key, value);
  else if (key == "search.lr_w_min") cfg.search.lr_w_min = parse_num<double>(key, value);
  else if (key == "search.momentum") cfg.search.momentum = parse_num<double>(key, value);
  else if (key == "search.lr_a0") cfg.search.lr_a0 = parse_num<double>(key, value);
  else if (key == "search.a_decay") {
    std::vector<int> m = num_list(2);
    cfg.search.a_decay = {m[0], m[1]};
  } else if (key == "search.weight_decay") cfg.search.weight_decay = parse_num<double>(key, value);
  else if (key == "search.margin") cfg.search.margin = parse_num<double>(key, value);
  else if (key == "search.lambda") cfg.search.lambda = parse_num<double>(key, value);
  else if (key == "search.split_fraction") cfg.search.split_fraction = parse_num<double>(key, value);
  else if (key == "search.alpha_triplet_only") cfg.search.alpha_triplet_only = parse_bool(key, value);

  else if (key == "train.epochs") cfg.train.epochs = parse_num<int>(key, value);
  else if (key == "train.P") cfg.train.P = parse_num<int>(key, value);
  else if (key == "train.K") cfg.train.K = parse_num<int>(key, value);
  else if (key == "train.lr0") cfg.train.lr0 = parse_num<double>(key, value);
  else if (key == "train.decay") {
    std::vector<int> m = num_list(2);
    cfg.train.decay = {m[0], m[1]};
  } else if (key == "train.beta1") cfg.train.beta1 = parse_num<double>(key, value);
  else if (key == "train.weight_decay") cfg.train.weight_decay = parse_num<double>(key, value);
  else if (key == "train.margin") cfg.train.margin = parse_num<double>(key, value);
  else if (key == "train.lambda") cfg.train.lambda = parse_num<double>(key, value);
  else if (key == "train.flip") cfg.train.flip = parse_bool(key, value);
  else if (key == "train.crop") cfg.train.crop = parse_bool(key, value);
  else if (key == "train.crop_pad") cfg.train.crop_pad = parse_num<int>(key, value);
  else if (key == "train.val_fraction") cfg.train.val_fraction = parse_num<double>(key, value);

  else if (key == "data.kind") {
    if (value == "synthetic") cfg.data.kind = DatasetKind::kSynthetic;
    else if (value == "folder") cfg.data.kind = DatasetKind::kFolder;
    else throw ParseError(key, "expected \"synthetic\" or \"folder\"");
  } else if (key == "data.root") cfg.data.root = value;
  else if (key == "data.num_ids") cfg.data.num_ids = parse_num<int>(key, value);
  else if (key == "data.imgs_per_id") cfg.data.imgs_per_id = parse_num<int>(key, value);
  else if (key == "data.h") cfg.data.h = parse_num<int>(key, value);
  else if (key == "data.w") cfg.data.w = parse_num<int>(key, value);
  else if (key == "data.noise") cfg.data.noise = parse_num<double>(key, value);
  else if (key == "data.test_fraction") cfg.data.test_fraction = parse_num<double>(key, value);

  else throw ParseError(key, "unknown config key");
}

// One override string of the form "key=value".
inline void apply_override(ExperimentConfig& cfg, const std::string& text) {
  const size_t eq = text.find('=');
  if (eq == std::string::npos)
    throw ParseError(text, "override must look like key=value");
  apply_config_entry(cfg, detail::trim(text.substr(0, eq)),
                     detail::trim(text.substr(eq + 1)));
}

inline ExperimentConfig parse_config_text(const std::string& text,
                                          const std::string& origin = "<config>") {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(cat(origin, ":", lineno), "expected key = value");
    apply_config_entry(cfg, detail::trim(line.substr(0, eq)),
                       detail::trim(line.substr(eq + 1)));
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError(path, "cannot open config file");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

// Canonical serialization: every key, fixed order, exact doubles. Written as
// `config_resolved` by each run so experiments replay from one file.
inline std::string serialize_config(const ExperimentConfig& c) {
  using detail::fmt;
  std::ostringstream os;
  os << "seed = " << c.seed << "\n";
  os << "out_dir = " << c.out_dir << "\n";
  os << "mode = " << c.mode << "\n";
  os << "\n";
  os << "macro.C = " << c.macro.C << "\n";
  os << "macro.l = " << c.macro.l[0] << "," << c.macro.l[1] << ","
     << c.macro.l[2] << "," << c.macro.l[3] << "\n";
  os << "macro.B = " << c.macro.B << "\n";
  os << "macro.in_h = " << c.macro.in_h << "\n";
  os << "macro.in_w = " << c.macro.in_w << "\n";
  os << "macro.num_ids = " << c.macro.num_ids << "\n";
  os << "macro.embed_dim = " << c.macro.embed_dim << "\n";
  os << "macro.dropout_f = " << fmt(c.macro.dropout_f) << "\n";
  os << "macro.dropout_g = " << fmt(c.macro.dropout_g) << "\n";
  os << "\n";
  os << "search.epochs = " << c.search.epochs << "\n";
  os << "search.P = " << c.search.P << "\n";
  os << "search.K = " << c.search.K << "\n";
  os << "search.space = " << to_string(c.search.space) << "\n";
  os << "search.lr_w0 = " << fmt(c.search.lr_w0) << "\n";
  os << "search.lr_w_min = " << fmt(c.search.lr_w_min) << "\n";
  os << "search.momentum = " << fmt(c.search.momentum) << "\n";
  os << "search.lr_a0 = " << fmt(c.search.lr_a0) << "\n";
  os << "search.a_decay = " << c.search.a_decay[0] << ","
     << c.search.a_decay[1] << "\n";
  os << "search.weight_decay = " << fmt(c.search.weight_decay) << "\n";
  os << "search.margin = " << fmt(c.search.margin) << "\n";
  os << "search.lambda = " << fmt(c.search.lambda) << "\n";
  os << "search.split_fraction = " << fmt(c.search.split_fraction) << "\n";
  os << "search.alpha_triplet_only = "
     << (c.search.alpha_triplet_only ? "true" : "false") << "\n";
  os << "\n";
  os << "train.epochs = " << c.train.epochs << "\n";
  os << "train.P = " << c.train.P << "\n";
  os << "train.K = " << c.train.K << "\n";
  os << "train.lr0 = " << fmt(c.train.lr0) << "\n";
  os << "train.decay = " << c.train.decay[0] << "," << c.train.decay[1] << "\n";
  os << "train.beta1 = " << fmt(c.train.beta1) << "\n";
  os << "train.weight_decay = " << fmt(c.train.weight_decay) << "\n";
  os << "train.margin = " << fmt(c.train.margin) << "\n";
  os << "train.lambda = " << fmt(c.train.lambda) << "\n";
  os << "train.flip = " << (c.train.flip ? "true" : "false") << "\n";
  os << "train.crop = " << (c.train.crop ? "true" : "false") << "\n";
  os << "train.crop_pad = " << c.train.crop_pad << "\n";
  os << "train.val_fraction = " << fmt(c.train.val_fraction) << "\n";
  os << "\n";
  os << "data.kind = "
     << (c.data.kind == DatasetKind::kSynthetic ? "synthetic" : "folder")
     << "\n";
  os << "data.root = " << c.data.root << "\n";
  os << "data.num_ids = " << c.data.num_ids << "\n";
  os << "data.imgs_per_id = " << c.data.imgs_per_id << "\n";
  os << "data.h = " << c.data.h << "\n";
  os << "data.w = " << c.data.w << "\n";
  os << "data.noise = " << fmt(c.data.noise) << "\n";
  os << "data.test_fraction = " << fmt(c.data.test_fraction) << "\n";
  return os.str();
}

inline void write_resolved_config(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  const std::string path =
      (std::filesystem::path(cfg.out_dir) / "config_resolved").string();
  std::ofstream os(path);
  if (!os) throw std::runtime_error(cat("cannot write ", path));
  os << serialize_config(cfg);
}

// Compact macro override used by `count`: "C=64,l=2.2.2.2,hw=384x128".
inline MacroConfig parse_macro_spec(const std::string& text, MacroConfig base) {
  for (const std::string& part : detail::split_commas(text)) {
    if (part.empty()) continue;
    const size_t eq = part.find('=');
    if (eq == std::string::npos)
      throw ParseError(part, "macro spec entries look like key=value");
    const std::string key = detail::trim(part.substr(0, eq));
    const std::string value = detail::trim(part.substr(eq + 1));
    if (key == "C") base.C = detail::parse_num<int>(key, value);
    else if (key == "B") base.B = detail::parse_num<int>(key, value);
    else if (key == "ids") base.num_ids = detail::parse_num<int>(key, value);
    else if (key == "embed") base.embed_dim = detail::parse_num<int>(key, value);
    else if (key == "l") {
      std::vector<std::string> ls;
      std::stringstream ss(value);
      std::string p;
      while (std::getline(ss, p, '.')) ls.push_back(p);
      if (ls.size() != 4) throw ParseError(key, "expected l=a.b.c.d");
      for (int k = 0; k < 4; ++k)
        base.l[static_cast<size_t>(k)] = detail::parse_num<int>(key, ls[static_cast<size_t>(k)]);
    } else if (key == "hw") {
      const size_t x = value.find('x');
      if (x == std::string::npos) throw ParseError(key, "expected hw=HxW");
      base.in_h = detail::parse_num<int>(key, value.substr(0, x));
      base.in_w = detail::parse_num<int>(key, value.substr(x + 1));
    } else {
      throw ParseError(key, "unknown macro spec key");
    }
  }
  return base;
}

}  // namespace retnas
