#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "retnas/common.hpp"
#include "retnas/partaware.hpp"
#include "retnas/rng.hpp"

namespace retnas {

// ---------------------------------------------------------------------------
// Operation vocabulary
// ---------------------------------------------------------------------------

enum class OpKind : int {
  kPartAware = 0,
  kMaxPool3x3,
  kAvgPool3x3,
  kSepConv3x3,
  kDilConv3x3,
  kZero,
  kIdentity,
};

constexpr int kNumOpKinds = 7;

inline const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::kPartAware: return "part_aware";
    case OpKind::kMaxPool3x3: return "max_pool_3x3";
    case OpKind::kAvgPool3x3: return "avg_pool_3x3";
    case OpKind::kSepConv3x3: return "sep_conv_3x3";
    case OpKind::kDilConv3x3: return "dil_conv_3x3";
    case OpKind::kZero: return "zero";
    case OpKind::kIdentity: return "identity";
  }
  throw std::invalid_argument("bad OpKind");
}

inline std::optional<OpKind> op_kind_from_string(const std::string& s) {
  for (int i = 0; i < kNumOpKinds; ++i) {
    OpKind k = static_cast<OpKind>(i);
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

// The retrieval space carries the part-aware op; the classic space is the
// same vocabulary without it.
enum class OpSpace : int { kReid = 0, kClassic = 1 };

inline const char* to_string(OpSpace s) {
  return s == OpSpace::kReid ? "reid" : "classic";
}

inline std::optional<OpSpace> op_space_from_string(const std::string& s) {
  if (s == "reid") return OpSpace::kReid;
  if (s == "classic") return OpSpace::kClassic;
  return std::nullopt;
}

inline std::vector<OpKind> ops_in_space(OpSpace s) {
  std::vector<OpKind> out;
  for (int i = 0; i < kNumOpKinds; ++i) {
    OpKind k = static_cast<OpKind>(i);
    if (s == OpSpace::kClassic && k == OpKind::kPartAware) continue;
    out.push_back(k);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Discrete genotype
// ---------------------------------------------------------------------------

// One block consumes two earlier tensors: indices 0 and 1 are the two
// previous cells, index 2+j is block j of the same cell.
struct BlockSpec {
  int i1 = 0, i2 = 0;
  OpKind o1 = OpKind::kIdentity, o2 = OpKind::kIdentity;

  bool operator==(const BlockSpec&) const = default;
};

inline constexpr const char* kGenotypeVersion = "1";

struct Genotype {
  OpSpace space = OpSpace::kReid;
  int B = 4;
  std::vector<BlockSpec> normal, reduction;

  bool operator==(const Genotype&) const = default;

  void validate() const {
    RETNAS_CHECK(B >= 1, "genotype: B must be >= 1");
    RETNAS_CHECK(static_cast<int>(normal.size()) == B, "genotype: expected ", B,
                 " normal blocks, got ", normal.size());
    RETNAS_CHECK(static_cast<int>(reduction.size()) == B,
                 "genotype: expected ", B, " reduction blocks, got ",
                 reduction.size());
    auto check_cell = [&](const std::vector<BlockSpec>& cell, const char* name) {
      for (int i = 0; i < B; ++i) {
        const BlockSpec& b = cell[i];
        RETNAS_CHECK(b.i1 >= 0 && b.i1 < 2 + i && b.i2 >= 0 && b.i2 < 2 + i,
                     "genotype: ", name, " block ", i,
                     " input out of range (i1=", b.i1, ", i2=", b.i2, ")");
        if (space == OpSpace::kClassic) {
          RETNAS_CHECK(
              b.o1 != OpKind::kPartAware && b.o2 != OpKind::kPartAware,
              "genotype: ", name, " block ", i, " uses part_aware in classic space");
        }
      }
    };
    check_cell(normal, "normal");
    check_cell(reduction, "reduction");
  }
};

// ---------------------------------------------------------------------------
// Continuous architecture parameters
// ---------------------------------------------------------------------------

// One logit row per (block, candidate-input) edge, per cell type. Rows are
// laid out block-major: block i contributes 2+i rows.
struct AlphaParams {
  OpSpace space = OpSpace::kReid;
  int B = 4;
  std::vector<std::vector<double>> normal, reduction;

  static int num_edges(int B) { return B * (B + 3) / 2; }
  static int edge_index(int block, int input) {
    return block * (block + 3) / 2 + input;
  }

  int num_ops() const { return static_cast<int>(ops_in_space(space).size()); }

  static AlphaParams zeros(OpSpace space, int B) {
    RETNAS_CHECK(B >= 1, "alpha: B must be >= 1");
    AlphaParams a;
    a.space = space;
    a.B = B;
    const int n_ops = a.num_ops();
    a.normal.assign(num_edges(B), std::vector<double>(n_ops, 0.0));
    a.reduction = a.normal;
    return a;
  }

  static AlphaParams random(OpSpace space, int B, Rng& rng, double stddev = 1e-3) {
    AlphaParams a = zeros(space, B);
    for (auto* cell : {&a.normal, &a.reduction})
      for (auto& row : *cell)
        for (double& x : row) x = stddev * rng.normal();
    return a;
  }

  void validate() const {
    RETNAS_CHECK(B >= 1, "alpha: B must be >= 1");
    const size_t edges = static_cast<size_t>(num_edges(B));
    const size_t n_ops = static_cast<size_t>(num_ops());
    RETNAS_CHECK(normal.size() == edges && reduction.size() == edges,
                 "alpha: expected ", edges, " edge rows per cell");
    for (const auto* cell : {&normal, &reduction})
      for (const auto& row : *cell) {
        RETNAS_CHECK(row.size() == n_ops, "alpha: row width ", row.size(),
                     " != op count ", n_ops);
        for (double x : row)
          RETNAS_CHECK(std::isfinite(x), "alpha: non-finite logit");
      }
  }
};

namespace detail {

inline std::vector<double> softmax(const std::vector<double>& z) {
  double m = *std::max_element(z.begin(), z.end());
  std::vector<double> e(z.size());
  double sum = 0.0;
  for (size_t i = 0; i < z.size(); ++i) {
    e[i] = std::exp(z[i] - m);
    sum += e[i];
  }
  for (double& x : e) x /= sum;
  return e;
}

}  // namespace detail

// Discretization rule: per block, score every candidate input by the
// largest softmax weight among its non-zero ops, keep the two strongest
// inputs (ties -> lower index), and give each kept input its strongest
// non-zero op (ties -> lower ordinal). The zero op can never be chosen.
inline Genotype derive_genotype(const AlphaParams& alpha) {
  alpha.validate();
  const std::vector<OpKind> ops = ops_in_space(alpha.space);

  auto derive_cell = [&](const std::vector<std::vector<double>>& rows) {
    std::vector<BlockSpec> cell;
    for (int blk = 0; blk < alpha.B; ++blk) {
      const int n_in = 2 + blk;
      std::vector<double> strength(n_in);
      std::vector<OpKind> best_op(n_in);
      for (int h = 0; h < n_in; ++h) {
        const std::vector<double> w =
            detail::softmax(rows[AlphaParams::edge_index(blk, h)]);
        double best = -1.0;
        OpKind arg = ops[0];
        for (size_t oi = 0; oi < ops.size(); ++oi) {
          if (ops[oi] == OpKind::kZero) continue;
          if (w[oi] > best) {
            best = w[oi];
            arg = ops[oi];
          }
        }
        strength[h] = best;
        best_op[h] = arg;
      }
      std::vector<int> order(n_in);
      for (int h = 0; h < n_in; ++h) order[h] = h;
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (strength[a] != strength[b]) return strength[a] > strength[b];
        return a < b;
      });
      BlockSpec b;
      b.i1 = order[0];
      b.i2 = order[1];
      b.o1 = best_op[b.i1];
      b.o2 = best_op[b.i2];
      cell.push_back(b);
    }
    return cell;
  };

  Genotype g;
  g.space = alpha.space;
  g.B = alpha.B;
  g.normal = derive_cell(alpha.normal);
  g.reduction = derive_cell(alpha.reduction);
  return g;
}

// ---------------------------------------------------------------------------
// JSON serialization (strict)
// ---------------------------------------------------------------------------

namespace detail {

inline const nlohmann::json& require_key(const nlohmann::json& obj,
                                         const std::string& path,
                                         const std::string& key) {
  if (!obj.contains(key)) throw ParseError(path + "." + key, "missing key");
  return obj.at(key);
}

inline void reject_unknown(const nlohmann::json& obj, const std::string& path,
                           std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) known = true;
    if (!known) throw ParseError(path + "." + item.key(), "unknown key");
  }
}

inline int require_int(const nlohmann::json& obj, const std::string& path,
                       const std::string& key) {
  const nlohmann::json& v = require_key(obj, path, key);
  if (!v.is_number_integer())
    throw ParseError(path + "." + key, "integer expected");
  return v.get<int>();
}

inline std::string require_string(const nlohmann::json& obj,
                                  const std::string& path,
                                  const std::string& key) {
  const nlohmann::json& v = require_key(obj, path, key);
  if (!v.is_string()) throw ParseError(path + "." + key, "string expected");
  return v.get<std::string>();
}

inline std::vector<BlockSpec> parse_cell(const nlohmann::json& arr,
                                         const std::string& path, int B,
                                         OpSpace space) {
  if (!arr.is_array()) throw ParseError(path, "array expected");
  if (static_cast<int>(arr.size()) != B)
    throw ParseError(path, cat("expected ", B, " blocks, got ", arr.size()));
  std::vector<BlockSpec> cell;
  for (int i = 0; i < B; ++i) {
    const std::string bp = cat(path, "[", i, "]");
    const nlohmann::json& jb = arr.at(i);
    if (!jb.is_object()) throw ParseError(bp, "object expected");
    reject_unknown(jb, bp, {"i1", "i2", "o1", "o2"});
    BlockSpec b;
    b.i1 = require_int(jb, bp, "i1");
    b.i2 = require_int(jb, bp, "i2");
    auto parse_op = [&](const char* key) {
      const std::string s = require_string(jb, bp, key);
      std::optional<OpKind> k = op_kind_from_string(s);
      if (!k) throw ParseError(bp + "." + key, "unknown op \"" + s + "\"");
      if (space == OpSpace::kClassic && *k == OpKind::kPartAware)
        throw ParseError(bp + "." + key, "part_aware not in classic space");
      return *k;
    };
    b.o1 = parse_op("o1");
    b.o2 = parse_op("o2");
    if (b.i1 < 0 || b.i1 >= 2 + i)
      throw ParseError(bp + ".i1", cat("input index out of range [0, ", 2 + i, ")"));
    if (b.i2 < 0 || b.i2 >= 2 + i)
      throw ParseError(bp + ".i2", cat("input index out of range [0, ", 2 + i, ")"));
    cell.push_back(b);
  }
  return cell;
}

}  // namespace detail

inline std::string genotype_to_json(const Genotype& g) {
  g.validate();
  nlohmann::ordered_json j;
  j["version"] = kGenotypeVersion;
  j["space"] = to_string(g.space);
  j["B"] = g.B;
  auto cell_to_json = [](const std::vector<BlockSpec>& cell) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const BlockSpec& b : cell) {
      nlohmann::ordered_json jb;
      jb["i1"] = b.i1;
      jb["i2"] = b.i2;
      jb["o1"] = to_string(b.o1);
      jb["o2"] = to_string(b.o2);
      arr.push_back(jb);
    }
    return arr;
  };
  j["normal"] = cell_to_json(g.normal);
  j["reduction"] = cell_to_json(g.reduction);
  return j.dump(2) + "\n";
}

inline Genotype genotype_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("$", e.what());
  }
  if (!j.is_object()) throw ParseError("$", "object expected");
  detail::reject_unknown(j, "$", {"version", "space", "B", "normal", "reduction"});

  const std::string version = detail::require_string(j, "$", "version");
  if (version != kGenotypeVersion)
    throw ParseError("$.version", cat("unsupported version \"", version,
                                      "\" (expected \"", kGenotypeVersion, "\")"));
  const std::string space_s = detail::require_string(j, "$", "space");
  std::optional<OpSpace> space = op_space_from_string(space_s);
  if (!space) throw ParseError("$.space", "expected \"reid\" or \"classic\"");
  const int B = detail::require_int(j, "$", "B");
  if (B < 1) throw ParseError("$.B", "B must be >= 1");

  Genotype g;
  g.space = *space;
  g.B = B;
  g.normal = detail::parse_cell(detail::require_key(j, "$", "normal"),
                                "$.normal", B, *space);
  g.reduction = detail::parse_cell(detail::require_key(j, "$", "reduction"),
                                   "$.reduction", B, *space);
  return g;
}

inline std::string genotype_to_text(const Genotype& g) {
  g.validate();
  std::ostringstream os;
  auto dump_cell = [&](const char* name, const std::vector<BlockSpec>& cell) {
    os << name << " cell (B=" << g.B << "):\n";
    for (size_t i = 0; i < cell.size(); ++i) {
      const BlockSpec& b = cell[i];
      os << "  block " << i << " <- (" << b.i1 << ", " << to_string(b.o1)
         << ") + (" << b.i2 << ", " << to_string(b.o2) << ")\n";
    }
  };
  dump_cell("normal", g.normal);
  dump_cell("reduction", g.reduction);
  return os.str();
}

// ---------------------------------------------------------------------------
// Macro skeleton
// ---------------------------------------------------------------------------

struct MacroConfig {
  int C = 32;
  std::array<int, 4> l{2, 2, 2, 2};  // cells per stage
  int B = 4;
  int in_h = 384, in_w = 128;
  int num_ids = 751;
  int embed_dim = 512;
  double dropout_f = 0.5, dropout_g = 0.5;

  void validate(int part_M = 4) const {
    RETNAS_CHECK(C >= 1, "macro: C must be >= 1");
    for (int lk : l) RETNAS_CHECK(lk >= 1, "macro: stage depths must be >= 1");
    RETNAS_CHECK(B >= 1, "macro: B must be >= 1");
    RETNAS_CHECK(in_h >= 16 && in_h % 16 == 0,
                 "macro: input height must be a positive multiple of 16, got ",
                 in_h);
    RETNAS_CHECK(in_w >= 8, "macro: input width too small: ", in_w);
    for (int k = 0; k < 4; ++k)
      RETNAS_CHECK((in_h >> k) % part_M == 0, "macro: stage height ",
                   in_h >> k, " not divisible by part count M=", part_M);
    RETNAS_CHECK(num_ids >= 1, "macro: num_ids must be >= 1");
    RETNAS_CHECK(embed_dim >= 1, "macro: embed_dim must be >= 1");
    RETNAS_CHECK(dropout_f >= 0.0 && dropout_f <= 1.0 && dropout_g >= 0.0 &&
                     dropout_g <= 1.0,
                 "macro: dropout probabilities must lie in [0, 1]");
  }
};

// Static layout of one cell in the chain. Preprocessing 1x1 convs bring
// both inputs to (width, op_h, op_w); edge ops from cell inputs (indices
// 0/1) run at that resolution with the cell stride, ops from earlier
// blocks run at the output resolution with stride 1.
struct CellPlan {
  int stage = 0;
  bool reduction = false;
  int width = 0;
  int in0_c = 0, in1_c = 0;
  int in0_h = 0, in0_w = 0, in1_h = 0, in1_w = 0;
  int op_h = 0, op_w = 0;
  int out_h = 0, out_w = 0;
  int pre0_stride = 1, pre1_stride = 1;

  int stride() const { return reduction ? 2 : 1; }
};

struct MacroPlan {
  MacroConfig cfg;
  int stem_c = 0, stem_h = 0, stem_w = 0;
  std::vector<CellPlan> cells;
  int feat_c = 0, feat_h = 0, feat_w = 0;  // backbone output (pre-GAP)
};

inline MacroPlan build_macro_plan(const MacroConfig& m, int part_M = 4) {
  m.validate(part_M);
  MacroPlan plan;
  plan.cfg = m;
  plan.stem_c = m.C;
  plan.stem_h = m.in_h;
  plan.stem_w = m.in_w;

  struct Feat {
    int c, h, w;
  };
  Feat prev_prev{m.C, m.in_h, m.in_w};
  Feat prev = prev_prev;

  for (int stage = 0; stage < 4; ++stage) {
    const int width = m.C << stage;
    for (int j = 0; j < m.l[stage]; ++j) {
      CellPlan cp;
      cp.stage = stage;
      cp.reduction = (stage > 0 && j == 0);
      cp.width = width;
      cp.in0_c = prev_prev.c;
      cp.in0_h = prev_prev.h;
      cp.in0_w = prev_prev.w;
      cp.in1_c = prev.c;
      cp.in1_h = prev.h;
      cp.in1_w = prev.w;
      cp.op_h = prev.h;
      cp.op_w = prev.w;
      RETNAS_CHECK(prev_prev.h % prev.h == 0 && prev_prev.h / prev.h <= 2,
                   "macro: inconsistent input resolutions");
      cp.pre0_stride = prev_prev.h / prev.h;
      cp.pre1_stride = 1;
      cp.out_h = cp.reduction ? (cp.op_h + 1) / 2 : cp.op_h;
      cp.out_w = cp.reduction ? (cp.op_w + 1) / 2 : cp.op_w;
      plan.cells.push_back(cp);
      prev_prev = prev;
      prev = Feat{width, cp.out_h, cp.out_w};
    }
  }
  plan.feat_c = prev.c;
  plan.feat_h = prev.h;
  plan.feat_w = prev.w;
  return plan;
}

// ---------------------------------------------------------------------------
// Static parameter / FLOP accounting (FLOPs = MACs; conv has no bias,
// batch-norm contributes gamma/beta to the param count)
// ---------------------------------------------------------------------------

struct CostRow {
  std::string name;
  int64_t params = 0;
  int64_t macs = 0;
};

struct CostReport {
  int64_t params = 0;
  int64_t macs = 0;
  std::vector<CostRow> rows;

  void add(std::string name, int64_t p, int64_t m) {
    rows.push_back({std::move(name), p, m});
    params += p;
    macs += m;
  }
};

// Resolution knobs that affect cost but live outside the genotype.
struct PartAwareDefaults {
  int M = 4;
  int heads = 1;
  int d = 0;  // 0: use the op width
};

struct OpCost {
  int64_t params = 0;
  int64_t macs = 0;
};

// Bare convolution, no bias.
inline OpCost conv_cost(int64_t cin, int64_t cout, int64_t k, int64_t out_px) {
  return {cin * cout * k * k, cin * cout * k * k * out_px};
}

// Convolution followed by batch norm (gamma/beta counted, buffers not).
inline OpCost conv_bn_cost(int64_t cin, int64_t cout, int64_t k, int64_t out_px) {
  const OpCost c = conv_cost(cin, cout, k, out_px);
  return {c.params + 2 * cout, c.macs};
}

namespace detail {

inline int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

inline OpCost op_cost(OpKind kind, int width, int stride, int in_h, int in_w,
                      const PartAwareDefaults& pd) {
  const int64_t w = width;
  const int64_t out_px = ceil_div(in_h, stride) * ceil_div(in_w, stride);
  switch (kind) {
    case OpKind::kZero:
    case OpKind::kIdentity:
    case OpKind::kMaxPool3x3:
    case OpKind::kAvgPool3x3:
      return {0, 0};
    case OpKind::kSepConv3x3:
      // Two stacked depthwise-separable applications, each with its own BN.
      return {2 * (9 * w + w * w + 2 * w), 2 * (9 * w + w * w) * out_px};
    case OpKind::kDilConv3x3:
      return {9 * w + w * w + 2 * w, (9 * w + w * w) * out_px};
    case OpKind::kPartAware: {
      PartAwareConfig cfg;
      cfg.M = pd.M;
      cfg.heads = pd.heads;
      cfg.d = pd.d > 0 ? pd.d : width;
      cfg.cin = width;
      cfg.cout = width;
      cfg.stride = stride;
      const PartAwareCost c = part_aware_cost(cfg);
      return {c.params, c.macs_at(in_h, in_w, stride)};
    }
  }
  throw std::invalid_argument("bad OpKind");
}

}  // namespace detail

inline CostReport count_params_flops(const Genotype& g, const MacroConfig& m,
                                     const PartAwareDefaults& pd = {}) {
  g.validate();
  RETNAS_CHECK(g.B == m.B, "count: genotype B=", g.B, " != macro B=", m.B);
  const MacroPlan plan = build_macro_plan(m, pd.M);

  CostReport rep;
  rep.add("stem", 3 * m.C * 9 + 2 * m.C,
          static_cast<int64_t>(3) * m.C * 9 * m.in_h * m.in_w);

  for (size_t ci = 0; ci < plan.cells.size(); ++ci) {
    const CellPlan& cp = plan.cells[ci];
    const std::vector<BlockSpec>& cell = cp.reduction ? g.reduction : g.normal;
    int64_t p = 0, mac = 0;

    const int64_t op_px = static_cast<int64_t>(cp.op_h) * cp.op_w;
    const int64_t out_px = static_cast<int64_t>(cp.out_h) * cp.out_w;
    const auto pre0 = conv_bn_cost(cp.in0_c, cp.width, 1, op_px);
    const auto pre1 = conv_bn_cost(cp.in1_c, cp.width, 1, op_px);
    p += pre0.params + pre1.params;
    mac += pre0.macs + pre1.macs;

    for (int blk = 0; blk < g.B; ++blk) {
      const BlockSpec& b = cell[blk];
      for (const auto& [input, op] : {std::pair{b.i1, b.o1}, std::pair{b.i2, b.o2}}) {
        const bool from_cell_input = input < 2;
        const int stride = (cp.reduction && from_cell_input) ? 2 : 1;
        const int ih = from_cell_input ? cp.op_h : cp.out_h;
        const int iw = from_cell_input ? cp.op_w : cp.out_w;
        const auto oc = detail::op_cost(op, cp.width, stride, ih, iw, pd);
        p += oc.params;
        mac += oc.macs;
      }
    }

    const auto proj =
        conv_bn_cost(static_cast<int64_t>(g.B) * cp.width, cp.width, 1, out_px);
    p += proj.params;
    mac += proj.macs;

    rep.add(cat("cell", ci, cp.reduction ? " (reduction)" : ""), p, mac);
  }

  // Head: GAP -> f -> dropout -> embed -> dropout -> classifier.
  const int64_t fc = plan.feat_c;
  const int64_t head_p = fc * m.embed_dim + m.embed_dim          // embed (w+b)
                         + static_cast<int64_t>(m.embed_dim) * m.num_ids + m.num_ids;
  const int64_t head_m = fc * m.embed_dim +
                         static_cast<int64_t>(m.embed_dim) * m.num_ids;
  rep.add("head", head_p, head_m);
  return rep;
}

// Hand-rolled ResNet-18 walk used as the accounting anchor: conv1 7x7/2,
// 3x3/2 max pool, four 2-block stages (64/128/256/512, stride-2 entry with
// a 1x1 downsample from stage 2 on), GAP, fully connected classifier.
inline CostReport resnet18_reference_cost(int in_h, int in_w, int num_classes) {
  RETNAS_CHECK(in_h >= 32 && in_w >= 32, "resnet18: input too small");
  CostReport rep;
  auto conv_out = [](int64_t n, int64_t k, int64_t s, int64_t p) {
    return (n + 2 * p - k) / s + 1;
  };

  int64_t h = conv_out(in_h, 7, 2, 3), w = conv_out(in_w, 7, 2, 3);
  rep.add("conv1", conv_bn_cost(3, 64, 7, h * w).params,
          conv_bn_cost(3, 64, 7, h * w).macs);
  h = conv_out(h, 3, 2, 1);
  w = conv_out(w, 3, 2, 1);
  rep.add("maxpool", 0, 0);

  int64_t cin = 64;
  const int64_t widths[4] = {64, 128, 256, 512};
  for (int stage = 0; stage < 4; ++stage) {
    const int64_t cout = widths[stage];
    int64_t p = 0, m = 0;
    for (int blk = 0; blk < 2; ++blk) {
      const int64_t s = (stage > 0 && blk == 0) ? 2 : 1;
      const int64_t oh = conv_out(h, 3, s, 1), ow = conv_out(w, 3, s, 1);
      const auto c1 = conv_bn_cost(cin, cout, 3, oh * ow);
      const auto c2 = conv_bn_cost(cout, cout, 3, oh * ow);
      p += c1.params + c2.params;
      m += c1.macs + c2.macs;
      if (s == 2 || cin != cout) {
        const auto ds = conv_bn_cost(cin, cout, 1, oh * ow);
        p += ds.params;
        m += ds.macs;
      }
      h = oh;
      w = ow;
      cin = cout;
    }
    rep.add(cat("layer", stage + 1), p, m);
  }
  rep.add("fc", 512 * static_cast<int64_t>(num_classes) + num_classes,
          512 * static_cast<int64_t>(num_classes));
  return rep;
}

}  // namespace retnas
