#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "retnas/archspace.hpp"
#include "retnas/rng.hpp"

using namespace retnas;

namespace {

// Independent brute-force derivation: raw softmax (no stabilization),
// argmax by linear left-to-right scans.
std::vector<BlockSpec> brute_force_cell(
    const std::vector<std::vector<double>>& rows, int B, OpSpace space) {
  const std::vector<OpKind> ops = ops_in_space(space);
  std::vector<BlockSpec> cell;
  for (int blk = 0; blk < B; ++blk) {
    const int n_in = 2 + blk;
    std::vector<double> strength(n_in, -1.0);
    std::vector<OpKind> pick(n_in, ops[0]);
    for (int h = 0; h < n_in; ++h) {
      const auto& row = rows[blk * (blk + 3) / 2 + h];
      double denom = 0.0;
      for (double z : row) denom += std::exp(z);
      for (size_t oi = 0; oi < ops.size(); ++oi) {
        if (ops[oi] == OpKind::kZero) continue;
        const double w = std::exp(row[oi]) / denom;
        if (w > strength[h]) {
          strength[h] = w;
          pick[h] = ops[oi];
        }
      }
    }
    int first = 0;
    for (int h = 1; h < n_in; ++h)
      if (strength[h] > strength[first]) first = h;
    int second = first == 0 ? 1 : 0;
    for (int h = 0; h < n_in; ++h) {
      if (h == first) continue;
      if (strength[h] > strength[second]) second = h;
    }
    cell.push_back({first, second, pick[first], pick[second]});
  }
  return cell;
}

Genotype random_genotype(Rng& rng, OpSpace space, int B) {
  const std::vector<OpKind> ops = ops_in_space(space);
  Genotype g;
  g.space = space;
  g.B = B;
  for (auto* cell : {&g.normal, &g.reduction})
    for (int i = 0; i < B; ++i) {
      BlockSpec b;
      b.i1 = static_cast<int>(rng.uniform_int(2 + i));
      b.i2 = static_cast<int>(rng.uniform_int(2 + i));
      b.o1 = ops[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(ops.size())))];
      b.o2 = ops[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(ops.size())))];
      cell->push_back(b);
    }
  return g;
}

}  // namespace

TEST_CASE("op vocabulary is pinned") {
  CHECK(static_cast<int>(OpKind::kPartAware) == 0);
  CHECK(static_cast<int>(OpKind::kMaxPool3x3) == 1);
  CHECK(static_cast<int>(OpKind::kAvgPool3x3) == 2);
  CHECK(static_cast<int>(OpKind::kSepConv3x3) == 3);
  CHECK(static_cast<int>(OpKind::kDilConv3x3) == 4);
  CHECK(static_cast<int>(OpKind::kZero) == 5);
  CHECK(static_cast<int>(OpKind::kIdentity) == 6);

  for (int i = 0; i < kNumOpKinds; ++i) {
    const OpKind k = static_cast<OpKind>(i);
    auto back = op_kind_from_string(to_string(k));
    REQUIRE(back.has_value());
    CHECK(*back == k);
  }
  CHECK(!op_kind_from_string("conv_7x7").has_value());

  CHECK(ops_in_space(OpSpace::kReid).size() == 7);
  auto classic = ops_in_space(OpSpace::kClassic);
  CHECK(classic.size() == 6);
  for (OpKind k : classic) CHECK(k != OpKind::kPartAware);
}

TEST_CASE("alpha edge indexing") {
  CHECK(AlphaParams::num_edges(1) == 2);
  CHECK(AlphaParams::num_edges(2) == 5);
  CHECK(AlphaParams::num_edges(4) == 14);
  // block-major layout: block i starts after all earlier blocks' rows
  int idx = 0;
  for (int blk = 0; blk < 4; ++blk)
    for (int h = 0; h < 2 + blk; ++h) CHECK(AlphaParams::edge_index(blk, h) == idx++);
  CHECK(idx == AlphaParams::num_edges(4));

  AlphaParams a = AlphaParams::zeros(OpSpace::kReid, 4);
  CHECK(a.normal.size() == 14);
  CHECK(a.normal[0].size() == 7);
  AlphaParams c = AlphaParams::zeros(OpSpace::kClassic, 3);
  CHECK(c.reduction.size() == 9);
  CHECK(c.reduction[0].size() == 6);

  a.normal[3][2] = std::nan("");
  CHECK_THROWS_AS(a.validate(), std::invalid_argument);
}

TEST_CASE("derive_genotype") {
  SECTION("one-hot limit: +10 on max_pool from inputs 0 and 1") {
    AlphaParams a = AlphaParams::zeros(OpSpace::kReid, 1);
    const int mp = static_cast<int>(OpKind::kMaxPool3x3);
    a.normal[AlphaParams::edge_index(0, 0)][mp] = 10.0;
    a.normal[AlphaParams::edge_index(0, 1)][mp] = 10.0;
    a.reduction = a.normal;
    Genotype g = derive_genotype(a);
    CHECK(g.normal[0] == BlockSpec{0, 1, OpKind::kMaxPool3x3, OpKind::kMaxPool3x3});
    CHECK(g.reduction[0] == BlockSpec{0, 1, OpKind::kMaxPool3x3, OpKind::kMaxPool3x3});
  }

  SECTION("all-zero alpha is fully determined by tie-breaks") {
    Genotype g = derive_genotype(AlphaParams::zeros(OpSpace::kReid, 4));
    for (const auto& cell : {g.normal, g.reduction})
      for (const BlockSpec& b : cell) {
        CHECK(b.i1 == 0);
        CHECK(b.i2 == 1);
        CHECK(b.o1 == OpKind::kPartAware);  // lowest non-zero ordinal
        CHECK(b.o2 == OpKind::kPartAware);
      }
    // classic space: lowest non-zero ordinal is max_pool
    Genotype gc = derive_genotype(AlphaParams::zeros(OpSpace::kClassic, 2));
    CHECK(gc.normal[0].o1 == OpKind::kMaxPool3x3);
  }

  SECTION("matches brute-force enumeration on random alpha") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
      const OpSpace space = trial % 2 ? OpSpace::kClassic : OpSpace::kReid;
      const int B = 2 + static_cast<int>(rng.uniform_int(3));
      AlphaParams a = AlphaParams::random(space, B, rng, 1.0);
      Genotype got = derive_genotype(a);
      CHECK(got.normal == brute_force_cell(a.normal, B, space));
      CHECK(got.reduction == brute_force_cell(a.reduction, B, space));
    }
  }

  SECTION("shift invariance per edge") {
    Rng rng(78);
    AlphaParams a = AlphaParams::random(OpSpace::kReid, 4, rng, 1.0);
    Genotype base = derive_genotype(a);
    AlphaParams shifted = a;
    for (size_t e = 0; e < shifted.normal.size(); ++e) {
      const double c = rng.uniform(-5.0, 5.0);
      for (double& z : shifted.normal[e]) z += c;
    }
    for (size_t e = 0; e < shifted.reduction.size(); ++e) {
      const double c = rng.uniform(-5.0, 5.0);
      for (double& z : shifted.reduction[e]) z += c;
    }
    CHECK(derive_genotype(shifted) == base);
  }

  SECTION("never selects zero even when zero dominates") {
    AlphaParams a = AlphaParams::zeros(OpSpace::kReid, 3);
    const int z = static_cast<int>(OpKind::kZero);
    for (auto* cell : {&a.normal, &a.reduction})
      for (auto& row : *cell) row[z] = 50.0;
    Genotype g = derive_genotype(a);
    for (const auto& cell : {g.normal, g.reduction})
      for (const BlockSpec& b : cell) {
        CHECK(b.o1 != OpKind::kZero);
        CHECK(b.o2 != OpKind::kZero);
      }
  }

  SECTION("non-finite alpha rejected") {
    AlphaParams a = AlphaParams::zeros(OpSpace::kReid, 2);
    a.reduction[1][0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(derive_genotype(a), std::invalid_argument);
  }
}

TEST_CASE("genotype json round-trip and strict schema") {
  SECTION("round-trip identity over 1000 random genotypes") {
    Rng rng(99);
    for (int i = 0; i < 1000; ++i) {
      const OpSpace space = i % 3 ? OpSpace::kReid : OpSpace::kClassic;
      const int B = 1 + static_cast<int>(rng.uniform_int(5));
      Genotype g = random_genotype(rng, space, B);
      REQUIRE(genotype_from_json(genotype_to_json(g)) == g);
    }
  }

  SECTION("schema violations name the offending path") {
    Genotype g = derive_genotype(AlphaParams::zeros(OpSpace::kReid, 4));
    const std::string good = genotype_to_json(g);

    auto expect_path = [](const std::string& doc, const std::string& path) {
      try {
        genotype_from_json(doc);
        FAIL("expected ParseError for " << path);
      } catch (const ParseError& e) {
        CHECK(e.path() == path);
      }
    };

    nlohmann::json j = nlohmann::json::parse(good);
    j.erase("reduction");
    expect_path(j.dump(), "$.reduction");

    j = nlohmann::json::parse(good);
    j["extra"] = 1;
    expect_path(j.dump(), "$.extra");

    j = nlohmann::json::parse(good);
    j["version"] = "2";
    expect_path(j.dump(), "$.version");

    j = nlohmann::json::parse(good);
    j["space"] = "imagenet";
    expect_path(j.dump(), "$.space");

    j = nlohmann::json::parse(good);
    j["normal"].erase(3);  // B=4 declared, 3 blocks present
    expect_path(j.dump(), "$.normal");

    j = nlohmann::json::parse(good);
    j["normal"][2]["i1"] = 9;
    expect_path(j.dump(), "$.normal[2].i1");

    j = nlohmann::json::parse(good);
    j["reduction"][0]["o1"] = "conv_11x11";
    expect_path(j.dump(), "$.reduction[0].o1");

    j = nlohmann::json::parse(good);
    j["B"] = "4";
    expect_path(j.dump(), "$.B");

    j = nlohmann::json::parse(good);
    j["space"] = "classic";  // keeps part_aware ops -> rejected
    expect_path(j.dump(), "$.normal[0].o1");

    expect_path("not json at all", "$");
  }

  SECTION("text rendering lists both cells") {
    Genotype g = derive_genotype(AlphaParams::zeros(OpSpace::kReid, 2));
    const std::string txt = genotype_to_text(g);
    CHECK(txt.find("normal cell (B=2):") != std::string::npos);
    CHECK(txt.find("reduction cell (B=2):") != std::string::npos);
    CHECK(txt.find("block 1 <- (0, part_aware) + (1, part_aware)") != std::string::npos);
  }
}

TEST_CASE("macro plan") {
  MacroConfig m;  // C=32, l=2222, 384x128
  MacroPlan plan = build_macro_plan(m);
  REQUIRE(plan.cells.size() == 8);
  // reduction cells at global indices 2, 4, 6; widths double per stage
  for (size_t i = 0; i < 8; ++i)
    CHECK(plan.cells[i].reduction == (i == 2 || i == 4 || i == 6));
  CHECK(plan.cells[0].width == 32);
  CHECK(plan.cells[2].width == 64);
  CHECK(plan.cells[4].width == 128);
  CHECK(plan.cells[6].width == 256);
  CHECK(plan.feat_c == 256);
  CHECK(plan.feat_h == 48);
  CHECK(plan.feat_w == 16);
  // the cell after a reduction sees mixed input resolutions
  CHECK(plan.cells[3].pre0_stride == 2);
  CHECK(plan.cells[3].pre1_stride == 1);
  CHECK(plan.cells[3].op_h == 192);

  MacroConfig bad = m;
  bad.in_h = 100;
  CHECK_THROWS_AS(build_macro_plan(bad), std::invalid_argument);
  bad = m;
  bad.dropout_f = 1.5;
  CHECK_THROWS_AS(build_macro_plan(bad), std::invalid_argument);
  bad = m;
  CHECK_THROWS_AS(build_macro_plan(bad, 5), std::invalid_argument);  // 384 % 5
}

TEST_CASE("cost accounting") {
  SECTION("bare conv formula vs naive loop counter") {
    // Cin=3, Cout=64, 3x3, output 32x32
    const OpCost c = conv_cost(3, 64, 3, 32 * 32);
    CHECK(c.params == 1728);
    CHECK(c.macs == 1769472);
    // naive enumeration of multiply-accumulates
    int64_t macs = 0, params = 0;
    for (int co = 0; co < 64; ++co)
      for (int ci = 0; ci < 3; ++ci)
        for (int kh = 0; kh < 3; ++kh)
          for (int kw = 0; kw < 3; ++kw) ++params;
    for (int oh = 0; oh < 32; ++oh)
      for (int ow = 0; ow < 32; ++ow)
        for (int co = 0; co < 64; ++co)
          for (int ci = 0; ci < 3; ++ci)
            for (int kh = 0; kh < 3; ++kh)
              for (int kw = 0; kw < 3; ++kw) ++macs;
    CHECK(c.params == params);
    CHECK(c.macs == macs);
  }

  SECTION("zero-cost op kinds") {
    for (OpKind k : {OpKind::kIdentity, OpKind::kZero, OpKind::kMaxPool3x3,
                     OpKind::kAvgPool3x3}) {
      const auto oc = detail::op_cost(k, 32, 1, 16, 8, {});
      CHECK(oc.params == 0);
      CHECK(oc.macs == 0);
    }
  }

  SECTION("total equals sum of breakdown rows; identical cells cost alike") {
    Rng rng(5);
    Genotype g = random_genotype(rng, OpSpace::kReid, 4);
    MacroConfig m;
    m.l = {3, 1, 1, 1};
    m.in_h = 64;
    m.in_w = 32;
    m.num_ids = 10;
    CostReport rep = count_params_flops(g, m);
    int64_t p = 0, mc = 0;
    for (const CostRow& r : rep.rows) {
      p += r.params;
      mc += r.macs;
    }
    CHECK(rep.params == p);
    CHECK(rep.macs == mc);
    // cells 1 and 2 share plan and genotype -> identical rows
    CHECK(rep.rows[2].params == rep.rows[3].params);
    CHECK(rep.rows[2].macs == rep.rows[3].macs);
  }

  SECTION("identity-only genotype counts just stem, projections, head") {
    Genotype g;
    g.B = 1;
    g.normal = {{0, 1, OpKind::kIdentity, OpKind::kIdentity}};
    g.reduction = g.normal;
    MacroConfig m;
    m.C = 8;
    m.l = {1, 1, 1, 1};
    m.in_h = 32;
    m.in_w = 16;
    m.B = 1;
    m.num_ids = 5;
    m.embed_dim = 16;
    CostReport rep = count_params_flops(g, m);
    // hand count: stem + per-cell (pre0 + pre1 + proj) + head
    int64_t expect_p = 3 * 8 * 9 + 2 * 8;
    const MacroPlan plan = build_macro_plan(m);
    for (const CellPlan& cp : plan.cells) {
      expect_p += cp.in0_c * cp.width + 2 * cp.width;
      expect_p += cp.in1_c * cp.width + 2 * cp.width;
      expect_p += cp.width * cp.width + 2 * cp.width;  // B=1 concat proj
    }
    expect_p += 64 * 16 + 16 + 16 * 5 + 5;
    CHECK(rep.params == expect_p);
  }

  SECTION("genotype/macro B mismatch rejected") {
    Genotype g = derive_genotype(AlphaParams::zeros(OpSpace::kReid, 2));
    MacroConfig m;  // B=4
    CHECK_THROWS_AS(count_params_flops(g, m), std::invalid_argument);
  }

  SECTION("resnet-18 anchor at 384x128 with 751 classes") {
    CostReport rep = resnet18_reference_cost(384, 128, 751);
    // frozen hand-derived walk of the reference topology
    CHECK(rep.params == 11561775);
    CHECK(rep.macs == 1776934400);
    CHECK(std::abs(rep.params / 1e6 - 11.6) / 11.6 < 0.10);
    CHECK(std::abs(rep.macs / 1e9 - 1.7) / 1.7 < 0.10);
  }
}
