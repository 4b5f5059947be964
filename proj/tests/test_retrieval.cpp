#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "retnas/retrieval.hpp"
#include "testutil.hpp"

using namespace retnas;
using testutil::randt;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() /
               cat("retnas_ret_", tag, "_", getpid(), "_", counter++);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Column of 1-D "features" whose pairwise distances equal |a - b|.
Tensor col(const std::vector<double>& xs) {
  Tensor t({static_cast<int64_t>(xs.size()), 1});
  t.v = xs;
  return t;
}

// Reference scorer, written independently of retrieval.hpp: ranks by
// (distance, gallery index) and accumulates textbook AP / CMC.
struct RefScores {
  std::vector<double> ap;  // -1 for invalid
  std::vector<double> cmc;
  double map = 0.0;
  int valid = 0;
};

RefScores ref_evaluate(const Tensor& qf, const std::vector<int>& qid,
                       const std::vector<int>& qcam, const Tensor& gf,
                       const std::vector<int>& gid,
                       const std::vector<int>& gcam, bool cam_filter) {
  const int64_t Q = qf.dim(0), G = gf.dim(0), D = qf.dim(1);
  RefScores r;
  r.ap.assign(static_cast<size_t>(Q), -1.0);
  r.cmc.assign(static_cast<size_t>(G), 0.0);
  for (int64_t q = 0; q < Q; ++q) {
    std::vector<std::pair<double, int64_t>> order;
    int64_t relevant = 0;
    for (int64_t g = 0; g < G; ++g) {
      if (cam_filter && gid[static_cast<size_t>(g)] == qid[static_cast<size_t>(q)] &&
          gcam[static_cast<size_t>(g)] == qcam[static_cast<size_t>(q)])
        continue;
      double sq = 0.0;
      for (int64_t k = 0; k < D; ++k) {
        const double d = qf.at2(q, k) - gf.at2(g, k);
        sq += d * d;
      }
      order.emplace_back(std::sqrt(sq), g);
      relevant += gid[static_cast<size_t>(g)] == qid[static_cast<size_t>(q)] ? 1 : 0;
    }
    if (relevant == 0) continue;
    std::sort(order.begin(), order.end());
    ++r.valid;
    double ap = 0.0;
    int hits = 0;
    bool seen = false;
    for (size_t rank = 0; rank < order.size(); ++rank) {
      if (gid[static_cast<size_t>(order[rank].second)] !=
          qid[static_cast<size_t>(q)])
        continue;
      ++hits;
      ap += hits / static_cast<double>(rank + 1);
      if (!seen) {
        for (size_t k = rank; k < r.cmc.size(); ++k) r.cmc[k] += 1.0;
        seen = true;
      }
    }
    r.ap[static_cast<size_t>(q)] = ap / static_cast<double>(relevant);
    r.map += r.ap[static_cast<size_t>(q)];
  }
  r.map /= static_cast<double>(r.valid);
  for (double& c : r.cmc) c /= static_cast<double>(r.valid);
  return r;
}

}  // namespace

TEST_CASE("evaluate: perfect single match") {
  Tensor q = col({0.0});
  Tensor g = col({0.1, 0.5, 0.9});
  EvalResult res = evaluate(q, {7}, {}, g, {7, 1, 2}, {}, false);
  CHECK(res.valid_queries == 1);
  CHECK(res.map == 1.0);
  CHECK(res.cmc_at(1) == 1.0);
  CHECK(res.ap[0] == 1.0);
}

TEST_CASE("evaluate: hits at ranks 1 and 3 of 5") {
  Tensor q = col({0.0});
  Tensor g = col({1.0, 2.0, 3.0, 4.0, 5.0});
  EvalResult res = evaluate(q, {0}, {}, g, {0, 1, 0, 1, 1}, {}, false);
  CHECK(res.map == Catch::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
  CHECK(res.cmc_at(1) == 1.0);
  // Rank past the gallery size clamps to the final entry.
  CHECK(res.cmc_at(50) == 1.0);
}

TEST_CASE("evaluate: camera filter removes same-id same-cam entries") {
  Tensor q = col({0.0});
  Tensor g = col({0.1, 0.2, 0.3});
  const std::vector<int> gid{0, 1, 0}, gcam{1, 5, 2};

  EvalResult off = evaluate(q, {0}, {1}, g, gid, gcam, false);
  CHECK(off.map == Catch::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
  CHECK(off.cmc_at(1) == 1.0);

  EvalResult on = evaluate(q, {0}, {1}, g, gid, gcam, true);
  CHECK(on.map == Catch::Approx(0.5).epsilon(1e-12));
  CHECK(on.cmc_at(1) == 0.0);
  CHECK(on.cmc_at(2) == 1.0);
}

TEST_CASE("evaluate: all queries invalid is an error") {
  Tensor q = col({0.0});
  Tensor g = col({0.1});
  CHECK_THROWS_AS(evaluate(q, {0}, {1}, g, {0}, {1}, true),
                  std::invalid_argument);
  CHECK_NOTHROW(evaluate(q, {0}, {1}, g, {0}, {1}, false));
  // Missing camera lists only matter when the filter is on.
  CHECK_THROWS_AS(evaluate(q, {0}, {}, g, {0}, {}, true),
                  std::invalid_argument);
}

TEST_CASE("evaluate: exact distance ties break toward lower gallery index") {
  Tensor q = col({0.0});
  Tensor g = col({1.0, -1.0});
  EvalResult miss_first = evaluate(q, {0}, {}, g, {1, 0}, {}, false);
  CHECK(miss_first.cmc_at(1) == 0.0);
  CHECK(miss_first.map == Catch::Approx(0.5).epsilon(1e-12));
  EvalResult hit_first = evaluate(q, {0}, {}, g, {0, 1}, {}, false);
  CHECK(hit_first.cmc_at(1) == 1.0);
  CHECK(hit_first.map == 1.0);
}

TEST_CASE("evaluate: matches reference scorer on random instances") {
  Rng rng(404);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t Q = 1 + static_cast<int64_t>(rng.uniform_int(20));
    const int64_t G = 2 + static_cast<int64_t>(rng.uniform_int(49));
    const int64_t D = 1 + static_cast<int64_t>(rng.uniform_int(8));
    const bool cam_filter = trial % 2 == 0;

    Tensor qf = randt({Q, D}, rng), gf = randt({G, D}, rng);
    std::vector<int> qid, qcam, gid, gcam;
    for (int64_t i = 0; i < Q; ++i) {
      qid.push_back(rng.uniform_int(5));
      qcam.push_back(rng.uniform_int(3));
    }
    for (int64_t j = 0; j < G; ++j) {
      gid.push_back(rng.uniform_int(5));
      gcam.push_back(rng.uniform_int(3));
    }
    // Guarantee at least one valid query.
    gid[0] = qid[0];
    gcam[0] = (qcam[0] + 1) % 3;

    EvalResult res =
        evaluate(qf, qid, qcam, gf, gid, gcam, cam_filter);
    RefScores ref = ref_evaluate(qf, qid, qcam, gf, gid, gcam, cam_filter);

    REQUIRE(res.valid_queries == ref.valid);
    CHECK(std::abs(res.map - ref.map) < 1e-10);
    REQUIRE(res.cmc.size() == ref.cmc.size());
    for (size_t k = 0; k < ref.cmc.size(); ++k)
      CHECK(std::abs(res.cmc[k] - ref.cmc[k]) < 1e-10);
    for (int64_t q = 0; q < Q; ++q)
      CHECK(std::abs(res.ap[static_cast<size_t>(q)] -
                     ref.ap[static_cast<size_t>(q)]) < 1e-10);
  }
}

TEST_CASE("evaluate: invariances and sanity bounds") {
  Rng rng(405);
  const int64_t Q = 6, G = 20, D = 4;
  Tensor qf = randt({Q, D}, rng), gf = randt({G, D}, rng);
  std::vector<int> qid, qcam, gid, gcam;
  for (int64_t i = 0; i < Q; ++i) {
    qid.push_back(rng.uniform_int(3));
    qcam.push_back(rng.uniform_int(2));
  }
  for (int64_t j = 0; j < G; ++j) {
    gid.push_back(rng.uniform_int(3));
    gcam.push_back(rng.uniform_int(2));
  }
  EvalResult base = evaluate(qf, qid, qcam, gf, gid, gcam, true);

  SECTION("scores live in [0,1]; CMC is monotone and ends at 1") {
    CHECK(base.map >= 0.0);
    CHECK(base.map <= 1.0);
    for (size_t k = 1; k < base.cmc.size(); ++k)
      CHECK(base.cmc[k] >= base.cmc[k - 1]);
    for (double c : base.cmc) {
      CHECK(c >= 0.0);
      CHECK(c <= 1.0);
    }
    CHECK(base.cmc.back() == 1.0);
  }

  SECTION("gallery permutation leaves scores unchanged") {
    std::vector<int64_t> perm(static_cast<size_t>(G));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Tensor gf2({G, D});
    std::vector<int> gid2(static_cast<size_t>(G)), gcam2(static_cast<size_t>(G));
    for (int64_t j = 0; j < G; ++j) {
      for (int64_t k = 0; k < D; ++k)
        gf2.at2(j, k) = gf.at2(perm[static_cast<size_t>(j)], k);
      gid2[static_cast<size_t>(j)] = gid[static_cast<size_t>(perm[static_cast<size_t>(j)])];
      gcam2[static_cast<size_t>(j)] = gcam[static_cast<size_t>(perm[static_cast<size_t>(j)])];
    }
    EvalResult perm_res = evaluate(qf, qid, qcam, gf2, gid2, gcam2, true);
    CHECK(std::abs(perm_res.map - base.map) < 1e-12);
    for (size_t k = 0; k < base.cmc.size(); ++k)
      CHECK(std::abs(perm_res.cmc[k] - base.cmc[k]) < 1e-12);
  }

  SECTION("uniform feature scaling leaves scores unchanged") {
    Tensor qf2 = qf, gf2 = gf;
    for (double& x : qf2.v) x *= 3.7;
    for (double& x : gf2.v) x *= 3.7;
    EvalResult scaled = evaluate(qf2, qid, qcam, gf2, gid, gcam, true);
    CHECK(std::abs(scaled.map - base.map) < 1e-12);
    for (size_t k = 0; k < base.cmc.size(); ++k)
      CHECK(std::abs(scaled.cmc[k] - base.cmc[k]) < 1e-12);
  }

  SECTION("appending distractors never raises mAP") {
    // A far distractor lands at the bottom of every ranking: no change.
    Tensor far({G + 1, D});
    std::copy(gf.v.begin(), gf.v.end(), far.v.begin());
    for (int64_t k = 0; k < D; ++k) far.at2(G, k) = 1e6;
    std::vector<int> gid_far = gid, gcam_far = gcam;
    gid_far.push_back(999);
    gcam_far.push_back(0);
    EvalResult far_res = evaluate(qf, qid, qcam, far, gid_far, gcam_far, true);
    CHECK(far_res.map == Catch::Approx(base.map).epsilon(1e-12));

    // A distractor at distance ~0 displaces every hit by one rank: mAP drops.
    Tensor near({G + 1, D});
    std::copy(gf.v.begin(), gf.v.end(), near.v.begin());
    for (int64_t k = 0; k < D; ++k) near.at2(G, k) = 0.0;
    EvalResult near_res =
        evaluate(qf, qid, qcam, near, gid_far, gcam_far, true);
    CHECK(near_res.map < base.map);
  }
}

TEST_CASE("feature dump: float32 round trip and corrupt input") {
  const fs::path dir = temp_dir("dump");
  const std::string path = (dir / "f.bin").string();
  Rng rng(406);
  Tensor f = randt({5, 7}, rng, 123.0);
  write_features(path, f);

  Tensor back = read_features(path);
  REQUIRE(back.shape == f.shape);
  for (size_t i = 0; i < f.v.size(); ++i)
    CHECK(back.v[i] == static_cast<double>(static_cast<float>(f.v[i])));

  std::ifstream is(path, std::ios::binary);
  std::vector<char> bytes{std::istreambuf_iterator<char>(is),
                          std::istreambuf_iterator<char>()};
  is.close();
  bytes[1] = 'x';
  std::ofstream(path, std::ios::binary)
      .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_AS(read_features(path), ParseError);

  bytes[1] = 'N';
  std::ofstream(path, std::ios::binary)
      .write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 16));
  CHECK_THROWS_AS(read_features(path), ParseError);
  CHECK_THROWS_AS(read_features((dir / "missing.bin").string()), ParseError);
  fs::remove_all(dir);
}

TEST_CASE("eval report: parseable JSON with the advertised fields") {
  const fs::path dir = temp_dir("report");
  const std::string path = (dir / "eval_report.json").string();
  Tensor q = col({0.0});
  Tensor g = col({1.0, 2.0, 3.0, 4.0, 5.0});
  EvalResult res = evaluate(q, {0}, {}, g, {0, 1, 0, 1, 1}, {}, false);
  write_eval_report(path, res, 1, 5);

  std::ifstream is(path);
  nlohmann::json j = nlohmann::json::parse(is);
  CHECK(j["cmc"]["rank1"].get<double>() == 1.0);
  CHECK(j["cmc"]["rank5"].get<double>() == 1.0);
  CHECK(j["cmc"]["rank10"].get<double>() == 1.0);
  CHECK(j["map"].get<double>() ==
        Catch::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
  CHECK(j["valid_queries"].get<int>() == 1);
  CHECK(j["num_query"].get<int>() == 1);
  CHECK(j["num_gallery"].get<int>() == 5);
  fs::remove_all(dir);
}

TEST_CASE("extract_features: deterministic and batch-size invariant") {
  MacroConfig cfg;
  cfg.C = 4;
  cfg.l = {1, 1, 1, 1};
  cfg.B = 1;
  cfg.in_h = 32;
  cfg.in_w = 16;
  cfg.num_ids = 3;
  cfg.embed_dim = 6;

  Genotype gt;
  gt.space = OpSpace::kReid;
  gt.B = 1;
  gt.normal = {{0, 1, OpKind::kSepConv3x3, OpKind::kIdentity}};
  gt.reduction = {{0, 1, OpKind::kMaxPool3x3, OpKind::kIdentity}};

  FinalModel net(cfg, gt, /*seed=*/17);

  Rng rng(407);
  std::vector<Tensor> imgs;
  for (int i = 0; i < 5; ++i) imgs.push_back(randt({3, 32, 16}, rng, 0.5));
  imgs.push_back(Tensor::zeros({3, 32, 16}));  // all-black frame stays finite

  Tensor a = extract_features(net, imgs, 32);
  Tensor b = extract_features(net, imgs, 32);
  REQUIRE(a.shape == std::vector<int64_t>{6, 6});
  CHECK(max_abs_diff(a, b) == 0.0);
  for (double x : a.v) CHECK(std::isfinite(x));

  Tensor c = extract_features(net, imgs, 1);
  Tensor d = extract_features(net, imgs, 4);
  CHECK(max_abs_diff(a, c) < 1e-6);
  CHECK(max_abs_diff(a, d) < 1e-6);

  CHECK_THROWS_AS(extract_features(net, {}, 32), std::invalid_argument);
}
