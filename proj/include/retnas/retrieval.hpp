#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "retnas/common.hpp"
#include "retnas/dataset.hpp"
#include "retnas/supernet.hpp"
#include "retnas/tensor.hpp"

namespace retnas {

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

// Embedding (g) features in evaluation mode, gathered over mini-batches.
// Deterministic: no dropout, no rng.
template <typename Model>
Tensor extract_features(const Model& net, const std::vector<Tensor>& images,
                        int batch_size = 32) {
  RETNAS_CHECK(!images.empty(), "extract_features: no images");
  RETNAS_CHECK(batch_size >= 1, "extract_features: batch_size must be >= 1");
  const int64_t N = static_cast<int64_t>(images.size());

  Tensor feats;
  int64_t done = 0;
  while (done < N) {
    const int64_t take = std::min<int64_t>(batch_size, N - done);
    std::vector<int64_t> sel(static_cast<size_t>(take));
    std::iota(sel.begin(), sel.end(), done);
    Tensor batch = stack_images(images, sel);
    HeadOut out = net.forward(Var::leaf(std::move(batch)), /*training=*/false);
    const Tensor& g = out.g.val();
    if (done == 0) feats = Tensor::zeros({N, g.dim(1)});
    for (int64_t n = 0; n < take; ++n)
      for (int64_t k = 0; k < g.dim(1); ++k)
        feats.at2(done + n, k) = g.at2(n, k);
    done += take;
  }
  return feats;
}

// ---------------------------------------------------------------------------
// Ranking metrics
// ---------------------------------------------------------------------------

inline Tensor pairwise_distances(const Tensor& q, const Tensor& g) {
  RETNAS_CHECK(q.rank() == 2 && g.rank() == 2 && q.dim(1) == g.dim(1),
               "pairwise_distances: shape mismatch ", q.shape_str(), " vs ",
               g.shape_str());
  Tensor d({q.dim(0), g.dim(0)});
  for (int64_t i = 0; i < q.dim(0); ++i)
    for (int64_t j = 0; j < g.dim(0); ++j) {
      double sq = 0.0;
      for (int64_t k = 0; k < q.dim(1); ++k) {
        const double x = q.at2(i, k) - g.at2(j, k);
        sq += x * x;
      }
      d.at2(i, j) = std::sqrt(sq);
    }
  return d;
}

struct EvalResult {
  Tensor dist;              // [Q, G]
  std::vector<double> cmc;  // cmc[k-1] = fraction of valid queries hit in top-k
  double map = 0.0;
  std::vector<double> ap;   // per query; -1 for invalid queries
  int valid_queries = 0;

  double cmc_at(int k) const {
    RETNAS_CHECK(k >= 1, "cmc_at: rank must be >= 1");
    const size_t i = std::min(static_cast<size_t>(k), cmc.size());
    return cmc[i - 1];
  }
};

// Standard protocol: for each query, gallery entries sharing both identity
// and camera with the query are excluded (when camera filtering is on); a
// query is valid if a matching identity remains. AP is precision at each
// correct hit averaged over the matches; CMC(k) counts first hits in top-k.
// Distance ties break toward the lower gallery index.
inline EvalResult evaluate(const Tensor& query_feats,
                           const std::vector<int>& query_ids,
                           const std::vector<int>& query_cams,
                           const Tensor& gallery_feats,
                           const std::vector<int>& gallery_ids,
                           const std::vector<int>& gallery_cams,
                           bool camera_filter = true) {
  const int64_t Q = query_feats.dim(0), G = gallery_feats.dim(0);
  RETNAS_CHECK(static_cast<int64_t>(query_ids.size()) == Q,
               "evaluate: query id count mismatch");
  RETNAS_CHECK(static_cast<int64_t>(gallery_ids.size()) == G,
               "evaluate: gallery id count mismatch");
  RETNAS_CHECK(!camera_filter ||
                   (static_cast<int64_t>(query_cams.size()) == Q &&
                    static_cast<int64_t>(gallery_cams.size()) == G),
               "evaluate: camera ids required when camera filtering is on");

  EvalResult res;
  res.dist = pairwise_distances(query_feats, gallery_feats);
  res.ap.assign(static_cast<size_t>(Q), -1.0);
  res.cmc.assign(static_cast<size_t>(G), 0.0);

  double ap_sum = 0.0;
  for (int64_t qi = 0; qi < Q; ++qi) {
    std::vector<int64_t> cand;
    cand.reserve(static_cast<size_t>(G));
    for (int64_t gj = 0; gj < G; ++gj) {
      if (camera_filter && gallery_ids[static_cast<size_t>(gj)] == query_ids[static_cast<size_t>(qi)] &&
          gallery_cams[static_cast<size_t>(gj)] == query_cams[static_cast<size_t>(qi)])
        continue;
      cand.push_back(gj);
    }
    int64_t relevant = 0;
    for (int64_t gj : cand)
      if (gallery_ids[static_cast<size_t>(gj)] == query_ids[static_cast<size_t>(qi)])
        ++relevant;
    if (relevant == 0) continue;  // invalid query

    std::sort(cand.begin(), cand.end(), [&](int64_t a, int64_t b) {
      const double da = res.dist.at2(qi, a), db = res.dist.at2(qi, b);
      if (da != db) return da < db;
      return a < b;
    });

    ++res.valid_queries;
    double ap = 0.0;
    int64_t hits = 0;
    int64_t first_hit = -1;
    for (size_t rank = 0; rank < cand.size(); ++rank) {
      if (gallery_ids[static_cast<size_t>(cand[rank])] !=
          query_ids[static_cast<size_t>(qi)])
        continue;
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
      if (first_hit < 0) first_hit = static_cast<int64_t>(rank);
    }
    ap /= static_cast<double>(relevant);
    res.ap[static_cast<size_t>(qi)] = ap;
    ap_sum += ap;
    for (size_t k = static_cast<size_t>(first_hit); k < res.cmc.size(); ++k)
      res.cmc[k] += 1.0;
  }

  RETNAS_CHECK(res.valid_queries > 0,
               "evaluate: no valid queries (every query lacks a cross-camera "
               "gallery match)");
  for (double& c : res.cmc) c /= static_cast<double>(res.valid_queries);
  res.map = ap_sum / static_cast<double>(res.valid_queries);
  return res;
}

// ---------------------------------------------------------------------------
// Feature dump: "RNFT" + version + dtype tag + dims + row-major float32
// ---------------------------------------------------------------------------

inline void write_features(const std::string& path, const Tensor& feats) {
  RETNAS_CHECK(feats.rank() == 2, "write_features: rank-2 matrix expected");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(cat("cannot write features: ", path));
  os.write("RNFT", 4);
  const uint32_t version = 1, dtype = 1;  // 1 = float32
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&dtype), 4);
  const uint64_t rows = static_cast<uint64_t>(feats.dim(0));
  const uint64_t cols = static_cast<uint64_t>(feats.dim(1));
  os.write(reinterpret_cast<const char*>(&rows), 8);
  os.write(reinterpret_cast<const char*>(&cols), 8);
  for (double x : feats.v) {
    const float f = static_cast<float>(x);
    os.write(reinterpret_cast<const char*>(&f), 4);
  }
  os.flush();
  if (!os) throw std::runtime_error(cat("write failed: ", path));
}

inline Tensor read_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError(path, "cannot open feature dump");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "RNFT", 4) != 0)
    throw ParseError(path, "bad feature-dump magic");
  uint32_t version = 0, dtype = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&dtype), 4);
  if (!is || version != 1) throw ParseError(path, "unsupported feature-dump version");
  if (dtype != 1) throw ParseError(path, "unsupported feature dtype");
  uint64_t rows = 0, cols = 0;
  is.read(reinterpret_cast<char*>(&rows), 8);
  is.read(reinterpret_cast<char*>(&cols), 8);
  if (!is || rows == 0 || cols == 0 || rows > (1ull << 32) || cols > (1ull << 32))
    throw ParseError(path, "bad feature-dump dims");
  Tensor t({static_cast<int64_t>(rows), static_cast<int64_t>(cols)});
  for (double& x : t.v) {
    float f = 0.0f;
    if (!is.read(reinterpret_cast<char*>(&f), 4))
      throw ParseError(path, "truncated feature dump");
    x = static_cast<double>(f);
  }
  return t;
}

// eval_report.json: cmc at ranks 1/5/10 plus mAP.
inline void write_eval_report(const std::string& path, const EvalResult& res,
                              int64_t num_query, int64_t num_gallery) {
  nlohmann::ordered_json j;
  j["cmc"] = {{"rank1", res.cmc_at(1)},
              {"rank5", res.cmc_at(5)},
              {"rank10", res.cmc_at(10)}};
  j["map"] = res.map;
  j["valid_queries"] = res.valid_queries;
  j["num_query"] = num_query;
  j["num_gallery"] = num_gallery;
  std::ofstream os(path);
  if (!os) throw std::runtime_error(cat("cannot write report: ", path));
  os << j.dump(2) << "\n";
}

}  // namespace retnas
