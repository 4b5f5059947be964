#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "retnas/png_io.hpp"
#include "retnas/rng.hpp"
#include "retnas/tensor.hpp"

namespace retnas {

// ---------------------------------------------------------------------------
// Index of an image-folder dataset: root/<identity>/<image>.png
// ---------------------------------------------------------------------------

struct DatasetItem {
  std::string path;
  int label = 0;    // contiguous [0, num_ids)
  int camera = -1;  // parsed from a `_c<k>` filename suffix; -1 if absent
};

struct DatasetIndex {
  std::vector<DatasetItem> items;
  std::vector<std::string> id_names;  // label -> directory name

  int num_ids() const { return static_cast<int>(id_names.size()); }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(items.size());
    for (const DatasetItem& it : items) out.push_back(it.label);
    return out;
  }

  bool has_cameras() const {
    for (const DatasetItem& it : items)
      if (it.camera >= 0) return true;
    return false;
  }
};

// Camera id from a filename stem ending in `_c<k>` (e.g. "0001_c3" -> 3).
inline int parse_camera(const std::string& stem) {
  const size_t pos = stem.rfind("_c");
  if (pos == std::string::npos || pos + 2 >= stem.size()) return -1;
  int k = 0;
  for (size_t i = pos + 2; i < stem.size(); ++i) {
    if (stem[i] < '0' || stem[i] > '9') return -1;
    k = k * 10 + (stem[i] - '0');
  }
  return k;
}

// Walks root/<identity>/<image>, decoding each image to validate it.
// Undecodable files are skipped with a warning; an index with zero usable
// images is an error.
inline DatasetIndex load_folder(const std::string& root,
                                std::ostream* warn = &std::cerr) {
  namespace fs = std::filesystem;
  RETNAS_CHECK(fs::is_directory(root), "load_folder: not a directory: ", root);

  std::vector<std::string> id_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) id_dirs.push_back(e.path().filename().string());
  std::sort(id_dirs.begin(), id_dirs.end());
  RETNAS_CHECK(!id_dirs.empty(), "load_folder: no identity directories in ",
               root);

  DatasetIndex index;
  int skipped = 0;
  for (const std::string& id : id_dirs) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(fs::path(root) / id))
      if (e.is_regular_file()) files.push_back(e.path().string());
    std::sort(files.begin(), files.end());

    bool any = false;
    for (const std::string& file : files) {
      try {
        (void)read_png_rgb8(file);
      } catch (const ParseError& err) {
        if (warn != nullptr)
          *warn << "warning: skipping " << file << ": " << err.what() << "\n";
        ++skipped;
        continue;
      }
      if (!any) {
        index.id_names.push_back(id);
        any = true;
      }
      DatasetItem item;
      item.path = file;
      item.label = static_cast<int>(index.id_names.size()) - 1;
      item.camera = parse_camera(fs::path(file).stem().string());
      index.items.push_back(item);
    }
  }
  RETNAS_CHECK(!index.items.empty(), "load_folder: no decodable images under ",
               root, " (", skipped, " skipped)");
  return index;
}

// ---------------------------------------------------------------------------
// Synthetic identities: a color/stripe signature per identity plus noise
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  int num_ids = 8;
  int imgs_per_id = 16;
  int h = 64, w = 32;
  double noise = 0.05;
  uint64_t seed = 0;
};

namespace detail {

inline uint8_t to_byte(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return static_cast<uint8_t>(v * 255.0 + 0.5);
}

}  // namespace detail

// Base colors walk a 3x3x3 grid so identities are separable by construction;
// a per-identity stripe pattern adds texture. Deterministic by seed.
inline void generate_synthetic(const std::string& root, const SyntheticSpec& s) {
  RETNAS_CHECK(s.num_ids >= 2, "gen-data: num_ids must be >= 2, got ", s.num_ids);
  RETNAS_CHECK(s.imgs_per_id >= 2, "gen-data: imgs_per_id must be >= 2, got ",
               s.imgs_per_id);
  RETNAS_CHECK(s.h >= 4 && s.w >= 4, "gen-data: image size too small");
  RETNAS_CHECK(s.noise >= 0.0 && s.noise <= 1.0, "gen-data: noise outside [0,1]");

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw std::runtime_error(cat("gen-data: cannot create ", root, ": ",
                                       ec.message()));

  Rng rng(s.seed);
  const double levels[3] = {0.2, 0.5, 0.8};
  for (int id = 0; id < s.num_ids; ++id) {
    double base[3];
    for (int c = 0; c < 3; ++c)
      base[c] = levels[(id / (c == 0 ? 1 : c == 1 ? 3 : 9)) % 3] +
                0.03 * rng.uniform(-1.0, 1.0);
    const int period = 3 + id % 5;
    const int phase = static_cast<int>(rng.uniform_int(period));

    char name[16];
    std::snprintf(name, sizeof name, "%04d", id);
    const fs::path dir = fs::path(root) / name;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error(cat("gen-data: cannot create ",
                                         dir.string(), ": ", ec.message()));

    for (int n = 0; n < s.imgs_per_id; ++n) {
      Image img;
      img.w = s.w;
      img.h = s.h;
      img.rgb.resize(static_cast<size_t>(s.w) * s.h * 3);
      for (int y = 0; y < s.h; ++y) {
        const bool stripe = ((y + phase) / period) % 2 == 1;
        for (int x = 0; x < s.w; ++x)
          for (int c = 0; c < 3; ++c) {
            double v = stripe ? 1.0 - base[c] : base[c];
            v += s.noise * rng.normal();
            img.at(y, x, c) = detail::to_byte(v);
          }
      }
      write_png_rgb8((dir / cat(n, ".png")).string(), img);
    }
  }
}

// ---------------------------------------------------------------------------
// Image -> tensor and training-time augmentation
// ---------------------------------------------------------------------------

// [3, H, W] with values in [0, 1].
inline Tensor to_tensor(const Image& img) {
  Tensor t({3, img.h, img.w});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < img.h; ++y)
      for (int64_t x = 0; x < img.w; ++x)
        t.at3(c, y, x) =
            static_cast<double>(img.at(static_cast<int>(y), static_cast<int>(x),
                                       static_cast<int>(c))) /
            255.0;
  return t;
}

// Materializes every image of the index as a [3, H, W] tensor (desk-scale
// datasets fit in memory). All images must share one resolution.
inline std::vector<Tensor> load_images(const DatasetIndex& index) {
  std::vector<Tensor> out;
  out.reserve(index.items.size());
  for (const DatasetItem& it : index.items) {
    out.push_back(to_tensor(read_png_rgb8(it.path)));
    RETNAS_CHECK(out.back().same_shape(out.front()),
                 "load_images: mixed resolutions (", it.path, ")");
  }
  return out;
}

inline Tensor hflip(const Tensor& x) {
  Tensor out = x;
  const int64_t W = x.dim(2);
  for (int64_t c = 0; c < x.dim(0); ++c)
    for (int64_t y = 0; y < x.dim(1); ++y)
      for (int64_t xx = 0; xx < W; ++xx)
        out.at3(c, y, xx) = x.at3(c, y, W - 1 - xx);
  return out;
}

// Zero-pad by `pad` on every side, then crop back to the original size at a
// random offset.
inline Tensor pad_random_crop(const Tensor& x, int pad, Rng& rng) {
  const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int64_t oy = rng.uniform_int(2 * pad + 1);
  const int64_t ox = rng.uniform_int(2 * pad + 1);
  Tensor out = Tensor::zeros({C, H, W});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < H; ++y) {
      const int64_t sy = y + oy - pad;
      if (sy < 0 || sy >= H) continue;
      for (int64_t xx = 0; xx < W; ++xx) {
        const int64_t sx = xx + ox - pad;
        if (sx >= 0 && sx < W) out.at3(c, y, xx) = x.at3(c, sy, sx);
      }
    }
  return out;
}

// Random horizontal flip + pad-10 random crop.
inline Tensor augment(const Tensor& x, Rng& rng) {
  Tensor t = rng.bernoulli(0.5) ? hflip(x) : x;
  return pad_random_crop(t, 10, rng);
}

// Stacks [3,H,W] tensors into a batch [N,3,H,W].
inline Tensor stack_images(const std::vector<Tensor>& imgs,
                           const std::vector<int64_t>& indices) {
  RETNAS_CHECK(!indices.empty(), "stack_images: empty selection");
  const Tensor& first = imgs[static_cast<size_t>(indices[0])];
  Tensor out({static_cast<int64_t>(indices.size()), first.dim(0), first.dim(1),
              first.dim(2)});
  const int64_t per = first.numel();
  for (size_t n = 0; n < indices.size(); ++n) {
    const Tensor& src = imgs[static_cast<size_t>(indices[n])];
    RETNAS_CHECK(src.same_shape(first), "stack_images: mixed shapes");
    std::copy(src.v.begin(), src.v.end(),
              out.v.begin() + static_cast<int64_t>(n) * per);
  }
  return out;
}

}  // namespace retnas
