#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "retnas/common.hpp"
#include "retnas/nn.hpp"
#include "retnas/tensor.hpp"

namespace retnas {

// Versioned binary container holding string metadata plus named tensors.
// Doubles are stored as raw little-endian bytes, so save->load round-trips
// bit-exactly. Maps keep entries sorted, making writes deterministic.

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline void put_str(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw ParseError(path, "truncated checkpoint");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

inline uint64_t get_u64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw ParseError(path, "truncated checkpoint");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

inline std::string get_str(std::istream& is, const std::string& path) {
  const uint64_t n = get_u64(is, path);
  if (n > (1ull << 32)) throw ParseError(path, "absurd string length");
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n)))
    throw ParseError(path, "truncated checkpoint");
  return s;
}

}  // namespace detail

struct Checkpoint {
  static constexpr char kMagic[5] = "RNCK";
  static constexpr uint32_t kVersion = 1;

  std::map<std::string, std::string> meta;
  std::map<std::string, Tensor> tensors;

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error(cat("cannot write checkpoint: ", path));
    os.write(kMagic, 4);
    detail::put_u32(os, kVersion);

    detail::put_u64(os, meta.size());
    for (const auto& [k, v] : meta) {
      detail::put_str(os, k);
      detail::put_str(os, v);
    }

    detail::put_u64(os, tensors.size());
    for (const auto& [name, t] : tensors) {
      detail::put_str(os, name);
      detail::put_u32(os, static_cast<uint32_t>(t.rank()));
      for (int64_t d : t.shape) detail::put_u64(os, static_cast<uint64_t>(d));
      for (double x : t.v) {
        uint64_t bits;
        std::memcpy(&bits, &x, 8);
        detail::put_u64(os, bits);
      }
    }
    os.flush();
    if (!os) throw std::runtime_error(cat("write failed: ", path));
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError(path, "cannot open checkpoint");
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
      throw ParseError(path, "bad checkpoint magic");
    const uint32_t version = detail::get_u32(is, path);
    if (version != kVersion)
      throw ParseError(path, cat("unsupported checkpoint version ", version));

    Checkpoint ck;
    const uint64_t n_meta = detail::get_u64(is, path);
    for (uint64_t i = 0; i < n_meta; ++i) {
      std::string k = detail::get_str(is, path);
      ck.meta[k] = detail::get_str(is, path);
    }

    const uint64_t n_tensors = detail::get_u64(is, path);
    for (uint64_t i = 0; i < n_tensors; ++i) {
      std::string name = detail::get_str(is, path);
      const uint32_t rank = detail::get_u32(is, path);
      if (rank > 8) throw ParseError(path, "absurd tensor rank");
      std::vector<int64_t> shape;
      for (uint32_t d = 0; d < rank; ++d)
        shape.push_back(static_cast<int64_t>(detail::get_u64(is, path)));
      Tensor t(shape);
      for (double& x : t.v) {
        const uint64_t bits = detail::get_u64(is, path);
        std::memcpy(&x, &bits, 8);
      }
      ck.tensors.emplace(std::move(name), std::move(t));
    }
    return ck;
  }

  const std::string& require_meta(const std::string& key,
                                  const std::string& path) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw ParseError(path, cat("missing meta key ", key));
    return it->second;
  }

  const Tensor& require_tensor(const std::string& name,
                               const std::string& path) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw ParseError(path, cat("missing tensor ", name));
    return it->second;
  }
};

// Parameter-store <-> checkpoint helpers. Parameters live under "param.",
// batch-norm style buffers under "buffer.".
inline void pack_store(Checkpoint& ck, const ParamStore& ps) {
  for (const Var& p : ps.params()) ck.tensors["param." + p.name()] = p.val();
  for (const Var& b : ps.buffers()) ck.tensors["buffer." + b.name()] = b.val();
}

inline void unpack_store(const Checkpoint& ck, ParamStore& ps,
                         const std::string& path) {
  for (const Var& p : ps.params()) {
    const Tensor& t = ck.require_tensor("param." + p.name(), path);
    if (!t.same_shape(p.val()))
      throw ParseError(path, cat("shape mismatch for ", p.name()));
    const_cast<Var&>(p).val_mut() = t;
  }
  for (const Var& b : ps.buffers()) {
    const Tensor& t = ck.require_tensor("buffer." + b.name(), path);
    if (!t.same_shape(b.val()))
      throw ParseError(path, cat("shape mismatch for ", b.name()));
    const_cast<Var&>(b).val_mut() = t;
  }
}

}  // namespace retnas
