#pragma once

// Binary model checkpoints.
//
// Layout (all integers and floats little-endian):
//   "BFIC"                       4 bytes magic
//   u32 version                  currently 1
//   u64 D, C, K, L, hidden, M
//   u32 variant                  0=Baseline 1=P 2=Q 3=T 4=S
//   u64 seed
//   perm                         input permutation (Q/S)
//   C x perm                     per-layer permutations (blockwise variants)
//   u32 buffer_count
//   buffer_count x { u64 n, n x f32 }   in for_each_buffer order
// where perm = u8 present, and if present u64 n followed by n x u32.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "bfi/model.hpp"

namespace bfi {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io {

inline void put_u8(std::ostream& os, std::uint8_t v) {
  os.put(static_cast<char>(v));
}

template <class U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> b;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    b[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
  os.write(b.data(), b.size());
}

inline void put_f32(std::ostream& os, float v) {
  put_le(os, std::bit_cast<std::uint32_t>(v));
}

inline void get_bytes(std::istream& is, char* dst, std::size_t n) {
  if (!is.read(dst, static_cast<std::streamsize>(n)))
    throw FormatError("unexpected end of file");
}

inline std::uint8_t get_u8(std::istream& is) {
  char c;
  get_bytes(is, &c, 1);
  return static_cast<std::uint8_t>(c);
}

template <class U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> b;
  get_bytes(is, reinterpret_cast<char*>(b.data()), b.size());
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<U>(v);
}

inline float get_f32(std::istream& is) {
  return std::bit_cast<float>(get_le<std::uint32_t>(is));
}

inline void put_perm(std::ostream& os, const std::optional<Permutation>& p) {
  put_u8(os, p ? 1 : 0);
  if (!p) return;
  put_le<std::uint64_t>(os, p->size());
  for (std::size_t v : p->map()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(v));
}

inline std::optional<Permutation> get_perm(std::istream& is) {
  const auto present = get_u8(is);
  if (present == 0) return std::nullopt;
  if (present != 1) throw FormatError("bad permutation flag");
  const auto n = get_le<std::uint64_t>(is);
  if (n > (1ULL << 32)) throw FormatError("permutation too large");
  std::vector<std::size_t> map(n);
  for (auto& v : map) v = get_le<std::uint32_t>(is);
  try {
    return Permutation(std::move(map));
  } catch (const ContractViolation& e) {
    throw FormatError(e.what());
  }
}

}  // namespace io

inline constexpr std::array<char, 4> kCheckpointMagic = {'B', 'F', 'I', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const Model<float>& m, std::ostream& os) {
  const ModelConfig& c = m.config;
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  io::put_le<std::uint32_t>(os, kCheckpointVersion);
  for (std::uint64_t v : {c.d, c.c, c.k, c.l, c.hidden, c.m})
    io::put_le<std::uint64_t>(os, v);
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.variant.kind));
  io::put_le<std::uint64_t>(os, c.seed);
  io::put_perm(os, m.input_perm);
  for (std::size_t i = 0; i < c.c; ++i)
    io::put_perm(os, i < m.params.bfi.size() ? m.params.bfi[i].perm
                                             : std::optional<Permutation>{});
  std::uint32_t count = 0;
  for_each_buffer(m.params, [&](const std::string&, std::span<const float>) { ++count; });
  io::put_le<std::uint32_t>(os, count);
  for_each_buffer(m.params, [&](const std::string&, std::span<const float> buf) {
    io::put_le<std::uint64_t>(os, buf.size());
    for (float v : buf) io::put_f32(os, v);
  });
  if (!os) throw FormatError("checkpoint write failed");
}

/// Rebuilds the model skeleton from the stored config, then overwrites the
/// permutations and every buffer with the stored values.
inline Model<float> load_checkpoint(std::istream& is) {
  std::array<char, 4> magic;
  io::get_bytes(is, magic.data(), magic.size());
  if (magic != kCheckpointMagic) throw FormatError("not a BFIC checkpoint");
  const auto version = io::get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  ModelConfig c;
  c.d = io::get_le<std::uint64_t>(is);
  c.c = io::get_le<std::uint64_t>(is);
  c.k = io::get_le<std::uint64_t>(is);
  c.l = io::get_le<std::uint64_t>(is);
  c.hidden = io::get_le<std::uint64_t>(is);
  c.m = io::get_le<std::uint64_t>(is);
  const auto kind = io::get_le<std::uint32_t>(is);
  if (kind > static_cast<std::uint32_t>(VariantKind::S))
    throw FormatError("bad variant tag");
  c.variant.kind = static_cast<VariantKind>(kind);
  c.seed = io::get_le<std::uint64_t>(is);

  Model<float> m;
  try {
    m = build_model<float>(c);
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("invalid stored config: ") + e.what());
  }
  m.input_perm = io::get_perm(is);
  if (m.input_perm && m.input_perm->size() != c.d)
    throw FormatError("input permutation size mismatch");
  for (std::size_t i = 0; i < c.c; ++i) {
    auto p = io::get_perm(is);
    if (i < m.params.bfi.size()) {
      if (p && p->size() != c.padded_dim())
        throw FormatError("layer permutation size mismatch");
      m.params.bfi[i].perm = std::move(p);
    } else if (p) {
      throw FormatError("permutation stored for a baseline layer");
    }
  }
  const auto count = io::get_le<std::uint32_t>(is);
  std::uint32_t seen = 0;
  for_each_buffer(m.params, [&](const std::string& name, std::span<float> buf) {
    if (++seen > count) throw FormatError("missing buffer " + name);
    const auto n = io::get_le<std::uint64_t>(is);
    if (n != buf.size()) throw FormatError("size mismatch for " + name);
    for (auto& v : buf) v = io::get_f32(is);
  });
  if (seen != count) throw FormatError("unexpected extra buffers");
  return m;
}

inline void save_checkpoint(const Model<float>& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  save_checkpoint(m, os);
}

inline Model<float> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return load_checkpoint(is);
}

}  // namespace bfi
