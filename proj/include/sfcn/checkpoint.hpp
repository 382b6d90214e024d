#pragma once

// Checkpoint format (all integers little-endian):
//   "SFCN" | u16 version
//   repeated until EOF:
//     u16 name_len | name bytes | u8 rank | rank x u32 extents | numel x f32

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "sfcn/error.hpp"
#include "sfcn/tensor.hpp"

namespace sfcn {

inline constexpr char kCheckpointMagic[4] = {'S', 'F', 'C', 'N'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

namespace detail {

template <typename U>
void write_le(std::ostream& os, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U read_le(std::istream& is, const std::string& what) {
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw FormatError("truncated file while reading " + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U v;
  std::memcpy(&v, bytes, sizeof(U));
  return v;
}

}  // namespace detail

// Values are stored as 32-bit floats regardless of T.
template <typename T>
void save_checkpoint(const std::string& path, const std::vector<NamedTensor<T>>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, 4);
  detail::write_le<std::uint16_t>(os, kCheckpointVersion);
  for (const auto& [name, tensor] : params) {
    if (name.size() > 0xFFFF) throw Error("parameter name too long: " + name);
    detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(tensor.rank()));
    for (auto d : tensor.shape()) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (T v : tensor.data()) detail::write_le<float>(os, static_cast<float>(v));
  }
  if (!os) throw Error("failed writing checkpoint: " + path);
}

inline std::vector<NamedTensor<float>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("bad checkpoint magic in " + path);
  }
  const auto version = detail::read_le<std::uint16_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  }
  std::vector<NamedTensor<float>> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto len = detail::read_le<std::uint16_t>(is, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("truncated parameter name in " + path);
    const auto rank = detail::read_le<std::uint8_t>(is, "rank of " + name);
    if (rank < 1 || rank > 4) throw FormatError("bad rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) {
      d = detail::read_le<std::uint32_t>(is, "extent of " + name);
      if (d == 0) throw FormatError("zero extent for " + name);
    }
    std::vector<float> values(static_cast<std::size_t>(numel(shape)));
    for (auto& v : values) v = detail::read_le<float>(is, "values of " + name);
    out.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(values))});
  }
  return out;
}

// Copies checkpoint values into existing parameters, matching by name and shape.
template <typename T>
void load_checkpoint_into(const std::string& path, std::vector<NamedTensor<T>>& params) {
  auto loaded = load_checkpoint(path);
  if (loaded.size() != params.size()) {
    throw FormatError("checkpoint has " + std::to_string(loaded.size()) + " tensors, model has " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& dst = params[i];
    const auto& src = loaded[i];
    if (dst.name != src.name || dst.tensor.shape() != src.tensor.shape()) {
      throw FormatError("checkpoint entry " + src.name + to_string(src.tensor.shape()) +
                        " does not match model entry " + dst.name + to_string(dst.tensor.shape()));
    }
    auto out = dst.tensor.data();
    auto in = src.tensor.data();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = static_cast<T>(in[k]);
  }
}

}  // namespace sfcn
