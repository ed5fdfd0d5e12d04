#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <variant>

#include "tafcal/errors.hpp"
#include "tafcal/tensor.hpp"

// "TFC1" tensor container: 4 magic bytes, one version byte (0x01), four
// unsigned 32-bit little-endian dims (N, C, H, W), one dtype byte
// (0x01 = single, 0x02 = double), then the payload little-endian row-major.

namespace tafcal {

static_assert(std::endian::native == std::endian::little,
              "TFC1 serialization assumes a little-endian host");

namespace tfc_detail {

constexpr char kMagic[4] = {'T', 'F', 'C', '1'};
constexpr std::uint8_t kVersion = 0x01;

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace tfc_detail

template <typename T>
void write_tensor(std::ostream& os, const Tensor4<T>& t) {
  os.write(tfc_detail::kMagic, 4);
  os.put(static_cast<char>(tfc_detail::kVersion));
  tfc_detail::put_u32(os, static_cast<std::uint32_t>(t.n()));
  tfc_detail::put_u32(os, static_cast<std::uint32_t>(t.c()));
  tfc_detail::put_u32(os, static_cast<std::uint32_t>(t.h()));
  tfc_detail::put_u32(os, static_cast<std::uint32_t>(t.w()));
  os.put(static_cast<char>(precision_of<T>()));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(T)));
}

template <typename T>
void write_tensor(const std::string& path, const Tensor4<T>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorCategory::io, "cannot open for writing: " + path);
  write_tensor(os, t);
  if (!os) fail(ErrorCategory::io, "write failed: " + path);
}

using AnyTensor = std::variant<Tensor4<float>, Tensor4<double>>;

// Reads one record starting at the current stream position. `where` names
// the file in diagnostics; offsets are relative to the record start.
inline AnyTensor read_tensor_record(std::istream& is, const std::string& where) {
  const auto start = is.tellg();
  auto offset_of = [&](std::streamoff rel) {
    return std::to_string(static_cast<long long>(start) + rel);
  };

  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, tfc_detail::kMagic, 4) != 0)
    fail(ErrorCategory::io, where + ": bad magic at offset " + offset_of(0) +
                                " (expected \"TFC1\")");
  const int version = is.get();
  if (version != tfc_detail::kVersion)
    fail(ErrorCategory::io, where + ": unsupported version " + std::to_string(version) +
                                " at offset " + offset_of(4));
  const std::uint32_t n = tfc_detail::get_u32(is);
  const std::uint32_t c = tfc_detail::get_u32(is);
  const std::uint32_t h = tfc_detail::get_u32(is);
  const std::uint32_t w = tfc_detail::get_u32(is);
  const int dtype = is.get();
  if (!is)
    fail(ErrorCategory::io, where + ": truncated header at offset " + offset_of(5));
  if (dtype != 0x01 && dtype != 0x02)
    fail(ErrorCategory::io, where + ": unknown dtype byte " + std::to_string(dtype) +
                                " at offset " + offset_of(21));

  const Shape4 shape{static_cast<int>(n), static_cast<int>(c), static_cast<int>(h),
                     static_cast<int>(w)};
  auto read_payload = [&]<typename T>(Tensor4<T>& t) {
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(T)));
    if (!is)
      fail(ErrorCategory::io,
           where + ": truncated payload at offset " +
               offset_of(22 + is.gcount()) + " (expected " +
               std::to_string(t.size() * sizeof(T)) + " payload bytes)");
  };

  if (dtype == 0x01) {
    Tensor4<float> t(shape);
    read_payload(t);
    return t;
  }
  Tensor4<double> t(shape);
  read_payload(t);
  return t;
}

inline AnyTensor read_tensor_any(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCategory::io, "cannot open for reading: " + path);
  return read_tensor_record(is, path);
}

// Strict read: the stored dtype must match T.
template <typename T>
Tensor4<T> read_tensor(const std::string& path) {
  AnyTensor any = read_tensor_any(path);
  if (auto* t = std::get_if<Tensor4<T>>(&any)) return std::move(*t);
  fail(ErrorCategory::io, path + ": stored dtype does not match requested precision");
}

// Converting read (widening is exact, narrowing rounds).
template <typename T>
Tensor4<T> read_tensor_as(const std::string& path) {
  AnyTensor any = read_tensor_any(path);
  return std::visit([](const auto& t) { return t.template cast<T>(); }, any);
}

}  // namespace tafcal
