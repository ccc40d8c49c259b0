#include "chunkdec/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace chunkdec {

namespace binio {

namespace {

template <typename U>
void write_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> buf;
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf.data(), buf.size());
}

template <typename U>
U read_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> buf;
  if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size())) {
    throw FormatError("unexpected end of file");
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

void expect_magic(std::istream& is, const char (&magic)[5]) {
  char got[4] = {};
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
    throw FormatError(std::string("bad magic, expected ") + magic);
  }
}

void write_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }
void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
std::uint8_t read_u8(std::istream& is) { return read_le<std::uint8_t>(is); }
std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }

void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const auto n = read_u64(is);
  if (n > (std::uint64_t{1} << 32)) throw FormatError("string length out of range");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw FormatError("unexpected end of file in string");
  }
  return s;
}

}  // namespace binio

namespace {

using UInt32 = std::uint32_t;
using UInt64 = std::uint64_t;

template <typename T>
using bits_t = std::conditional_t<sizeof(T) == 4, UInt32, UInt64>;

template <typename T>
void write_payload(std::ostream& os, const Tensor<T>& t) {
  for (auto v : t.values()) {
    auto bits = std::bit_cast<bits_t<T>>(v);
    if constexpr (sizeof(T) == 4) binio::write_u32(os, bits);
    else binio::write_u64(os, bits);
  }
}

template <typename T>
Tensor<T> read_payload(std::istream& is, Shape shape) {
  std::vector<T> data(shape_numel(shape));
  for (auto& v : data) {
    if constexpr (sizeof(T) == 4) v = std::bit_cast<T>(binio::read_u32(is));
    else v = std::bit_cast<T>(binio::read_u64(is));
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace

template <typename T>
void write_ctn(std::ostream& os, const Tensor<T>& t) {
  binio::write_magic(os, "CTN1");
  binio::write_u32(os, static_cast<std::uint32_t>(t.ndim()));
  for (auto d : t.shape()) binio::write_u64(os, d);
  binio::write_u8(os, static_cast<std::uint8_t>(dtype_of<T>()));
  write_payload(os, t);
}

void write_ctn(std::ostream& os, const AnyTensor& t) {
  std::visit([&](const auto& v) { write_ctn(os, v); }, t);
}

AnyTensor read_ctn(std::istream& is) {
  binio::expect_magic(is, "CTN1");
  const auto ndim = binio::read_u32(is);
  if (ndim > 8) throw FormatError("CTN1: implausible ndim " + std::to_string(ndim));
  Shape shape(ndim);
  std::size_t numel = 1;
  for (auto& d : shape) {
    d = binio::read_u64(is);
    if (d > (std::size_t{1} << 32)) throw FormatError("CTN1: dimension out of range");
    numel *= d;
    if (numel > (std::size_t{1} << 34)) throw FormatError("CTN1: tensor too large");
  }
  switch (binio::read_u8(is)) {
    case 0: return read_payload<float>(is, std::move(shape));
    case 1: return read_payload<double>(is, std::move(shape));
    default: throw FormatError("CTN1: unknown dtype code");
  }
}

template <typename T>
Tensor<T> read_ctn_as(std::istream& is) {
  return std::visit(
      [](auto&& t) -> Tensor<T> {
        using Stored = typename std::decay_t<decltype(t)>::value_type;
        if constexpr (std::is_same_v<Stored, T>) return std::move(t);
        else return t.template cast<T>();
      },
      read_ctn(is));
}

template <typename T>
void save_ctn(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_ctn(os, t);
  if (!os) throw FormatError("write failed: " + path.string());
}

AnyTensor load_ctn(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_ctn(is);
}

DType dtype_of(const AnyTensor& t) {
  return std::holds_alternative<Tensor<float>>(t) ? DType::f32 : DType::f64;
}

template void write_ctn(std::ostream&, const Tensor<float>&);
template void write_ctn(std::ostream&, const Tensor<double>&);
template Tensor<float> read_ctn_as(std::istream&);
template Tensor<double> read_ctn_as(std::istream&);
template void save_ctn(const std::filesystem::path&, const Tensor<float>&);
template void save_ctn(const std::filesystem::path&, const Tensor<double>&);

}  // namespace chunkdec
