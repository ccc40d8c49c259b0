#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <variant>

#include "chunkdec/tensor.hpp"

namespace chunkdec {

// Raised for malformed or truncated files of any of the binary formats.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

// CTN1: "CTN1", u32 ndim, ndim x u64 dims, u8 dtype (0=f32, 1=f64), LE payload.
template <typename T>
void write_ctn(std::ostream& os, const Tensor<T>& t);
void write_ctn(std::ostream& os, const AnyTensor& t);

AnyTensor read_ctn(std::istream& is);

// Reads a CTN1 tensor and converts it to T if the stored dtype differs.
template <typename T>
Tensor<T> read_ctn_as(std::istream& is);

template <typename T>
void save_ctn(const std::filesystem::path& path, const Tensor<T>& t);
AnyTensor load_ctn(const std::filesystem::path& path);

DType dtype_of(const AnyTensor& t);

namespace binio {

void write_magic(std::ostream& os, const char (&magic)[5]);
void expect_magic(std::istream& is, const char (&magic)[5]);
void write_u8(std::ostream& os, std::uint8_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
std::uint8_t read_u8(std::istream& is);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
void write_string(std::ostream& os, const std::string& s);  // u64 length + bytes
std::string read_string(std::istream& is);

}  // namespace binio

}  // namespace chunkdec
