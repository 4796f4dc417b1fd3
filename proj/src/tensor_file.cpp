#include "patchdev/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace patchdev {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[offset + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> encode_header(DType dtype, const std::vector<std::uint32_t>& dims,
                                        std::size_t payload_bytes) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + 4 * dims.size() + payload_bytes);
  out.insert(out.end(), std::begin(kTensorMagic), std::end(kTensorMagic));
  put_u32(out, kTensorVersion);
  put_u32(out, static_cast<std::uint32_t>(dtype));
  put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put_u32(out, d);
  return out;
}

struct Header {
  DType dtype;
  std::vector<std::uint32_t> dims;
  std::size_t payload_offset;
  std::size_t count;
};

Header decode_header(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  if (bytes.size() < 16) throw FormatError(source + ": file too short for tensor header");
  if (std::memcmp(bytes.data(), kTensorMagic, 4) != 0) throw FormatError(source + ": bad magic (expected DEVT)");
  const auto version = get_u32(bytes, 4);
  if (version != kTensorVersion) {
    throw FormatError(source + ": unsupported version " + std::to_string(version));
  }
  const auto code = get_u32(bytes, 8);
  if (code > 1) throw FormatError(source + ": unknown dtype code " + std::to_string(code));
  const auto rank = get_u32(bytes, 12);
  if (bytes.size() < 16 + 4ull * rank) throw FormatError(source + ": file too short for dims");
  Header h{static_cast<DType>(code), {}, 16 + 4ull * rank, 1};
  for (std::uint32_t i = 0; i < rank; ++i) {
    h.dims.push_back(get_u32(bytes, 16 + 4ull * i));
    h.count *= h.dims.back();
  }
  const std::size_t elem = h.dtype == DType::f32 ? 4 : 1;
  const std::size_t expected = h.count * elem;
  const std::size_t actual = bytes.size() - h.payload_offset;
  if (actual != expected) {
    throw FormatError(source + ": payload length " + std::to_string(actual) + " bytes, expected " +
                      std::to_string(expected));
  }
  return h;
}

void check_dims(std::size_t dims_count, std::size_t values) {
  if (dims_count != values) {
    throw FormatError("tensor dims describe " + std::to_string(dims_count) + " elements but " +
                      std::to_string(values) + " values supplied");
  }
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const TensorF32& t) {
  check_dims(t.element_count(), t.values.size());
  auto out = encode_header(DType::f32, t.dims, 4 * t.values.size());
  for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

std::vector<std::uint8_t> encode_tensor(const TensorU8& t) {
  check_dims(t.element_count(), t.values.size());
  auto out = encode_header(DType::u8, t.dims, t.values.size());
  out.insert(out.end(), t.values.begin(), t.values.end());
  return out;
}

TensorF32 decode_tensor_f32(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  const auto h = decode_header(bytes, source);
  if (h.dtype != DType::f32) throw FormatError(source + ": expected f32 tensor");
  TensorF32 t{h.dims, std::vector<float>(h.count)};
  for (std::size_t i = 0; i < h.count; ++i) {
    t.values[i] = std::bit_cast<float>(get_u32(bytes, h.payload_offset + 4 * i));
  }
  return t;
}

TensorU8 decode_tensor_u8(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  const auto h = decode_header(bytes, source);
  if (h.dtype != DType::u8) throw FormatError(source + ": expected u8 tensor");
  return TensorU8{h.dims, std::vector<std::uint8_t>(bytes.begin() + h.payload_offset, bytes.end())};
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing file: " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_tensor(const std::filesystem::path& path, const TensorF32& t) { write_file_bytes(path, encode_tensor(t)); }
void write_tensor(const std::filesystem::path& path, const TensorU8& t) { write_file_bytes(path, encode_tensor(t)); }

TensorF32 read_tensor_f32(const std::filesystem::path& path) {
  return decode_tensor_f32(read_file_bytes(path), path.string());
}

TensorU8 read_tensor_u8(const std::filesystem::path& path) {
  return decode_tensor_u8(read_file_bytes(path), path.string());
}

}  // namespace patchdev
