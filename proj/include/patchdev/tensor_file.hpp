#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace patchdev {

// On-disk layout (all integers little-endian):
//   "DEVT" | version:u32 | dtype:u32 | rank:u32 | dims:rank*u32 | payload
// Payload is row-major; f32 values are IEEE-754 little-endian.
inline constexpr char kTensorMagic[4] = {'D', 'E', 'V', 'T'};
inline constexpr std::uint32_t kTensorVersion = 1;

enum class DType : std::uint32_t { f32 = 0, u8 = 1 };

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<T> values;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  bool operator==(const Tensor&) const = default;
};

using TensorF32 = Tensor<float>;
using TensorU8 = Tensor<std::uint8_t>;

std::vector<std::uint8_t> encode_tensor(const TensorF32& t);
std::vector<std::uint8_t> encode_tensor(const TensorU8& t);
TensorF32 decode_tensor_f32(const std::vector<std::uint8_t>& bytes, const std::string& source);
TensorU8 decode_tensor_u8(const std::vector<std::uint8_t>& bytes, const std::string& source);

void write_tensor(const std::filesystem::path& path, const TensorF32& t);
void write_tensor(const std::filesystem::path& path, const TensorU8& t);
TensorF32 read_tensor_f32(const std::filesystem::path& path);
TensorU8 read_tensor_u8(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace patchdev
