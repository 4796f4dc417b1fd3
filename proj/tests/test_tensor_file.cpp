#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <random>

#include "oracles.hpp"
#include "patchdev/tensor_file.hpp"

using namespace patchdev;

TEST_CASE("f32 tensor layout is little-endian and bit-exact") {
  TensorF32 t{{2}, {1.0f, -2.5f}};
  const auto bytes = encode_tensor(t);
  REQUIRE(bytes.size() == 16 + 4 + 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "DEVT");
  CHECK(bytes[4] == 1);  // version
  CHECK(bytes[8] == 0);  // dtype f32
  CHECK(bytes[12] == 1); // rank
  CHECK(bytes[16] == 2); // dims[0]
  // 1.0f = 0x3F800000
  CHECK(bytes[20] == 0x00);
  CHECK(bytes[23] == 0x3F);
  CHECK(decode_tensor_f32(bytes, "mem") == t);
}

TEST_CASE("u8 tensor round trip") {
  TensorU8 t{{2, 3}, {0, 255, 0, 255, 255, 0}};
  CHECK(decode_tensor_u8(encode_tensor(t), "mem") == t);
}

TEST_CASE("property: random f32 tensors round-trip through disk bit-exactly") {
  std::mt19937 rng(5);
  const auto dir = oracle::temp_dir("tensor");
  for (int trial = 0; trial < 20; ++trial) {
    TensorF32 t{{static_cast<std::uint32_t>(rng() % 7 + 1), static_cast<std::uint32_t>(rng() % 5 + 1)}, {}};
    for (std::size_t i = 0; i < t.element_count(); ++i) t.values.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(rng() & 0x7F7FFFFFu)));
    write_tensor(dir / "t.devt", t);
    const auto back = read_tensor_f32(dir / "t.devt");
    REQUIRE(back.dims == t.dims);
    for (std::size_t i = 0; i < t.values.size(); ++i)
      CHECK(std::bit_cast<std::uint32_t>(back.values[i]) == std::bit_cast<std::uint32_t>(t.values[i]));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("corruption is detected") {
  TensorF32 t{{3}, {1, 2, 3}};
  auto bytes = encode_tensor(t);

  SUBCASE("truncated payload") {
    bytes.pop_back();
    CHECK_THROWS_WITH_AS(decode_tensor_f32(bytes, "x.devt"), doctest::Contains("payload length"), FormatError);
  }
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    CHECK_THROWS_AS(decode_tensor_f32(bytes, "x.devt"), FormatError);
  }
  SUBCASE("version mismatch") {
    bytes[4] = 2;
    CHECK_THROWS_WITH_AS(decode_tensor_f32(bytes, "x.devt"), doctest::Contains("version"), FormatError);
  }
  SUBCASE("dtype mismatch") {
    CHECK_THROWS_AS(decode_tensor_u8(bytes, "x.devt"), FormatError);
  }
}

TEST_CASE("dims that disagree with the value count are rejected on encode") {
  TensorF32 t{{4}, {1, 2, 3}};
  CHECK_THROWS_AS(encode_tensor(t), FormatError);
}

TEST_CASE("missing file names the path") {
  CHECK_THROWS_WITH(read_tensor_f32("/nonexistent/dir/a.devt"), doctest::Contains("/nonexistent/dir/a.devt"));
}
