#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace marvin {

/// One tensor of an "MRVW" weight file.
struct TensorRecord {
  enum Role : std::uint8_t { Weights = 0, Bias = 1 };
  enum Type : std::uint8_t { PackedInt = 0, Int32 = 1, Float32 = 2 };

  std::uint32_t layer = 0;
  Role role = Weights;
  Type type = PackedInt;
  std::vector<std::uint32_t> shape;
  /// Lane width in bits for PackedInt (2/4/8), 32 otherwise.
  std::uint8_t lane_width = 32;
  /// Power-of-two scale exponent: real value = lane * 2^scale_shift.
  std::int8_t scale_shift = 0;
  std::vector<std::uint32_t> words;

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

/// b"MRVW", version byte, u32 record count, then per record: u32 layer,
/// u8 role, u8 type, u8 lane_width, i8 scale_shift, u8 rank, u32 dims[rank],
/// u32 word count, words. Little-endian throughout.
std::vector<std::uint8_t> encode_records(std::span<const TensorRecord> records);
/// Throws ParseError on malformed input.
std::vector<TensorRecord> decode_records(std::span<const std::uint8_t> bytes);

void write_records(std::span<const TensorRecord> records, const std::filesystem::path& path);
std::vector<TensorRecord> read_records(const std::filesystem::path& path);

std::uint32_t float_bits(float f);
float bits_float(std::uint32_t w);

}  // namespace marvin
