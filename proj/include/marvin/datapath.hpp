#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "marvin/isa.hpp"

namespace marvin::datapath {

using isa::PrecisionConfig;

enum class Signedness { Signed, Unsigned };

/// A 32-bit register image holding 32/lane_width lanes. Lane k occupies bits
/// [k*lane_width, (k+1)*lane_width), lane 0 in the least significant bits.
struct PackedWord {
  std::uint32_t raw = 0;
  int lane_width = 8;
  Signedness signedness = Signedness::Unsigned;

  int lanes() const { return 32 / lane_width; }
  std::int32_t lane(int k) const;
};

std::int32_t lane_min(int lane_width, Signedness s);
std::int32_t lane_max(int lane_width, Signedness s);

/// Throws LaneOverflow if a value does not fit, TooManyValues if there are more
/// values than lanes. Unfilled lanes are zero.
PackedWord pack(std::span<const std::int32_t> values, int lane_width, Signedness s);
/// All lanes, sign-extended for signed words.
std::vector<std::int32_t> unpack(const PackedWord& word);

/// Reads lane k of a raw word without building a PackedWord.
inline std::int32_t extract_lane(std::uint32_t raw, int k, int width, bool is_signed) {
  const std::uint32_t field = (raw >> (k * width)) & ((1u << width) - 1u);
  if (!is_signed) return static_cast<std::int32_t>(field);
  const std::uint32_t m = 1u << (width - 1);
  return static_cast<std::int32_t>((field ^ m) - m);
}

/// One 17x17 signed multiplier. Operands must fit in 17-bit two's complement.
std::int64_t mul17(std::int32_t a, std::int32_t b);

/// 32x32 -> low 32 multiply built only from 17-bit partial products:
/// P_ll + (P_lh << 16) + (P_hl << 16), mod 2^32. P_hh only feeds MULH and is
/// not needed for the low word.
std::uint32_t mul32_partial_products(std::uint32_t a, std::uint32_t b);

/// acc + sum_k w_k * a_k over k < cfg.products(), wrapping to 32 bits.
/// Weights are signed lanes of cfg.weight_bits, activations unsigned lanes of
/// cfg.activation_bits. Throws ConfigMismatch if the words disagree with cfg.
std::int32_t nn_mac_functional(std::int32_t acc, const PackedWord& weights,
                               const PackedWord& activations, const PrecisionConfig& cfg);

/// Same semantics on raw register values; used by the simulator hot loop.
std::int32_t nn_mac_raw(std::int32_t acc, std::uint32_t weights, std::uint32_t activations,
                        const PrecisionConfig& cfg);

/// ceil(log2(k)): extra bits needed to accumulate k values of n bits.
int guard_bits(int n, int k);

/// Field offset of the high product in the dual-weight soft SIMD operand:
/// a 10-bit int8 x int2 product plus guard_bits(10, 4) = 12.
inline constexpr int kSoftSimdShift = 12;

struct SoftSimdProducts {
  std::int32_t lo = 0;
  std::int32_t hi = 0;
};

/// One 17-bit multiplication of `a` against (w_hi * 2^12 + w_lo), then field
/// extraction with a borrow correction when the low product is negative.
/// Returns exactly {a * w_lo, a * w_hi}. a in [0,255], weights in [-2,1].
SoftSimdProducts soft_simd_product(std::uint32_t a, std::int32_t w_lo, std::int32_t w_hi);

/// Field offset used by dual-lane Mode-3 slots for a given activation width.
int dual_lane_field(int activation_bits);

/// One 17-bit multiplication of (a_i + a_j * 2^F) by (w_i * 2^F + w_j); the
/// middle field is a_i*w_i + a_j*w_j. Requires activation_bits <= 4.
std::int32_t soft_simd_pair_dot(std::int32_t a_i, std::int32_t a_j, std::int32_t w_i,
                                std::int32_t w_j, int activation_bits);

struct LanePair {
  int weight_lane = 0;
  int activation_lane = 0;
};

/// Work issued to one 17-bit multiplier in one fast cycle: one product, or two
/// 2-bit-weight products through a soft SIMD operand.
struct MultiplierSlot {
  int multiplier = 0;
  int lane_count = 1;
  std::array<LanePair, 2> pairs{};
};

inline constexpr int kMultipliers = 4;
inline constexpr int kFastCyclesPerCoreCycle = 2;

struct FastCycleSchedule {
  PrecisionConfig cfg{};
  std::array<std::vector<MultiplierSlot>, kFastCyclesPerCoreCycle> fast_cycles;
  /// Product slots the mode offers per instruction: 4 (Mode1), 8 (Mode2), 16 (Mode3).
  int capacity = 0;

  int products() const;
  int multipliers_in_cycle(int cycle) const;
};

FastCycleSchedule schedule(const PrecisionConfig& cfg);

struct BitLevelResult {
  std::int32_t acc = 0;
  /// Largest |value| held in the 34-bit accumulator path.
  std::int64_t max_magnitude = 0;
};

/// Executes nn_mac through schedule(), mul17 and the soft SIMD operands.
BitLevelResult nn_mac_bitlevel(std::int32_t acc, const PackedWord& weights,
                               const PackedWord& activations, const PrecisionConfig& cfg);

}  // namespace marvin::datapath
