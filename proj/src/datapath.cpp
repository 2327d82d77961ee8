#include "marvin/datapath.hpp"

#include <cstdlib>

#include "marvin/error.hpp"

namespace marvin::datapath {

namespace {

constexpr std::int64_t k17Min = -(1 << 16);
constexpr std::int64_t k17Max = (1 << 16) - 1;
constexpr std::int64_t k34Limit = std::int64_t{1} << 33;

std::int32_t sext_field(std::int64_t value, int bits) {
  const std::uint64_t field = static_cast<std::uint64_t>(value) & ((std::uint64_t{1} << bits) - 1);
  const std::uint64_t m = std::uint64_t{1} << (bits - 1);
  return static_cast<std::int32_t>(static_cast<std::int64_t>(field ^ m) - static_cast<std::int64_t>(m));
}

void check_matches(const PackedWord& w, const PackedWord& a, const PrecisionConfig& cfg) {
  if (!cfg.valid()) throw Error(ErrorCode::InvalidConfig, cfg.name());
  if (w.lane_width != cfg.weight_bits || a.lane_width != cfg.activation_bits ||
      w.signedness != Signedness::Signed || a.signedness != Signedness::Unsigned) {
    throw Error(ErrorCode::ConfigMismatch,
                "packed operands (w" + std::to_string(w.lane_width) + ", a" +
                    std::to_string(a.lane_width) + ") do not match " + cfg.name());
  }
}

}  // namespace

std::int32_t PackedWord::lane(int k) const {
  return extract_lane(raw, k, lane_width, signedness == Signedness::Signed);
}

std::int32_t lane_min(int lane_width, Signedness s) {
  return s == Signedness::Signed ? -(1 << (lane_width - 1)) : 0;
}

std::int32_t lane_max(int lane_width, Signedness s) {
  return s == Signedness::Signed ? (1 << (lane_width - 1)) - 1 : (1 << lane_width) - 1;
}

PackedWord pack(std::span<const std::int32_t> values, int lane_width, Signedness s) {
  if (!PrecisionConfig::valid_width(lane_width))
    throw Error(ErrorCode::InvalidConfig, "lane width " + std::to_string(lane_width));
  PackedWord word{0, lane_width, s};
  if (static_cast<int>(values.size()) > word.lanes())
    throw Error(ErrorCode::TooManyValues, std::to_string(values.size()) + " values for " +
                                              std::to_string(word.lanes()) + " lanes");
  const std::int32_t lo = lane_min(lane_width, s);
  const std::int32_t hi = lane_max(lane_width, s);
  const std::uint32_t mask = (1u << lane_width) - 1u;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (values[k] < lo || values[k] > hi)
      throw Error(ErrorCode::LaneOverflow, std::to_string(values[k]) + " does not fit lane " +
                                               std::to_string(k));
    word.raw |= (static_cast<std::uint32_t>(values[k]) & mask) << (k * lane_width);
  }
  return word;
}

std::vector<std::int32_t> unpack(const PackedWord& word) {
  std::vector<std::int32_t> out(word.lanes());
  for (int k = 0; k < word.lanes(); ++k) out[k] = word.lane(k);
  return out;
}

std::int64_t mul17(std::int32_t a, std::int32_t b) {
  if (a < k17Min || a > k17Max || b < k17Min || b > k17Max)
    throw Error(ErrorCode::LaneOverflow, "operand exceeds 17 bits");
  return static_cast<std::int64_t>(a) * b;
}

std::uint32_t mul32_partial_products(std::uint32_t a, std::uint32_t b) {
  // 16-bit halves, zero-extended into the 17-bit multiplier inputs.
  const auto a_lo = static_cast<std::int32_t>(a & 0xFFFF);
  const auto a_hi = static_cast<std::int32_t>(a >> 16);
  const auto b_lo = static_cast<std::int32_t>(b & 0xFFFF);
  const auto b_hi = static_cast<std::int32_t>(b >> 16);
  const auto p_ll = static_cast<std::uint64_t>(mul17(a_lo, b_lo));
  const auto p_lh = static_cast<std::uint64_t>(mul17(a_lo, b_hi));
  const auto p_hl = static_cast<std::uint64_t>(mul17(a_hi, b_lo));
  return static_cast<std::uint32_t>(p_ll + (p_lh << 16) + (p_hl << 16));
}

std::int32_t nn_mac_raw(std::int32_t acc, std::uint32_t weights, std::uint32_t activations,
                        const PrecisionConfig& cfg) {
  const int wb = cfg.weight_bits;
  const int ab = cfg.activation_bits;
  const int n = cfg.products();
  std::uint32_t sum = static_cast<std::uint32_t>(acc);
  for (int k = 0; k < n; ++k) {
    const std::int32_t w = extract_lane(weights, k, wb, true);
    const std::int32_t a = extract_lane(activations, k, ab, false);
    sum += static_cast<std::uint32_t>(w * a);
  }
  return static_cast<std::int32_t>(sum);
}

std::int32_t nn_mac_functional(std::int32_t acc, const PackedWord& weights,
                               const PackedWord& activations, const PrecisionConfig& cfg) {
  check_matches(weights, activations, cfg);
  return nn_mac_raw(acc, weights.raw, activations.raw, cfg);
}

int guard_bits(int n, int k) {
  if (n < 1 || k < 1) throw Error(ErrorCode::InvalidConfig, "guard_bits needs n >= 1, k >= 1");
  int bits = 0;
  while ((1 << bits) < k) ++bits;
  return bits;
}

SoftSimdProducts soft_simd_product(std::uint32_t a, std::int32_t w_lo, std::int32_t w_hi) {
  const std::int32_t composite = w_hi * (1 << kSoftSimdShift) + w_lo;
  const std::int64_t p = mul17(static_cast<std::int32_t>(a), composite);
  SoftSimdProducts out;
  out.lo = sext_field(p, kSoftSimdShift);
  // A negative low field borrowed one unit from bit 12; give it back.
  const std::int64_t corrected = p + (out.lo < 0 ? (std::int64_t{1} << kSoftSimdShift) : 0);
  out.hi = static_cast<std::int32_t>(corrected >> kSoftSimdShift);
  return out;
}

int dual_lane_field(int activation_bits) {
  // Product of an unsigned a-bit value and a signed 2-bit weight needs a+2
  // bits; two of them summed need one guard bit.
  const int n = activation_bits + 2;
  return n + guard_bits(n, 2);
}

std::int32_t soft_simd_pair_dot(std::int32_t a_i, std::int32_t a_j, std::int32_t w_i,
                                std::int32_t w_j, int activation_bits) {
  if (activation_bits > 4)
    throw Error(ErrorCode::InvalidConfig, "dual-lane soft SIMD needs activations <= 4 bits");
  const int f = dual_lane_field(activation_bits);
  const std::int32_t act = a_i + a_j * (1 << f);
  const std::int32_t wgt = w_i * (1 << f) + w_j;
  const std::int64_t p = mul17(act, wgt);
  // p = a_i*w_j + (a_i*w_i + a_j*w_j)*2^f + a_j*w_i*2^(2f)
  const std::int32_t low = sext_field(p, f);
  return sext_field((p - low) >> f, f);
}

int FastCycleSchedule::products() const {
  int n = 0;
  for (const auto& cycle : fast_cycles)
    for (const auto& slot : cycle) n += slot.lane_count;
  return n;
}

int FastCycleSchedule::multipliers_in_cycle(int cycle) const {
  return static_cast<int>(fast_cycles.at(cycle).size());
}

FastCycleSchedule schedule(const PrecisionConfig& cfg) {
  if (!cfg.valid()) throw Error(ErrorCode::InvalidConfig, cfg.name());
  FastCycleSchedule s;
  s.cfg = cfg;
  const isa::Mode mode = isa::mode_of(cfg);
  s.capacity = mode == isa::Mode::Mode1 ? 4 : mode == isa::Mode::Mode2 ? 8 : 16;

  const int products = cfg.products();
  const bool dual = mode == isa::Mode::Mode3 && cfg.activation_bits <= 4;
  const int per_slot = dual ? 2 : 1;
  const int slots = products / per_slot;
  // Round-robin over the two fast cycles keeps the per-cycle load balanced.
  for (int slot = 0; slot < slots; ++slot) {
    MultiplierSlot m;
    m.multiplier = slot / kFastCyclesPerCoreCycle;
    m.lane_count = per_slot;
    for (int i = 0; i < per_slot; ++i) {
      const int lane = slot * per_slot + i;
      m.pairs[i] = {lane, lane};
    }
    s.fast_cycles[slot % kFastCyclesPerCoreCycle].push_back(m);
  }
  return s;
}

BitLevelResult nn_mac_bitlevel(std::int32_t acc, const PackedWord& weights,
                               const PackedWord& activations, const PrecisionConfig& cfg) {
  check_matches(weights, activations, cfg);
  const FastCycleSchedule s = schedule(cfg);
  BitLevelResult out;
  std::int64_t acc34 = acc;
  auto track = [&](std::int64_t v) {
    const std::int64_t mag = v < 0 ? -v : v;
    if (mag > out.max_magnitude) out.max_magnitude = mag;
    if (mag >= k34Limit) throw Error(ErrorCode::LaneOverflow, "34-bit accumulator exceeded");
  };
  track(acc34);
  for (const auto& cycle : s.fast_cycles) {
    for (const auto& slot : cycle) {
      std::int64_t product = 0;
      if (slot.lane_count == 1) {
        const LanePair& p = slot.pairs[0];
        product = mul17(weights.lane(p.weight_lane), activations.lane(p.activation_lane));
      } else {
        const LanePair& p0 = slot.pairs[0];
        const LanePair& p1 = slot.pairs[1];
        product = soft_simd_pair_dot(activations.lane(p0.activation_lane),
                                     activations.lane(p1.activation_lane),
                                     weights.lane(p0.weight_lane), weights.lane(p1.weight_lane),
                                     cfg.activation_bits);
      }
      track(product);
      acc34 += product;
      track(acc34);
    }
  }
  out.acc = static_cast<std::int32_t>(static_cast<std::uint32_t>(acc34));
  return out;
}

}  // namespace marvin::datapath
