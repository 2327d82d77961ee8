#include <doctest.h>

#include <random>
#include <vector>

#include "marvin/datapath.hpp"
#include "marvin/error.hpp"

using namespace marvin;
using namespace marvin::datapath;

namespace {

std::int32_t sext_ref(std::uint32_t v, int bits) {
  const std::int64_t m = std::int64_t{1} << bits;
  std::int64_t x = v & (m - 1);
  if (x >= m / 2) x -= m;
  return static_cast<std::int32_t>(x);
}

// Scalar dot-product oracle straight from the lane definition.
std::int32_t dot_oracle(std::int32_t acc, std::uint32_t w, std::uint32_t a, int wb, int ab) {
  const int p = 32 / std::max(wb, ab);
  std::int64_t sum = acc;
  for (int k = 0; k < p; ++k) {
    const std::int32_t wk = sext_ref(w >> (k * wb), wb);
    const std::int32_t ak = static_cast<std::int32_t>((a >> (k * ab)) & ((1u << ab) - 1));
    sum += static_cast<std::int64_t>(wk) * ak;
  }
  return static_cast<std::int32_t>(static_cast<std::uint32_t>(static_cast<std::uint64_t>(sum)));
}

}  // namespace

TEST_CASE("pack and unpack round-trip per lane width") {
  const std::vector<std::int32_t> w2 = {-2, -1, 0, 1, 1, 0, -1, -2, 0, 0, 1, -2, 1, 1, -1, 0};
  const PackedWord p = pack(w2, 2, Signedness::Signed);
  CHECK(unpack(p) == w2);
  const std::vector<std::int32_t> a8 = {0, 255, 17, 128};
  CHECK(pack(a8, 8, Signedness::Unsigned).raw == 0x8011FF00u);
  CHECK(unpack(pack(a8, 8, Signedness::Unsigned)) == a8);
}

TEST_CASE("pack reports overflow and too many values") {
  const std::vector<std::int32_t> bad = {2};
  try {
    pack(bad, 2, Signedness::Signed);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LaneOverflow);
  }
  const std::vector<std::int32_t> five(5, 1);
  try {
    pack(five, 8, Signedness::Unsigned);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TooManyValues);
  }
}

TEST_CASE("mul32 from 17-bit partial products") {

  CHECK(mul32_partial_products(0x00012345u, 0x00000003u) == 0x000369CFu);
  const std::uint32_t edge[] = {0, 1, 2, 0x7FFF, 0x8000, 0xFFFF, 0x10000, 0x7FFFFFFF, 0x80000000u, 0xFFFFFFFFu};
  for (std::uint32_t a : edge)
    for (std::uint32_t b : edge) CHECK(mul32_partial_products(a, b) == a * b);
  std::mt19937 rng(1);
  int bad = 0;
  for (int i = 0; i < 100000; ++i) {
    const std::uint32_t a = rng(), b = rng();
    if (mul32_partial_products(a, b) != a * b) ++bad;
  }
  CHECK(bad == 0);
}

TEST_CASE("mul17 rejects operands beyond 17 bits") {
  CHECK(mul17(65535, -65536) == 65535LL * -65536LL);
  CHECK_THROWS_AS(mul17(65536, 1), Error);
}

TEST_CASE("products per instruction follow the mode") {
  for (const auto& cfg : isa::all_configs()) {
    const int expect = cfg.weight_bits == 8 ? 4 : cfg.weight_bits == 4 ? 8 : 16;
    if (cfg.activation_bits <= cfg.weight_bits) CHECK(cfg.products() == expect);
    CHECK(schedule(cfg).capacity == expect);
    CHECK(schedule(cfg).products() == cfg.products());
  }
}

TEST_CASE("schedule spreads slots over both fast cycles and four multipliers") {
  for (const auto& cfg : isa::all_configs()) {
    const FastCycleSchedule s = schedule(cfg);
    for (int c = 0; c < kFastCyclesPerCoreCycle; ++c) {
      CHECK(s.multipliers_in_cycle(c) <= kMultipliers);
      for (const auto& slot : s.fast_cycles[c]) {
        CHECK(slot.multiplier >= 0);
        CHECK(slot.multiplier < kMultipliers);
      }
    }
  }
  const FastCycleSchedule w2a2 = schedule({2, 2});
  CHECK(w2a2.multipliers_in_cycle(0) == 4);
  CHECK(w2a2.multipliers_in_cycle(1) == 4);
  CHECK(w2a2.fast_cycles[0][0].lane_count == 2);
}

TEST_CASE("soft SIMD dual product: all 4096 combinations") {
  int bad = 0;
  for (int a = 0; a < 256; ++a)
    for (int wl = -2; wl <= 1; ++wl)
      for (int wh = -2; wh <= 1; ++wh) {
        const SoftSimdProducts p = soft_simd_product(static_cast<std::uint32_t>(a), wl, wh);
        if (p.lo != a * wl || p.hi != a * wh) ++bad;
      }
  CHECK(bad == 0);
}

TEST_CASE("dual-lane pair dot is exact for 2- and 4-bit activations") {
  CHECK(dual_lane_field(2) == 5);
  CHECK(dual_lane_field(4) == 7);
  CHECK(guard_bits(10, 4) == 2);
  CHECK(guard_bits(8, 1) == 0);
  int bad = 0;
  for (int ab : {2, 4})
    for (int ai = 0; ai < (1 << ab); ++ai)
      for (int aj = 0; aj < (1 << ab); ++aj)
        for (int wi = -2; wi <= 1; ++wi)
          for (int wj = -2; wj <= 1; ++wj)
            if (soft_simd_pair_dot(ai, aj, wi, wj, ab) != ai * wi + aj * wj) ++bad;
  CHECK(bad == 0);
}

TEST_CASE("nn_mac functional and bit-level paths equal the dot-product oracle") {
  std::mt19937 rng(3);
  for (const auto& cfg : isa::all_configs()) {
    int bad = 0;
    for (int i = 0; i < 2000; ++i) {
      const std::uint32_t w = rng(), a = rng();
      std::int32_t acc = static_cast<std::int32_t>(rng());
      if (i % 2) acc = static_cast<std::int32_t>(rng() % 200001) - 100000;
      const PackedWord pw{w, cfg.weight_bits, Signedness::Signed};
      const PackedWord pa{a, cfg.activation_bits, Signedness::Unsigned};
      const std::int32_t expect = dot_oracle(acc, w, a, cfg.weight_bits, cfg.activation_bits);
      if (nn_mac_functional(acc, pw, pa, cfg) != expect) ++bad;
      if (nn_mac_bitlevel(acc, pw, pa, cfg).acc != expect) ++bad;
    }
    CHECK_MESSAGE(bad == 0, cfg.name());
  }
}

TEST_CASE("nn_mac checks operand widths against the config") {
  const PackedWord w{0, 4, Signedness::Signed};
  const PackedWord a{0, 8, Signedness::Unsigned};
  try {
    nn_mac_functional(0, w, a, {8, 8});
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigMismatch);
  }
}

TEST_CASE("nn_mac wraps at 32 bits") {
  const std::vector<std::int32_t> wv = {1, 1, 1, 1};
  const std::vector<std::int32_t> av = {255, 255, 255, 255};
  const PackedWord w = pack(wv, 8, Signedness::Signed);
  const PackedWord a = pack(av, 8, Signedness::Unsigned);
  CHECK(nn_mac_functional(INT32_MAX, w, a, {8, 8}) == static_cast<std::int32_t>(0x7FFFFFFFu + 1020u));
}
