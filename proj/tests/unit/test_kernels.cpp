#include <doctest.h>

#include <random>

#include "marvin/error.hpp"
#include "marvin/kernels.hpp"
#include "marvin/simulator.hpp"

using namespace marvin;
using namespace marvin::kernels;

namespace {

struct Case {
  LayerSpec layer;
  LayerParams params;
  std::vector<std::int32_t> input;
  std::vector<std::int32_t> rhs;
};

std::vector<std::int32_t> random_tensor(std::mt19937& rng, std::size_t n, int bits) {
  std::vector<std::int32_t> v(n);
  for (auto& x : v) x = static_cast<std::int32_t>(rng() % (1u << bits));
  return v;
}

LayerParams random_params(std::mt19937& rng, const LayerSpec& L, int wbits, bool allow_prune) {
  LayerParams p;
  const int lo = -(1 << (wbits - 1));
  const int span = 1 << wbits;
  for (std::size_t i = 0; i < L.weight_count(); ++i) p.weights.push_back(lo + static_cast<int>(rng() % span));
  for (int c = 0; c < L.out_c; ++c) p.bias.push_back(static_cast<int>(rng() % 401) - 200);
  p.shift = static_cast<int>(rng() % 9);
  if (allow_prune && L.has_weights() && rng() % 2) {
    p.pruned.assign(L.out_c, 0);
    const std::size_t per = L.weight_count() / L.out_c;
    for (int c = 0; c < L.out_c; ++c) {
      if (rng() % 3 != 0) continue;
      p.pruned[c] = 1;
      p.bias[c] = 0;
      for (std::size_t i = 0; i < per; ++i) p.weights[c * per + i] = 0;
    }
  }
  p.lhs_shift = static_cast<int>(rng() % 3);
  p.rhs_shift = static_cast<int>(rng() % 3);
  return p;
}

LayerSpec random_layer(std::mt19937& rng, LayerKind kind) {
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng() % (hi - lo + 1)); };
  for (;;) {
    const int c = pick(1, 8), h = pick(1, 8), w = pick(1, 8);
    LayerSpec L;
    switch (kind) {
      case LayerKind::Conv2d: {
        const int k = pick(1, 3);
        L = conv2d(c, pick(1, 8), h, w, k, pick(1, 2), pick(0, k - 1),
                   rng() % 2 ? Activation::ReLU : Activation::None);
        break;
      }
      case LayerKind::DepthwiseConv2d: {
        const int k = pick(1, 3);
        L = depthwise(c, h, w, k, pick(1, 2), pick(0, k - 1), Activation::ReLU);
        break;
      }
      case LayerKind::Dense: L = dense(c, pick(1, 3), pick(1, 3), pick(1, 8), Activation::ReLU); break;
      case LayerKind::MaxPool: L = maxpool(c, h, w, pick(1, 3), pick(1, 2)); break;
      case LayerKind::AvgPool: L = avgpool(c, h, w, pick(1, 3), pick(1, 2)); break;
      case LayerKind::ResidualAdd: L = residual(c, h, w, Activation::ReLU); break;
    }
    try {
      L.validate();
      return L;
    } catch (const Error&) {
    }
  }
}

std::vector<std::int32_t> execute(const LayerProgram& lp, sim::ExecutionReport* rep = nullptr) {
  sim::MachineState st = sim::initial_state(lp.program);
  const auto r = sim::run(lp.program, st);
  if (rep) *rep = r;
  return read_output(lp, st);
}

}  // namespace

TEST_CASE("requantize examples") {
  CHECK(requantize(256, 4, 8, false) == 16);
  CHECK(requantize(-300, 4, 8, true) == 0);
  CHECK(requantize(1 << 20, 4, 8, false) == 255);
  CHECK(requantize(24, 4, 8, false) == 2);  // 1.5 rounds away from zero
  CHECK(requantize(23, 4, 8, false) == 1);
  CHECK(requantize(100, 0, 4, false) == 15);
}

TEST_CASE("requantize is monotone and fixes in-range values at shift 0") {
  for (int s = 0; s < 6; ++s) {
    std::int32_t prev = requantize(-5000, s, 8, true);
    for (int acc = -4999; acc < 5000; ++acc) {
      const std::int32_t q = requantize(acc, s, 8, true);
      CHECK(q >= prev);
      prev = q;
    }
  }
  for (int v = 0; v < 256; ++v) CHECK(requantize(v, 0, 8, false) == v);
}

TEST_CASE("layer shape rules") {
  const LayerSpec c = conv2d(3, 8, 8, 8, 3, 1, 1, Activation::ReLU);
  CHECK(c.out_h() == 8);
  CHECK(c.mac_count() == 8ull * 8 * 8 * 3 * 3 * 3);
  const LayerSpec d = depthwise(5, 6, 6, 3, 1, 0, Activation::ReLU);
  CHECK(d.mac_count() == 5ull * 4 * 4 * 3 * 3);
  CHECK_THROWS_AS(conv2d(3, 8, 8, 8, 3, 2, 0, Activation::None).validate(), Error);
  LayerSpec bad = maxpool(4, 4, 4, 2, 2);
  bad.out_c = 3;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("1x1 conv on a 1x1 input is one mul and one add") {
  const LayerSpec L = conv2d(1, 1, 1, 1, 1, 1, 0, Activation::None);
  LayerParams p;
  p.weights = {-7};
  p.bias = {100};
  const std::vector<std::int32_t> in = {9};
  sim::ExecutionReport rep;
  const auto out = execute(gen_conv2d_baseline(L, p, {true, 8}, in), &rep);
  CHECK(out == std::vector<std::int32_t>{-7 * 9 + 100});
  CHECK(rep.totals.class_cycles[sim::class_index(isa::InstrClass::Mul)] == 1);
  CHECK(rep.mac_count == 1);
}

TEST_CASE("dense 4-in/1-out at w8a8 issues exactly one nn_mac") {
  const LayerSpec L = dense(4, 1, 1, 1, Activation::ReLU);
  LayerParams p;
  p.weights = {1, -2, 3, -4};
  p.bias = {5};
  const std::vector<std::int32_t> in = {10, 20, 30, 40};
  sim::ExecutionReport rep;
  const auto out = execute(gen_conv2d_packed(L, p, {8, 8}, {false, 8}, in), &rep);
  CHECK(rep.totals.nn_macs == 1);
  CHECK(out == reference_layer(L, p, {false, 8}, in));
}

TEST_CASE("dense 16-in/1-out at w2a8 issues four nn_mac") {
  const LayerSpec L = dense(16, 1, 1, 1, Activation::None);
  std::mt19937 rng(5);
  const LayerParams p = random_params(rng, L, 2, false);
  const auto in = random_tensor(rng, 16, 8);
  sim::ExecutionReport rep;
  const auto out = execute(gen_dense(L, p, Variant::Packed, {2, 8}, {true, 8}, in), &rep);
  CHECK(rep.totals.nn_macs == 4);
  CHECK(out == reference_layer(L, p, {true, 8}, in));
}

TEST_CASE("known 2x2 max-pool") {
  const LayerSpec L = maxpool(1, 4, 4, 2, 2);
  const std::vector<std::int32_t> in = {1, 5, 2, 0,  //
                                        3, 4, 7, 6,  //
                                        0, 0, 9, 8,  //
                                        2, 1, 8, 15};
  const std::vector<std::int32_t> expect = {5, 7, 2, 15};
  for (const auto& cfg : {isa::PrecisionConfig{8, 8}, isa::PrecisionConfig{8, 4}}) {
    CHECK(execute(gen_pool(L, Variant::Baseline, cfg, in)) == expect);
    CHECK(execute(gen_pool(L, Variant::Packed, cfg, in)) == expect);
  }
}

TEST_CASE("residual add of x and zero returns x") {
  const LayerSpec L = residual(5, 3, 3, Activation::ReLU);
  std::mt19937 rng(9);
  const auto x = random_tensor(rng, L.input_size(), 8);
  const std::vector<std::int32_t> zero(L.input_size(), 0);
  for (Variant v : {Variant::Baseline, Variant::Packed})
    CHECK(execute(gen_residual(L, {}, v, {8, 8}, {false, 8}, x, zero)) == x);
}

TEST_CASE("packed and baseline streams agree with the host reference for every kind and config") {
  std::mt19937 rng(11);
  const LayerKind kinds[] = {LayerKind::Conv2d, LayerKind::DepthwiseConv2d, LayerKind::Dense,
                             LayerKind::MaxPool, LayerKind::AvgPool, LayerKind::ResidualAdd};
  for (LayerKind kind : kinds) {
    for (const auto& cfg : isa::all_configs()) {
      for (int trial = 0; trial < 3; ++trial) {
        const LayerSpec L = random_layer(rng, kind);
        const LayerParams p = random_params(rng, L, cfg.weight_bits, true);
        const auto in = random_tensor(rng, L.input_size(), cfg.activation_bits);
        const auto rhs = random_tensor(rng, L.input_size(), cfg.activation_bits);
        const bool pool = kind == LayerKind::MaxPool || kind == LayerKind::AvgPool;
        const bool raw = !pool && rng() % 4 == 0;
        const Epilogue epi{raw, pool ? cfg.activation_bits : static_cast<int>(2u << (rng() % 3))};
        const int out_bits = epi.out_bits == 16 ? 8 : epi.out_bits;
        const Epilogue e{raw, out_bits};
        const auto expect = reference_layer(L, p, e, in, rhs);
        const auto base = execute(build_layer_program(L, p, Variant::Baseline, cfg, e, in, rhs));
        const auto packed = execute(build_layer_program(L, p, Variant::Packed, cfg, e, in, rhs));
        INFO(to_string(kind), " ", cfg.name(), " trial ", trial);
        CHECK(base == expect);
        CHECK(packed == expect);
      }
    }
  }
}

TEST_CASE("weight loads of packed conv follow the lane count") {
  // 32 input channels, 1x1 spatial: one output pixel, no padding lanes.
  const LayerSpec L = dense(32, 1, 1, 8, Activation::ReLU);
  std::mt19937 rng(2);
  std::uint64_t prev = 0;
  for (int wb : {2, 4, 8}) {
    const isa::PrecisionConfig cfg{wb, 8};
    const LayerParams p = random_params(rng, L, wb, false);
    const auto in = random_tensor(rng, L.input_size(), 8);
    sim::ExecutionReport rep;
    execute(gen_conv2d_packed(L, p, cfg, {false, 8}, in), &rep);
    const std::uint64_t lanes = static_cast<std::uint64_t>(L.weight_count());
    CHECK(rep.totals.weight_loads == (lanes + cfg.weight_lanes() - 1) / cfg.weight_lanes());
    if (prev) CHECK(rep.totals.weight_loads > prev);
    prev = rep.totals.weight_loads;
  }
}

TEST_CASE("depthwise gets less input reuse than standard conv") {
  std::mt19937 rng(4);
  const LayerSpec conv = conv2d(16, 16, 8, 8, 3, 1, 1, Activation::ReLU);
  const LayerSpec dw = depthwise(16, 8, 8, 3, 1, 1, Activation::ReLU);
  for (const auto& cfg : isa::all_configs()) {
    auto ratio = [&](const LayerSpec& L) {
      const LayerParams p = random_params(rng, L, cfg.weight_bits, false);
      const auto in = random_tensor(rng, L.input_size(), cfg.activation_bits);
      sim::ExecutionReport b, k;
      execute(build_layer_program(L, p, Variant::Baseline, cfg, {false, 8}, in), &b);
      execute(build_layer_program(L, p, Variant::Packed, cfg, {false, 8}, in), &k);
      return static_cast<double>(b.totals.activation_loads) / k.totals.activation_loads;
    };
    CHECK_MESSAGE(ratio(dw) < ratio(conv), cfg.name());
  }
}

TEST_CASE("pruned channels cost no packed work and keep the nominal MAC count") {
  std::mt19937 rng(8);
  const LayerSpec L = conv2d(8, 8, 6, 6, 3, 1, 1, Activation::ReLU);
  LayerParams p = random_params(rng, L, 8, false);
  const auto in = random_tensor(rng, L.input_size(), 8);
  sim::ExecutionReport full, half;
  execute(gen_conv2d_packed(L, p, {8, 8}, {false, 8}, in), &full);
  p.pruned.assign(8, 0);
  const std::size_t per = L.weight_count() / 8;
  for (int c : {1, 3, 4, 6}) {
    p.pruned[c] = 1;
    p.bias[c] = 0;
    for (std::size_t i = 0; i < per; ++i) p.weights[c * per + i] = 0;
  }
  execute(gen_conv2d_packed(L, p, {8, 8}, {false, 8}, in), &half);
  CHECK(half.mac_count == full.mac_count);
  CHECK(half.effective_mac_count * 2 == full.effective_mac_count);
  CHECK(half.totals.nn_macs * 2 == full.totals.nn_macs);
  CHECK(half.total_cycles < full.total_cycles);
}

TEST_CASE("pruned channel with nonzero weights is rejected") {
  const LayerSpec L = dense(4, 1, 1, 2, Activation::None);
  LayerParams p;
  p.weights = {1, 1, 1, 1, 1, 1, 1, 1};
  p.bias = {0, 0};
  p.pruned = {1, 0};
  CHECK_THROWS_AS(build_weight_image(L, p, Variant::Packed, {8, 8}), Error);
}

TEST_CASE("tensor encode/decode round-trip") {
  std::mt19937 rng(6);
  for (int bits : {2, 4, 8, 32}) {
    TensorLayout t;
    t.variant = Variant::Packed;
    t.c = 7;
    t.h = 3;
    t.w = 4;
    t.pad = 1;
    t.bits = bits;
    t.words_per_pixel = (7 + t.lanes() - 1) / t.lanes();
    const auto v = random_tensor(rng, 7 * 12, bits == 32 ? 8 : bits);
    const auto words = encode_tensor(t, v);
    CHECK(words.size() == t.word_count());
    CHECK(decode_tensor(t, words) == v);
  }
  TensorLayout t;
  t.variant = Variant::Packed;
  t.bits = 2;
  const std::vector<std::int32_t> too_big = {4};
  CHECK_THROWS_AS(encode_tensor(t, too_big), Error);
}

TEST_CASE("single-channel conv in row lanes matches the host reference") {
  std::mt19937 rng(17);
  for (const auto& cfg : isa::all_configs()) {
    for (int trial = 0; trial < 6; ++trial) {
      const int k = 2 + static_cast<int>(rng() % 3);
      const int h = k + static_cast<int>(rng() % 6), w = k + static_cast<int>(rng() % 6);
      const int pad = static_cast<int>(rng() % k);
      const bool even = (h + 2 * pad - k) % 2 == 0 && (w + 2 * pad - k) % 2 == 0;
      const int stride = even && rng() % 2 ? 2 : 1;
      const LayerSpec L = conv2d(1, 1 + static_cast<int>(rng() % 9), h, w, k, stride, pad, Activation::ReLU);
      REQUIRE(row_lane_eligible(L, cfg));
      const LayerParams p = random_params(rng, L, cfg.weight_bits, true);
      const auto in = random_tensor(rng, L.input_size(), cfg.activation_bits);
      const Epilogue e{trial % 3 == 0, cfg.activation_bits};
      const auto lp = build_layer_program(L, p, Variant::Packed, cfg, e, in);
      CHECK(lp.binding.in.row_lanes);
      INFO(cfg.name(), " trial ", trial);
      CHECK(execute(lp) == reference_layer(L, p, e, in));
    }
  }
  CHECK_FALSE(row_lane_eligible(conv2d(2, 4, 6, 6, 3, 1, 1, Activation::None), {8, 8}));
  CHECK_FALSE(row_lane_eligible(conv2d(1, 4, 6, 6, 5, 1, 1, Activation::None), {8, 8}));
  CHECK(row_lane_eligible(conv2d(1, 4, 6, 6, 5, 1, 1, Activation::None), {4, 4}));
}

TEST_CASE("row-lane tensors hold each pixel's right-hand neighbours") {
  TensorLayout t;
  t.variant = Variant::Packed;
  t.c = 1;
  t.h = 1;
  t.w = 5;
  t.pad = 1;
  t.bits = 8;
  t.row_lanes = true;
  const std::vector<std::int32_t> v = {1, 2, 3, 4, 5};
  const auto words = encode_tensor(t, v);
  REQUIRE(words.size() == 3 * 7);
  // Padded row 1 is 0,1,2,3,4,5,0.
  CHECK(words[7] == 0x03020100u);
  CHECK(words[8] == 0x04030201u);
  CHECK(words[12] == 0x00000005u);
  CHECK(decode_tensor(t, words) == v);
  t.c = 2;
  CHECK_THROWS_AS(encode_tensor(t, std::vector<std::int32_t>(10, 0)), Error);
}
