#include "marvin/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <numeric>

#include "marvin/datapath.hpp"
#include "marvin/error.hpp"
#include "marvin/fileio.hpp"
#include "marvin/records.hpp"

namespace marvin::quant {

using kernels::LayerKind;
using kernels::TensorLayout;
using kernels::Variant;
using json = nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); }
[[noreturn]] void shape_error(const std::string& msg) { throw Error(ErrorCode::ShapeError, msg); }

double round_away(double v) { return v < 0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5); }

std::int32_t clamp_i32(double v) {
  return static_cast<std::int32_t>(std::clamp(v, -2147483648.0, 2147483647.0));
}

void check_width(int bits) {
  if (!PrecisionConfig::valid_width(bits))
    throw Error(ErrorCode::InvalidConfig, "lane width must be 2, 4 or 8, got " + std::to_string(bits));
}

}  // namespace

// Tensors

std::size_t QuantizedTensor::element_count() const {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return shape.empty() ? 0 : n;
}

std::vector<std::int32_t> QuantizedTensor::values() const {
  const std::size_t n = element_count();
  const int lanes = 32 / lane_width;
  std::vector<std::int32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t word = data[i / lanes];
    const std::uint32_t raw = (word >> ((i % lanes) * lane_width)) & ((1u << lane_width) - 1);
    const bool neg = is_signed && (raw >> (lane_width - 1)) != 0;
    out[i] = neg ? static_cast<std::int32_t>(raw) - (1 << lane_width) : static_cast<std::int32_t>(raw);
  }
  return out;
}

std::vector<double> QuantizedTensor::dequantize() const {
  const auto v = values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::ldexp(static_cast<double>(v[i]), scale_exp);
  return out;
}

int weight_exponent(std::span<const float> values, int bits) {
  check_width(bits);
  double hi = 0.0, lo = 0.0;
  for (float v : values) {
    hi = std::max(hi, static_cast<double>(v));
    lo = std::min(lo, static_cast<double>(v));
  }
  if (hi == 0.0 && lo == 0.0) return 0;
  const double qmax = (1 << (bits - 1)) - 1, qmin = -(1 << (bits - 1));
  for (int e = -kMaxScaleExp; e < kMaxScaleExp; ++e)
    if (hi / std::ldexp(1.0, e) < qmax + 0.5 && lo / std::ldexp(1.0, e) > qmin - 0.5) return e;
  return kMaxScaleExp;
}

QuantizedTensor quantize_tensor(std::span<const float> weights, std::vector<int> shape, int bits) {
  check_width(bits);
  QuantizedTensor t;
  t.shape = std::move(shape);
  t.lane_width = bits;
  if (t.element_count() != weights.size()) shape_error("tensor shape does not match the value count");
  t.scale_exp = weight_exponent(weights, bits);
  const double lo = -(1 << (bits - 1)), hi = (1 << (bits - 1)) - 1;
  const int lanes = 32 / bits;
  t.data.assign((weights.size() + lanes - 1) / lanes, 0);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double q = std::clamp(round_away(std::ldexp(static_cast<double>(weights[i]), -t.scale_exp)), lo, hi);
    const std::uint32_t lane = static_cast<std::uint32_t>(static_cast<std::int32_t>(q)) & ((1u << bits) - 1);
    t.data[i / lanes] |= lane << ((i % lanes) * bits);
  }
  return t;
}

QuantizedTensor quantize_layer(std::span<const float> weights, std::vector<int> shape, const PrecisionConfig& cfg) {
  if (!cfg.valid()) throw Error(ErrorCode::InvalidConfig, "invalid precision config");
  return quantize_tensor(weights, std::move(shape), cfg.weight_bits);
}

// Calibration and pruning

ActivationRanges calibrate(const FloatNetwork& net, const Dataset& sample) {
  if (sample.size() == 0) throw Error(ErrorCode::EmptySample, "calibration sample is empty");
  net.validate();
  ActivationRanges r;
  r.layers.assign(net.layers.size(), 0.0);
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const auto x = net::input_tensor(sample.image(i));
    for (float v : x) r.input = std::max(r.input, static_cast<double>(std::fabs(v)));
    const auto acts = net::float_forward_all(net, x);
    for (std::size_t l = 0; l < acts.size(); ++l)
      for (float v : acts[l]) r.layers[l] = std::max(r.layers[l], static_cast<double>(std::fabs(v)));
  }
  return r;
}

int activation_exponent(double range, int bits) {
  if (!(range > 0.0)) return kMaxScaleExp;
  const double qmax = (1 << bits) - 1;
  for (int e = -kMaxScaleExp; e < kMaxScaleExp; ++e)
    if (range / std::ldexp(1.0, e) < qmax + 0.5) return e;
  return kMaxScaleExp;
}

PruneResult prune_structured(std::span<const float> weights, int out_channels, double p, double p_max) {
  if (!(p_max >= 0.0 && p_max <= 1.0) || !(p >= 0.0 && p <= p_max + 1e-12))
    throw Error(ErrorCode::InvalidRate, "pruning rate " + std::to_string(p) + " outside [0, " +
                                            std::to_string(p_max) + "]");
  if (out_channels < 1 || weights.size() % static_cast<std::size_t>(out_channels) != 0)
    shape_error("weights do not split into output channels");
  PruneResult r;
  r.weights.assign(weights.begin(), weights.end());
  const int n = static_cast<int>(std::floor(p * out_channels + 1e-9));
  if (n == 0) return r;
  const std::size_t per = weights.size() / static_cast<std::size_t>(out_channels);
  std::vector<double> norm(static_cast<std::size_t>(out_channels), 0.0);
  for (int c = 0; c < out_channels; ++c)
    for (std::size_t i = 0; i < per; ++i) norm[c] += std::fabs(weights[c * per + i]);
  std::vector<int> order(static_cast<std::size_t>(out_channels));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return norm[a] < norm[b]; });
  r.mask.assign(static_cast<std::size_t>(out_channels), 0);
  for (int k = 0; k < n; ++k) {
    const int c = order[static_cast<std::size_t>(k)];
    r.mask[c] = 1;
    std::fill_n(r.weights.begin() + static_cast<std::ptrdiff_t>(c * per), per, 0.0f);
  }
  return r;
}

// Networks

std::vector<int> QuantizedNetwork::weighted_layers() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].spec.has_weights()) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<LayerQuantConfig> QuantizedNetwork::configs() const {
  std::vector<LayerQuantConfig> out;
  for (int i : weighted_layers()) {
    const QuantizedLayer& L = layers[static_cast<std::size_t>(i)];
    out.push_back({L.cfg, L.weight_exp, L.out_exp, L.pruning_rate});
  }
  return out;
}

std::uint64_t QuantizedNetwork::mac_count() const {
  std::uint64_t n = 0;
  for (const auto& L : layers) n += L.spec.mac_count();
  return n;
}

PreparedNetwork prepare(const FloatNetwork& net, std::span<const double> rates, const Dataset& calibration,
                        double p_max) {
  net.validate();
  const auto weighted = net.weighted_layers();
  if (rates.size() != weighted.size()) config_error("need one pruning rate per weighted layer");
  PreparedNetwork out;
  out.net = net;
  out.masks.assign(net.layers.size(), {});
  out.rates.assign(rates.begin(), rates.end());
  for (std::size_t k = 0; k < weighted.size(); ++k) {
    auto& L = out.net.layers[static_cast<std::size_t>(weighted[k])];
    auto pr = prune_structured(L.weights, L.spec.out_c, rates[k], p_max);
    L.weights = std::move(pr.weights);
    for (std::size_t c = 0; c < pr.mask.size(); ++c)
      if (pr.mask[c]) L.bias[c] = 0.0f;
    out.masks[static_cast<std::size_t>(weighted[k])] = std::move(pr.mask);
  }
  out.ranges = calibrate(out.net, calibration);
  return out;
}

QuantizedNetwork quantize_network(const PreparedNetwork& prep, std::span<const PrecisionConfig> cfgs) {
  const FloatNetwork& net = prep.net;
  const auto weighted = net.weighted_layers();
  if (cfgs.size() != weighted.size()) config_error("need one precision config per weighted layer");
  for (const auto& c : cfgs)
    if (!c.valid()) config_error("invalid precision config " + c.name());
  if (!net.layers.back().spec.has_weights()) config_error("the last layer must carry weights (logits)");
  const int n = static_cast<int>(net.layers.size());

  std::vector<PrecisionConfig> layer_cfg(net.layers.size(), PrecisionConfig{8, 8});
  for (std::size_t k = 0; k < weighted.size(); ++k) layer_cfg[static_cast<std::size_t>(weighted[k])] = cfgs[k];

  // Lane width of every tensor, decided by its natural consumer (index -1 = input).
  std::vector<int> bits(static_cast<std::size_t>(n) + 1);
  auto tbits = [&](int t) -> int& { return bits[static_cast<std::size_t>(t + 1)]; };
  tbits(n - 1) = 32;
  for (int t = n - 2; t >= -1; --t) {
    const auto& consumer = net.layers[static_cast<std::size_t>(t + 1)];
    tbits(t) = consumer.spec.has_weights() ? layer_cfg[static_cast<std::size_t>(t + 1)].activation_bits
                                           : tbits(t + 1);
  }

  QuantizedNetwork qn;
  qn.name = net.name;
  qn.in_c = net.in_c;
  qn.in_h = net.in_h;
  qn.in_w = net.in_w;
  qn.input_bits = tbits(-1);
  qn.input_exp = -qn.input_bits;
  std::vector<int> exps(static_cast<std::size_t>(n) + 1);
  auto texp = [&](int t) -> int& { return exps[static_cast<std::size_t>(t + 1)]; };
  texp(-1) = qn.input_exp;

  std::size_t wk = 0;
  for (int i = 0; i < n; ++i) {
    const auto& F = net.layers[static_cast<std::size_t>(i)];
    QuantizedLayer Q;
    Q.spec = F.spec;
    Q.rhs_from = F.rhs_from;
    Q.in_bits = tbits(i - 1);
    Q.out_bits = tbits(i);
    Q.in_exp = texp(i - 1);
    Q.cfg = PrecisionConfig{8, Q.in_bits == 32 ? 8 : Q.in_bits};
    const double range = prep.ranges.layers[static_cast<std::size_t>(i)];
    auto finish_shift = [&](int acc_exp) {
      if (Q.raw()) {
        Q.out_exp = acc_exp;
        Q.params.shift = 0;
        return;
      }
      const int trim = prep.trim.empty() ? 0 : prep.trim[static_cast<std::size_t>(i)];
      const int shift = std::clamp(activation_exponent(range, Q.out_bits) - trim - acc_exp, 0, 31);
      Q.params.shift = shift;
      Q.out_exp = acc_exp + shift;
    };

    if (F.spec.has_weights()) {
      Q.cfg = layer_cfg[static_cast<std::size_t>(i)];
      Q.pruning_rate = prep.rates[wk++];
      const QuantizedTensor w = quantize_tensor(F.weights, {static_cast<int>(F.weights.size())}, Q.cfg.weight_bits);
      Q.weight_exp = w.scale_exp;
      Q.params.weights = w.values();
      const int acc_exp = Q.weight_exp + Q.in_exp;
      Q.params.bias.resize(F.bias.size());
      for (std::size_t c = 0; c < F.bias.size(); ++c)
        Q.params.bias[c] = clamp_i32(round_away(std::ldexp(static_cast<double>(F.bias[c]), -acc_exp)));
      Q.params.pruned = prep.masks[static_cast<std::size_t>(i)];
      finish_shift(acc_exp);
    } else if (F.spec.kind == LayerKind::ResidualAdd) {
      Q.rhs_bits = tbits(F.rhs_from);
      Q.rhs_exp = texp(F.rhs_from);
      const int base = std::min(Q.in_exp, Q.rhs_exp);
      Q.params.lhs_shift = std::min(Q.in_exp - base, 31);
      Q.params.rhs_shift = std::min(Q.rhs_exp - base, 31);
      finish_shift(base);
    } else {
      // Pools keep scale and width.
      Q.out_exp = Q.in_exp;
    }
    texp(i) = Q.out_exp;
    qn.layers.push_back(std::move(Q));
  }
  return qn;
}

void refine_shifts(PreparedNetwork& prep, std::span<const PrecisionConfig> cfgs, const Dataset& calibration,
                   int max_trim) {
  if (calibration.size() == 0) throw Error(ErrorCode::EmptySample, "shift calibration needs samples");
  if (max_trim < 0) config_error("max_trim must be non-negative");
  const std::size_t n = prep.net.layers.size();
  if (prep.trim.size() != n) prep.trim.assign(n, 0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const auto kind = prep.net.layers[i].spec.kind;
    if (!prep.net.layers[i].spec.has_weights() && kind != LayerKind::ResidualAdd) continue;
    int best = prep.trim[i];
    double best_acc = -1.0;
    for (int t = 0; t <= max_trim; ++t) {
      prep.trim[i] = t;
      const double acc = quantized_accuracy(quantize_network(prep, cfgs), calibration);
      if (acc > best_acc) {
        best_acc = acc;
        best = t;
      }
    }
    prep.trim[i] = best;
  }
}

QuantizedNetwork quantize_network(const FloatNetwork& net, std::span<const LayerQuantConfig> configs,
                                  const Dataset& calibration) {
  std::vector<double> rates;
  std::vector<PrecisionConfig> cfgs;
  for (const auto& c : configs) {
    rates.push_back(c.pruning_rate);
    cfgs.push_back(c.cfg);
  }
  return quantize_network(prepare(net, rates, calibration), cfgs);
}

std::vector<LayerQuantConfig> uniform_configs(const FloatNetwork& net, const PrecisionConfig& cfg, double rate) {
  LayerQuantConfig c;
  c.cfg = cfg;
  c.pruning_rate = rate;
  return std::vector<LayerQuantConfig>(net.weighted_layers().size(), c);
}

std::vector<std::int32_t> quantize_input(const QuantizedNetwork& qn, std::span<const std::uint8_t> pixels) {
  if (pixels.size() != qn.input_size()) shape_error("input image has the wrong size");
  const int drop = 8 - qn.input_bits;
  const std::int32_t hi = (1 << qn.input_bits) - 1;
  std::vector<std::int32_t> q(pixels.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const std::int32_t p = pixels[i];
    q[i] = drop == 0 ? p : std::min(hi, (p + (1 << (drop - 1))) >> drop);
  }
  return q;
}

std::vector<std::int32_t> quantized_forward(const QuantizedNetwork& qn, std::span<const std::int32_t> input) {
  if (input.size() != qn.input_size()) shape_error("input has the wrong size");
  std::vector<std::vector<std::int32_t>> acts(qn.layers.size());
  for (std::size_t i = 0; i < qn.layers.size(); ++i) {
    const QuantizedLayer& L = qn.layers[i];
    std::span<const std::int32_t> in = i == 0 ? input : std::span<const std::int32_t>(acts[i - 1]);
    std::span<const std::int32_t> rhs;
    if (L.spec.kind == LayerKind::ResidualAdd)
      rhs = L.rhs_from < 0 ? input : std::span<const std::int32_t>(acts[static_cast<std::size_t>(L.rhs_from)]);
    const bool pool = L.spec.kind == LayerKind::MaxPool || L.spec.kind == LayerKind::AvgPool;
    const kernels::Epilogue epi = pool ? kernels::Epilogue{false, L.in_bits} : L.epilogue();
    acts[i] = kernels::reference_layer(L.spec, L.params, epi, in, rhs);
  }
  return std::move(acts.back());
}

double quantized_accuracy(const QuantizedNetwork& qn, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto logits = quantized_forward(qn, quantize_input(qn, data.image(i)));
    if (net::argmax(std::span<const std::int32_t>(logits)) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// Whole-network programs

namespace {

std::uint32_t align16(std::uint64_t v) {
  const std::uint64_t a = (v + 15) & ~std::uint64_t{15};
  if (a > 0xFFFFFFF0ull) shape_error("network does not fit the 32-bit address space");
  return static_cast<std::uint32_t>(a);
}

}  // namespace

NetworkProgram build_network_program(const QuantizedNetwork& qn, Variant variant) {
  const int n = static_cast<int>(qn.layers.size());
  if (n == 0) shape_error("network has no layers");
  const bool packed = variant == Variant::Packed;

  // Tensor t (-1 = input) layouts: border and words sized for every consumer.
  std::vector<TensorLayout> t(static_cast<std::size_t>(n) + 1);
  auto T = [&](int k) -> TensorLayout& { return t[static_cast<std::size_t>(k + 1)]; };
  for (int k = -1; k < n; ++k) {
    TensorLayout& L = T(k);
    L.variant = variant;
    if (k < 0) {
      L.c = qn.in_c;
      L.h = qn.in_h;
      L.w = qn.in_w;
    } else {
      const auto& s = qn.layers[static_cast<std::size_t>(k)].spec;
      L.c = s.out_c;
      L.h = s.out_h();
      L.w = s.out_w();
    }
    L.bits = packed ? (k < 0 ? qn.input_bits : qn.layers[static_cast<std::size_t>(k)].out_bits) : 32;
    L.words_per_pixel = packed ? (L.c + L.lanes() - 1) / L.lanes() : 1;
  }
  for (int i = 0; i < n; ++i) {
    const QuantizedLayer& Q = qn.layers[static_cast<std::size_t>(i)];
    TensorLayout& in = T(i - 1);
    in.pad = std::max(in.pad, Q.spec.pad);
    if (packed && in.bits != 32)
      in.words_per_pixel = std::max(in.words_per_pixel, kernels::packed_input_words(Q.spec, Q.cfg, in.bits));
  }
  // The host writes the input, so a single-channel first conv can read it in row lanes.
  bool input_row_lanes = packed && kernels::row_lane_eligible(qn.layers[0].spec, qn.layers[0].cfg);
  for (const auto& Q : qn.layers)
    if (Q.spec.kind == LayerKind::ResidualAdd && Q.rhs_from < 0) input_row_lanes = false;
  if (input_row_lanes) {
    T(-1).row_lanes = true;
    T(-1).words_per_pixel = 1;
  }

  NetworkProgram np;
  np.variant = variant;
  sim::Program& prog = np.program;
  std::uint64_t cursor = 0;
  std::vector<kernels::LayerBinding> binds(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const QuantizedLayer& Q = qn.layers[static_cast<std::size_t>(i)];
    if (!Q.spec.has_weights()) continue;
    const auto img = kernels::build_weight_image(Q.spec, Q.params, variant, Q.cfg, i == 0 && input_row_lanes);
    auto& bd = binds[static_cast<std::size_t>(i)];
    bd.weight_addr = static_cast<std::uint32_t>(cursor);
    prog.data.push_back({bd.weight_addr, img.weights});
    cursor = align16(cursor + img.weights.size() * 4);
    bd.bias_addr = static_cast<std::uint32_t>(cursor);
    prog.data.push_back({bd.bias_addr, img.bias});
    cursor = align16(cursor + img.bias.size() * 4);
  }
  for (auto& L : t) {
    L.base = static_cast<std::uint32_t>(cursor);
    cursor = align16(cursor + L.byte_size());
  }
  prog.memory_size = static_cast<std::uint32_t>(cursor);

  sim::Builder b;
  for (int i = 0; i < n; ++i) {
    const QuantizedLayer& Q = qn.layers[static_cast<std::size_t>(i)];
    auto& bd = binds[static_cast<std::size_t>(i)];
    bd.in = T(i - 1);
    bd.out = T(i);
    if (Q.spec.kind == LayerKind::ResidualAdd) bd.rhs = T(Q.rhs_from);
    const bool pool = Q.spec.kind == LayerKind::MaxPool || Q.spec.kind == LayerKind::AvgPool;
    const kernels::Epilogue epi = pool ? kernels::Epilogue{false, Q.in_bits} : Q.epilogue();
    const std::uint64_t macs = Q.spec.mac_count();
    std::uint64_t eff = macs;
    if (packed && Q.spec.has_weights())
      eff = macs / static_cast<std::uint64_t>(Q.spec.out_c) *
            static_cast<std::uint64_t>(Q.params.active_channels(Q.spec.out_c));
    b.begin_layer(std::to_string(i) + ":" + kernels::to_string(Q.spec.kind), i, macs, eff);
    kernels::emit_layer(b, Q.spec, Q.params, variant, Q.cfg, bd, epi);
    b.end_layer();
  }
  prog.code = b.finish();
  prog.layers = b.markers();
  prog.load_tags = b.load_tags();
  np.input = T(-1);
  np.output = T(n - 1);
  return np;
}

NetworkRun run_network(const NetworkProgram& np, std::span<const std::int32_t> input, const sim::CycleModel& model) {
  sim::MachineState st = sim::initial_state(np.program);
  st.memory.write_words(np.input.base, kernels::encode_tensor(np.input, input));
  NetworkRun r;
  r.report = sim::run(np.program, st, model);
  r.logits = kernels::decode_tensor(np.output, st.memory.read_words(np.output.base, np.output.word_count()));
  return r;
}

// Files

std::vector<TensorRecord> weight_records(const QuantizedNetwork& qn) {
  std::vector<TensorRecord> recs;
  for (std::size_t i = 0; i < qn.layers.size(); ++i) {
    const QuantizedLayer& Q = qn.layers[i];
    if (!Q.spec.has_weights()) continue;
    const int bits = Q.cfg.weight_bits;
    const int lanes = 32 / bits;
    TensorRecord w;
    w.layer = static_cast<std::uint32_t>(i);
    w.type = TensorRecord::PackedInt;
    w.lane_width = static_cast<std::uint8_t>(bits);
    w.scale_shift = static_cast<std::int8_t>(Q.weight_exp);
    w.shape = {static_cast<std::uint32_t>(Q.params.weights.size())};
    w.words.assign((Q.params.weights.size() + lanes - 1) / lanes, 0);
    for (std::size_t k = 0; k < Q.params.weights.size(); ++k)
      w.words[k / lanes] |= (static_cast<std::uint32_t>(Q.params.weights[k]) & ((1u << bits) - 1))
                            << ((k % lanes) * bits);
    TensorRecord b;
    b.layer = w.layer;
    b.role = TensorRecord::Bias;
    b.type = TensorRecord::Int32;
    b.scale_shift = static_cast<std::int8_t>(Q.weight_exp + Q.in_exp);
    b.shape = {static_cast<std::uint32_t>(Q.params.bias.size())};
    for (auto v : Q.params.bias) b.words.push_back(static_cast<std::uint32_t>(v));
    recs.push_back(std::move(w));
    recs.push_back(std::move(b));
  }
  return recs;
}

namespace {

[[noreturn]] void manifest_error(const std::string& msg) { throw Error(ErrorCode::ManifestError, msg); }

net::FloatNetwork skeleton(const QuantizedNetwork& qn) {
  net::FloatNetwork f;
  f.name = qn.name;
  f.in_c = qn.in_c;
  f.in_h = qn.in_h;
  f.in_w = qn.in_w;
  for (const auto& Q : qn.layers) {
    net::FloatLayer L;
    L.spec = Q.spec;
    L.rhs_from = Q.rhs_from;
    L.weights.assign(Q.spec.weight_count(), 0.0f);
    L.bias.assign(Q.spec.has_weights() ? static_cast<std::size_t>(Q.spec.out_c) : 0, 0.0f);
    f.layers.push_back(std::move(L));
  }
  return f;
}

}  // namespace

void save_quantized_network(const QuantizedNetwork& qn, const std::filesystem::path& stem) {
  json layers = json::array();
  for (const auto& Q : qn.layers) {
    json pruned = json::array();
    for (auto m : Q.params.pruned) pruned.push_back(static_cast<int>(m));
    layers.push_back({{"config", Q.cfg.name()},
                      {"pruning_rate", Q.pruning_rate},
                      {"pruned", pruned},
                      {"in_bits", Q.in_bits},
                      {"rhs_bits", Q.rhs_bits},
                      {"out_bits", Q.out_bits},
                      {"weight_exp", Q.weight_exp},
                      {"in_exp", Q.in_exp},
                      {"rhs_exp", Q.rhs_exp},
                      {"out_exp", Q.out_exp},
                      {"shift", Q.params.shift},
                      {"lhs_shift", Q.params.lhs_shift},
                      {"rhs_shift", Q.params.rhs_shift}});
  }
  json top = {{"format", "marvin-quantized"},
              {"version", 1},
              {"network", json::parse(net::topology_json(skeleton(qn)))},
              {"input_bits", qn.input_bits},
              {"input_exp", qn.input_exp},
              {"layers", std::move(layers)}};
  write_file_atomic(std::filesystem::path(stem).concat(".json"), top.dump(2) + "\n");
  write_records(weight_records(qn), std::filesystem::path(stem).concat(".mrvw"));
}

QuantizedNetwork load_quantized_network(const std::filesystem::path& stem) {
  const auto json_path = std::filesystem::path(stem).concat(".json");
  json top;
  try {
    top = json::parse(read_file(json_path));
  } catch (const json::exception& e) {
    manifest_error(json_path.string() + ": " + e.what());
  }
  for (const auto& [key, _] : top.items())
    if (key != "format" && key != "version" && key != "network" && key != "input_bits" && key != "input_exp" &&
        key != "layers")
      manifest_error(json_path.string() + ": unknown key '" + key + "'");
  if (top.value("format", "") != "marvin-quantized" || top.value("version", 0) != 1)
    manifest_error(json_path.string() + ": not a version-1 marvin-quantized file");
  const net::FloatNetwork f = net::topology_from_json(top["network"].dump());
  QuantizedNetwork qn;
  qn.name = f.name;
  qn.in_c = f.in_c;
  qn.in_h = f.in_h;
  qn.in_w = f.in_w;
  try {
    qn.input_bits = top.at("input_bits").get<int>();
    qn.input_exp = top.at("input_exp").get<int>();
    const json& layers = top.at("layers");
    if (!layers.is_array() || layers.size() != f.layers.size()) manifest_error("layer count mismatch");
    for (std::size_t i = 0; i < f.layers.size(); ++i) {
      const json& j = layers[i];
      QuantizedLayer Q;
      Q.spec = f.layers[i].spec;
      Q.rhs_from = f.layers[i].rhs_from;
      Q.cfg = PrecisionConfig::parse(j.at("config").get<std::string>());
      Q.pruning_rate = j.at("pruning_rate").get<double>();
      for (const auto& m : j.at("pruned")) Q.params.pruned.push_back(static_cast<std::uint8_t>(m.get<int>()));
      Q.in_bits = j.at("in_bits").get<int>();
      Q.rhs_bits = j.at("rhs_bits").get<int>();
      Q.out_bits = j.at("out_bits").get<int>();
      Q.weight_exp = j.at("weight_exp").get<int>();
      Q.in_exp = j.at("in_exp").get<int>();
      Q.rhs_exp = j.at("rhs_exp").get<int>();
      Q.out_exp = j.at("out_exp").get<int>();
      Q.params.shift = j.at("shift").get<int>();
      Q.params.lhs_shift = j.at("lhs_shift").get<int>();
      Q.params.rhs_shift = j.at("rhs_shift").get<int>();
      qn.layers.push_back(std::move(Q));
    }
  } catch (const json::exception& e) {
    manifest_error(json_path.string() + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ManifestError) throw;
    manifest_error(json_path.string() + ": " + e.what());
  }
  for (const auto& r : read_records(std::filesystem::path(stem).concat(".mrvw"))) {
    if (r.layer >= qn.layers.size() || !qn.layers[r.layer].spec.has_weights())
      throw Error(ErrorCode::ParseError, "weight record for a layer without weights");
    QuantizedLayer& Q = qn.layers[r.layer];
    if (r.role == TensorRecord::Weights) {
      if (r.type != TensorRecord::PackedInt || r.lane_width != Q.cfg.weight_bits || r.shape.size() != 1)
        throw Error(ErrorCode::ParseError, "weight record does not match the layer config");
      QuantizedTensor t;
      t.data = r.words;
      t.shape = {static_cast<int>(r.shape[0])};
      t.lane_width = r.lane_width;
      if (t.data.size() * static_cast<std::size_t>(32 / t.lane_width) < t.element_count())
        throw Error(ErrorCode::ParseError, "weight record too short");
      Q.params.weights = t.values();
    } else {
      Q.params.bias.clear();
      for (auto w : r.words) Q.params.bias.push_back(static_cast<std::int32_t>(w));
    }
  }
  for (const auto& Q : qn.layers)
    if (Q.spec.has_weights() &&
        (Q.params.weights.size() != Q.spec.weight_count() || Q.params.bias.size() != static_cast<std::size_t>(Q.spec.out_c)))
      throw Error(ErrorCode::ParseError, "missing weight records");
  return qn;
}

}  // namespace marvin::quant
