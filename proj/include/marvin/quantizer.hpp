#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "marvin/isa.hpp"
#include "marvin/kernels.hpp"
#include "marvin/network.hpp"
#include "marvin/records.hpp"
#include "marvin/simulator.hpp"

namespace marvin::quant {

using isa::PrecisionConfig;
using kernels::LayerSpec;
using net::Dataset;
using net::FloatNetwork;

/// Integer tensor with a power-of-two scale: real = lane * 2^scale_exp.
struct QuantizedTensor {
  /// Lanes packed lane 0 first, `32 / lane_width` per word.
  std::vector<std::uint32_t> data;
  std::vector<int> shape;
  int lane_width = 8;
  int scale_exp = 0;
  /// Signed lanes (weights) or unsigned (activations).
  bool is_signed = true;

  std::size_t element_count() const;
  std::vector<std::int32_t> values() const;
  std::vector<double> dequantize() const;
};

inline constexpr int kMaxScaleExp = 31;

/// Smallest exponent e such that every value rounds into the signed `bits`
/// range at scale 2^e. All-zero input gives 0.
int weight_exponent(std::span<const float> values, int bits);

/// Symmetric signed quantization of `weights` at `bits`, round half away
/// from zero. Throws InvalidConfig for widths other than 2/4/8.
QuantizedTensor quantize_tensor(std::span<const float> weights, std::vector<int> shape, int bits);
QuantizedTensor quantize_layer(std::span<const float> weights, std::vector<int> shape,
                               const PrecisionConfig& cfg);

/// Max-abs of the network input and of every layer output over a sample.
struct ActivationRanges {
  double input = 0.0;
  std::vector<double> layers;
};

/// Throws EmptySample.
ActivationRanges calibrate(const FloatNetwork& net, const Dataset& sample);

/// Unsigned exponent for activations whose max is `range` at `bits`; the
/// caller clamps. Returns kMaxScaleExp for a zero range.
int activation_exponent(double range, int bits);

struct PruneResult {
  std::vector<float> weights;
  /// One entry per output channel, 1 = pruned. Empty when nothing is pruned.
  std::vector<std::uint8_t> mask;
};

/// Zeroes the floor(p * out_channels) output channels of smallest L1 norm
/// (ties: lower index first). Throws InvalidRate unless 0 <= p <= p_max <= 1.
PruneResult prune_structured(std::span<const float> weights, int out_channels, double p, double p_max = 1.0);

/// Per weighted layer choices.
struct LayerQuantConfig {
  PrecisionConfig cfg{8, 8};
  /// Filled in by quantization.
  int weight_scale_shift = 0;
  int activation_scale_shift = 0;
  double pruning_rate = 0.0;

  friend bool operator==(const LayerQuantConfig&, const LayerQuantConfig&) = default;
};

struct QuantizedLayer {
  LayerSpec spec;
  kernels::LayerParams params;
  /// Packed kernel configuration. For layers without weights only
  /// activation_bits matters (it equals in_bits).
  PrecisionConfig cfg{8, 8};
  int rhs_from = -1;
  double pruning_rate = 0.0;
  int in_bits = 8;
  int rhs_bits = 8;
  /// 32 = raw int32 accumulator (final logits).
  int out_bits = 8;
  int weight_exp = 0;
  int in_exp = 0;
  int rhs_exp = 0;
  int out_exp = 0;

  bool raw() const { return out_bits == 32; }
  kernels::Epilogue epilogue() const { return {raw(), raw() ? 8 : out_bits}; }
};

struct QuantizedNetwork {
  std::string name;
  int in_c = 1;
  int in_h = 1;
  int in_w = 1;
  int input_bits = 8;
  int input_exp = -8;
  std::vector<QuantizedLayer> layers;

  std::size_t input_size() const { return static_cast<std::size_t>(in_c) * in_h * in_w; }
  std::vector<int> weighted_layers() const;
  /// The configuration vector this network was built from.
  std::vector<LayerQuantConfig> configs() const;
  std::uint64_t mac_count() const;
};

/// Float network after pruning, with activation ranges measured on it.
struct PreparedNetwork {
  FloatNetwork net;
  std::vector<std::vector<std::uint8_t>> masks;  // per layer
  std::vector<double> rates;                     // per weighted layer
  ActivationRanges ranges;
  /// Per layer: requantization targets a range 2^-trim times the measured one
  /// (saturating outliers). Empty means all zero.
  std::vector<int> trim;
};

/// `rates` has one entry per weighted layer.
PreparedNetwork prepare(const FloatNetwork& net, std::span<const double> rates, const Dataset& calibration,
                        double p_max = 1.0);

/// `cfgs` has one entry per weighted layer. The last layer must carry weights
/// and produces raw logits. Throws ShapeError / ConfigError.
QuantizedNetwork quantize_network(const PreparedNetwork& prepared, std::span<const PrecisionConfig> cfgs);
QuantizedNetwork quantize_network(const FloatNetwork& net, std::span<const LayerQuantConfig> configs,
                                  const Dataset& calibration);

/// Few-pass calibration of requantization shifts only: for each requantizing
/// layer in order, keeps the trim in [0, max_trim] with the best accuracy on
/// `calibration` (ties keep the smaller trim). Weights are untouched.
void refine_shifts(PreparedNetwork& prepared, std::span<const PrecisionConfig> cfgs, const Dataset& calibration,
                   int max_trim = 2);

/// The same configuration for every weighted layer.
std::vector<LayerQuantConfig> uniform_configs(const FloatNetwork& net, const PrecisionConfig& cfg,
                                              double rate = 0.0);

/// Quantized network input at the first layer's input width.
std::vector<std::int32_t> quantize_input(const QuantizedNetwork& qn, std::span<const std::uint8_t> pixels);

/// Integer inference on the host; bit-identical to the simulator streams.
/// Throws ShapeError.
std::vector<std::int32_t> quantized_forward(const QuantizedNetwork& qn, std::span<const std::int32_t> input);

double quantized_accuracy(const QuantizedNetwork& qn, const Dataset& data);

/// Whole-network instruction stream with every tensor at a fixed address.
struct NetworkProgram {
  sim::Program program;
  kernels::Variant variant = kernels::Variant::Packed;
  kernels::TensorLayout input;
  kernels::TensorLayout output;
};

NetworkProgram build_network_program(const QuantizedNetwork& qn, kernels::Variant variant);

struct NetworkRun {
  std::vector<std::int32_t> logits;
  sim::ExecutionReport report;
};

NetworkRun run_network(const NetworkProgram& np, std::span<const std::int32_t> input,
                       const sim::CycleModel& model = {});

/// Packed weight / int32 bias records for every weighted layer.
std::vector<TensorRecord> weight_records(const QuantizedNetwork& qn);

/// `<stem>.json` (topology + per-layer quantization) and `<stem>.mrvw`.
void save_quantized_network(const QuantizedNetwork& qn, const std::filesystem::path& stem);
QuantizedNetwork load_quantized_network(const std::filesystem::path& stem);

}  // namespace marvin::quant
