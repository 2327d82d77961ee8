#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "marvin/isa.hpp"
#include "marvin/program.hpp"
#include "marvin/simulator.hpp"

namespace marvin::kernels {

using isa::PrecisionConfig;

enum class LayerKind { Conv2d, DepthwiseConv2d, Dense, MaxPool, AvgPool, ResidualAdd };
enum class Activation { None, ReLU };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

/// Shape of one layer. Dense layers are convolutions whose kernel covers the
/// whole input plane; pools and residual adds keep the channel count.
struct LayerSpec {
  LayerKind kind = LayerKind::Conv2d;
  int in_c = 1;
  int out_c = 1;
  int in_h = 1;
  int in_w = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int pad = 0;
  Activation activation = Activation::None;

  int out_h() const { return (in_h + 2 * pad - kernel_h) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel_w) / stride + 1; }
  bool has_weights() const;
  std::size_t weight_count() const;
  std::size_t output_size() const { return static_cast<std::size_t>(out_c) * out_h() * out_w(); }
  std::size_t input_size() const { return static_cast<std::size_t>(in_c) * in_h * in_w; }
  /// Multiply-accumulates of the dense layer; 0 for pools and residual adds.
  std::uint64_t mac_count() const;
  /// Throws ShapeError.
  void validate() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

LayerSpec conv2d(int in_c, int out_c, int h, int w, int k, int stride, int pad, Activation act);
LayerSpec depthwise(int c, int h, int w, int k, int stride, int pad, Activation act);
LayerSpec dense(int in_c, int in_h, int in_w, int out_c, Activation act);
LayerSpec maxpool(int c, int h, int w, int k, int stride);
LayerSpec avgpool(int c, int h, int w, int k, int stride);
LayerSpec residual(int c, int h, int w, Activation act);

/// Integer operands of one layer.
struct LayerParams {
  /// Conv/dense: [co][ci][kh][kw]. Depthwise: [c][kh][kw].
  std::vector<std::int32_t> weights;
  /// One per output channel.
  std::vector<std::int32_t> bias;
  /// Per output channel, 1 = removed by structured pruning (weights and bias
  /// must then be zero). Empty means nothing pruned.
  std::vector<std::uint8_t> pruned;
  /// Requantization shift, [0, 31].
  int shift = 0;
  /// Residual adds: out = requantize((lhs << lhs_shift) + (rhs << rhs_shift)).
  int lhs_shift = 0;
  int rhs_shift = 0;

  bool is_pruned(int channel) const {
    return !pruned.empty() && pruned[static_cast<std::size_t>(channel)] != 0;
  }
  int active_channels(int out_c) const;
};

/// How the 32-bit accumulator leaves the kernel.
struct Epilogue {
  /// Store the raw int32 accumulator (final logits) instead of requantizing.
  bool raw = false;
  /// Unsigned output lane width after requantization.
  int out_bits = 8;
};

/// clamp(round_half_away_from_zero(acc / 2^shift), [0, 2^bits - 1]); ReLU
/// is applied before the clamp.
std::int32_t requantize(std::int32_t acc, int shift, int bits, bool relu);

/// Multiplier and rounding used by average pooling: (sum * M + 2^15) >> 16.
std::int32_t avgpool_multiplier(int window);

/// Host-side integer evaluation of one layer on CHW tensors. For pools the
/// output keeps the input lane width, so `epi` is ignored.
std::vector<std::int32_t> reference_layer(const LayerSpec& layer, const LayerParams& params,
                                          const Epilogue& epi, std::span<const std::int32_t> input,
                                          std::span<const std::int32_t> rhs = {});

enum class Variant { Baseline, Packed };

/// Memory image of one CHW tensor. Scalar: one int32 per element, CHW with a
/// zero border. Packed: per padded pixel, `words_per_pixel` words holding
/// channels in `bits`-wide unsigned lanes (bits == 32 stores signed int32,
/// one channel per word).
struct TensorLayout {
  Variant variant = Variant::Baseline;
  std::uint32_t base = 0;
  int c = 1;
  int h = 1;
  int w = 1;
  int pad = 0;
  int bits = 32;
  int words_per_pixel = 1;
  /// Packed single-channel tensors written by the host: lane j of pixel
  /// (y, x) holds the value at (y, x + j), so a kernel row is one word.
  bool row_lanes = false;

  int hp() const { return h + 2 * pad; }
  int wp() const { return w + 2 * pad; }
  int lanes() const { return 32 / bits; }
  std::size_t word_count() const;
  std::uint32_t byte_size() const { return static_cast<std::uint32_t>(word_count() * 4); }
  /// Address of element (ch, y, x) of a scalar tensor, padded coordinates.
  std::uint32_t scalar_addr(int ch, int y, int x) const;
  /// Address of the first word of pixel (y, x) of a packed tensor, padded coordinates.
  std::uint32_t pixel_addr(int y, int x) const;
};

/// Words of the full buffer (border included). Throws LaneOverflow.
std::vector<std::uint32_t> encode_tensor(const TensorLayout& layout, std::span<const std::int32_t> chw);
/// CHW values of the interior.
std::vector<std::int32_t> decode_tensor(const TensorLayout& layout, std::span<const std::uint32_t> words);

/// Smallest words_per_pixel the packed kernel of `layer` needs on its input
/// tensor stored at `in_bits`.
int packed_input_words(const LayerSpec& layer, const PrecisionConfig& cfg, int in_bits);

/// True when a packed conv over a host-written single-channel input can take
/// whole kernel rows per nn_mac (row-lane input layout).
bool row_lane_eligible(const LayerSpec& layer, const PrecisionConfig& cfg);

struct WeightImage {
  std::vector<std::uint32_t> weights;
  std::vector<std::uint32_t> bias;
};

/// Weight/bias memory image expected by emit_layer. Throws LaneOverflow when a
/// weight does not fit cfg.weight_bits (packed variant).
WeightImage build_weight_image(const LayerSpec& layer, const LayerParams& params, Variant variant,
                               const PrecisionConfig& cfg, bool row_lanes = false);

struct LayerBinding {
  TensorLayout in;
  TensorLayout rhs;  // residual adds only
  TensorLayout out;
  std::uint32_t weight_addr = 0;
  std::uint32_t bias_addr = 0;
};

/// Appends the instruction stream of one layer. Inputs must already sit in
/// memory per `binding`; the output buffer must start zeroed.
/// Throws ShapeError / ConfigError.
void emit_layer(sim::Builder& b, const LayerSpec& layer, const LayerParams& params, Variant variant,
                const PrecisionConfig& cfg, const LayerBinding& binding, const Epilogue& epi);

/// A self-contained program for a single layer with its input preloaded.
struct LayerProgram {
  sim::Program program;
  LayerBinding binding;
};

/// Activation tensors use cfg.activation_bits lanes in the packed variant;
/// pools keep their input width, and epi.raw selects int32 output. Eligible
/// single-channel convs get a row-lane input.
LayerProgram build_layer_program(const LayerSpec& layer, const LayerParams& params, Variant variant,
                                 const PrecisionConfig& cfg, const Epilogue& epi,
                                 std::span<const std::int32_t> input,
                                 std::span<const std::int32_t> rhs = {});

std::vector<std::int32_t> read_output(const LayerProgram& lp, const sim::MachineState& state);

LayerProgram gen_conv2d_baseline(const LayerSpec& layer, const LayerParams& params, const Epilogue& epi,
                                 std::span<const std::int32_t> input);
LayerProgram gen_conv2d_packed(const LayerSpec& layer, const LayerParams& params, const PrecisionConfig& cfg,
                               const Epilogue& epi, std::span<const std::int32_t> input);
LayerProgram gen_depthwise(const LayerSpec& layer, const LayerParams& params, Variant variant,
                           const PrecisionConfig& cfg, const Epilogue& epi,
                           std::span<const std::int32_t> input);
LayerProgram gen_dense(const LayerSpec& layer, const LayerParams& params, Variant variant,
                       const PrecisionConfig& cfg, const Epilogue& epi, std::span<const std::int32_t> input);
LayerProgram gen_pool(const LayerSpec& layer, Variant variant, const PrecisionConfig& cfg,
                      std::span<const std::int32_t> input);
LayerProgram gen_residual(const LayerSpec& layer, const LayerParams& params, Variant variant,
                          const PrecisionConfig& cfg, const Epilogue& epi,
                          std::span<const std::int32_t> lhs, std::span<const std::int32_t> rhs);

}  // namespace marvin::kernels
