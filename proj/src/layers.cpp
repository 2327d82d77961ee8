#include <algorithm>
#include <cmath>

#include "marvin/datapath.hpp"
#include "marvin/error.hpp"
#include "marvin/kernels.hpp"
#include "marvin/layers_internal.hpp"

namespace marvin::kernels {

namespace {

[[noreturn]] void shape_error(const std::string& msg) { throw Error(ErrorCode::ShapeError, msg); }

std::uint32_t wrap_mul(std::int32_t a, std::int32_t b) {
  return static_cast<std::uint32_t>(a) * static_cast<std::uint32_t>(b);
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::DepthwiseConv2d: return "depthwise";
    case LayerKind::Dense: return "dense";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::ResidualAdd: return "residual";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  for (LayerKind k : {LayerKind::Conv2d, LayerKind::DepthwiseConv2d, LayerKind::Dense,
                      LayerKind::MaxPool, LayerKind::AvgPool, LayerKind::ResidualAdd})
    if (to_string(k) == s) return k;
  throw Error(ErrorCode::ParseError, "unknown layer kind '" + s + "'");
}

bool LayerSpec::has_weights() const {
  return kind == LayerKind::Conv2d || kind == LayerKind::Dense || kind == LayerKind::DepthwiseConv2d;
}

std::size_t LayerSpec::weight_count() const {
  switch (kind) {
    case LayerKind::Conv2d:
    case LayerKind::Dense:
      return static_cast<std::size_t>(out_c) * in_c * kernel_h * kernel_w;
    case LayerKind::DepthwiseConv2d:
      return static_cast<std::size_t>(in_c) * kernel_h * kernel_w;
    default:
      return 0;
  }
}

std::uint64_t LayerSpec::mac_count() const {
  const std::uint64_t window = static_cast<std::uint64_t>(kernel_h) * kernel_w;
  const std::uint64_t pixels = static_cast<std::uint64_t>(out_h()) * out_w();
  switch (kind) {
    case LayerKind::Conv2d:
    case LayerKind::Dense:
      return static_cast<std::uint64_t>(out_c) * pixels * in_c * window;
    case LayerKind::DepthwiseConv2d:
      return static_cast<std::uint64_t>(in_c) * pixels * window;
    default:
      return 0;
  }
}

void LayerSpec::validate() const {
  const std::string name = to_string(kind);
  if (in_c < 1 || out_c < 1 || in_h < 1 || in_w < 1 || kernel_h < 1 || kernel_w < 1 || stride < 1 || pad < 0)
    shape_error(name + ": dimensions must be positive");
  if (pad >= kernel_h || pad >= kernel_w) shape_error(name + ": padding must be smaller than the kernel");
  const int span_h = in_h + 2 * pad - kernel_h;
  const int span_w = in_w + 2 * pad - kernel_w;
  if (span_h < 0 || span_w < 0) shape_error(name + ": kernel larger than padded input");
  if (span_h % stride != 0 || span_w % stride != 0)
    shape_error(name + ": (H + 2*pad - K) must be divisible by the stride");
  switch (kind) {
    case LayerKind::Dense:
      if (kernel_h != in_h || kernel_w != in_w || pad != 0 || stride != 1)
        shape_error("dense: kernel must cover the whole input without padding");
      break;
    case LayerKind::ResidualAdd:
      if (kernel_h != 1 || kernel_w != 1 || pad != 0 || stride != 1)
        shape_error("residual: kernel must be 1x1 with unit stride");
      [[fallthrough]];
    case LayerKind::DepthwiseConv2d:
    case LayerKind::MaxPool:
    case LayerKind::AvgPool:
      if (out_c != in_c) shape_error(name + ": output channels must equal input channels");
      break;
    case LayerKind::Conv2d:
      break;
  }
}

LayerSpec conv2d(int in_c, int out_c, int h, int w, int k, int stride, int pad, Activation act) {
  return {LayerKind::Conv2d, in_c, out_c, h, w, k, k, stride, pad, act};
}

LayerSpec depthwise(int c, int h, int w, int k, int stride, int pad, Activation act) {
  return {LayerKind::DepthwiseConv2d, c, c, h, w, k, k, stride, pad, act};
}

LayerSpec dense(int in_c, int in_h, int in_w, int out_c, Activation act) {
  return {LayerKind::Dense, in_c, out_c, in_h, in_w, in_h, in_w, 1, 0, act};
}

LayerSpec maxpool(int c, int h, int w, int k, int stride) {
  return {LayerKind::MaxPool, c, c, h, w, k, k, stride, 0, Activation::None};
}

LayerSpec avgpool(int c, int h, int w, int k, int stride) {
  return {LayerKind::AvgPool, c, c, h, w, k, k, stride, 0, Activation::None};
}

LayerSpec residual(int c, int h, int w, Activation act) {
  return {LayerKind::ResidualAdd, c, c, h, w, 1, 1, 1, 0, act};
}

int LayerParams::active_channels(int out_c) const {
  int n = 0;
  for (int c = 0; c < out_c; ++c) n += is_pruned(c) ? 0 : 1;
  return n;
}

void validate_params(const LayerSpec& layer, const LayerParams& p) {
  layer.validate();
  auto cfg_error = [](const std::string& m) { throw Error(ErrorCode::ConfigError, m); };
  if (p.shift < 0 || p.shift > 31) cfg_error("requantization shift must be in [0, 31]");
  if (layer.kind == LayerKind::ResidualAdd &&
      (p.lhs_shift < 0 || p.lhs_shift > 31 || p.rhs_shift < 0 || p.rhs_shift > 31))
    cfg_error("residual alignment shifts must be in [0, 31]");
  if (!layer.has_weights()) return;
  if (p.weights.size() != layer.weight_count())
    shape_error(to_string(layer.kind) + ": expected " + std::to_string(layer.weight_count()) + " weights, got " +
                std::to_string(p.weights.size()));
  if (p.bias.size() != static_cast<std::size_t>(layer.out_c))
    shape_error(to_string(layer.kind) + ": expected one bias per output channel");
  if (!p.pruned.empty() && p.pruned.size() != static_cast<std::size_t>(layer.out_c))
    shape_error(to_string(layer.kind) + ": pruning mask must have one entry per output channel");
  const std::size_t per_channel = layer.weight_count() / static_cast<std::size_t>(layer.out_c);
  for (int c = 0; c < layer.out_c; ++c) {
    if (!p.is_pruned(c)) continue;
    if (p.bias[c] != 0) cfg_error("pruned channel " + std::to_string(c) + " has a nonzero bias");
    for (std::size_t i = 0; i < per_channel; ++i)
      if (p.weights[c * per_channel + i] != 0)
        cfg_error("pruned channel " + std::to_string(c) + " has nonzero weights");
  }
}

std::int32_t requantize(std::int32_t acc, int shift, int bits, bool relu) {
  std::int64_t q = acc;
  if (shift > 0) {
    const std::int64_t mag = q < 0 ? -q : q;
    const std::int64_t r = (mag + (std::int64_t{1} << (shift - 1))) >> shift;
    q = q < 0 ? -r : r;
  }
  if (relu && q < 0) q = 0;
  const std::int64_t hi = (std::int64_t{1} << bits) - 1;
  return static_cast<std::int32_t>(std::clamp<std::int64_t>(q, 0, hi));
}

std::int32_t avgpool_multiplier(int window) {
  return static_cast<std::int32_t>(std::lround(65536.0 / window));
}

std::vector<std::int32_t> reference_layer(const LayerSpec& layer, const LayerParams& params,
                                          const Epilogue& epi, std::span<const std::int32_t> input,
                                          std::span<const std::int32_t> rhs) {
  validate_params(layer, params);
  if (input.size() != layer.input_size()) shape_error("input has the wrong size");
  const int ci_n = layer.in_c, h = layer.in_h, w = layer.in_w;
  const int ho_n = layer.out_h(), wo_n = layer.out_w();
  const int kh_n = layer.kernel_h, kw_n = layer.kernel_w, s = layer.stride, pad = layer.pad;
  const bool relu = layer.activation == Activation::ReLU;
  std::vector<std::int32_t> out(layer.output_size(), 0);
  auto at = [&](std::span<const std::int32_t> t, int c, int y, int x) -> std::int32_t {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0;
    return t[(static_cast<std::size_t>(c) * h + y) * w + x];
  };
  auto finish = [&](std::uint32_t acc) {
    const auto v = static_cast<std::int32_t>(acc);
    return epi.raw ? v : requantize(v, params.shift, epi.out_bits, relu);
  };
  auto idx = [&](int c, int y, int x) { return (static_cast<std::size_t>(c) * ho_n + y) * wo_n + x; };

  switch (layer.kind) {
    case LayerKind::Conv2d:
    case LayerKind::Dense:
      for (int co = 0; co < layer.out_c; ++co)
        for (int oy = 0; oy < ho_n; ++oy)
          for (int ox = 0; ox < wo_n; ++ox) {
            std::uint32_t acc = static_cast<std::uint32_t>(params.bias[co]);
            for (int ci = 0; ci < ci_n; ++ci)
              for (int ky = 0; ky < kh_n; ++ky)
                for (int kx = 0; kx < kw_n; ++kx) {
                  const std::int32_t wv =
                      params.weights[((static_cast<std::size_t>(co) * ci_n + ci) * kh_n + ky) * kw_n + kx];
                  acc += wrap_mul(wv, at(input, ci, oy * s - pad + ky, ox * s - pad + kx));
                }
            out[idx(co, oy, ox)] = finish(acc);
          }
      break;
    case LayerKind::DepthwiseConv2d:
      for (int c = 0; c < ci_n; ++c)
        for (int oy = 0; oy < ho_n; ++oy)
          for (int ox = 0; ox < wo_n; ++ox) {
            std::uint32_t acc = static_cast<std::uint32_t>(params.bias[c]);
            for (int ky = 0; ky < kh_n; ++ky)
              for (int kx = 0; kx < kw_n; ++kx)
                acc += wrap_mul(params.weights[(static_cast<std::size_t>(c) * kh_n + ky) * kw_n + kx],
                                at(input, c, oy * s - pad + ky, ox * s - pad + kx));
            out[idx(c, oy, ox)] = finish(acc);
          }
      break;
    case LayerKind::MaxPool:
    case LayerKind::AvgPool: {
      const int window = kh_n * kw_n;
      const std::int64_t m = avgpool_multiplier(window);
      const std::int64_t hi = (std::int64_t{1} << epi.out_bits) - 1;
      for (int c = 0; c < ci_n; ++c)
        for (int oy = 0; oy < ho_n; ++oy)
          for (int ox = 0; ox < wo_n; ++ox) {
            std::int64_t best = 0;
            std::int64_t sum = 0;
            for (int ky = 0; ky < kh_n; ++ky)
              for (int kx = 0; kx < kw_n; ++kx) {
                const std::int32_t v = at(input, c, oy * s - pad + ky, ox * s - pad + kx);
                best = std::max<std::int64_t>(best, v);
                sum += v;
              }
            std::int64_t r = best;
            if (layer.kind == LayerKind::AvgPool) r = std::min(hi, (sum * m + 32768) >> 16);
            out[idx(c, oy, ox)] = static_cast<std::int32_t>(r);
          }
      break;
    }
    case LayerKind::ResidualAdd:
      if (rhs.size() != layer.input_size()) shape_error("residual: operands differ in size");
      for (std::size_t i = 0; i < out.size(); ++i) {
        const std::uint32_t acc = (static_cast<std::uint32_t>(input[i]) << params.lhs_shift) +
                                  (static_cast<std::uint32_t>(rhs[i]) << params.rhs_shift);
        out[i] = finish(acc);
      }
      break;
  }
  return out;
}

std::size_t TensorLayout::word_count() const {
  if (variant == Variant::Baseline) return static_cast<std::size_t>(c) * hp() * wp();
  return static_cast<std::size_t>(hp()) * wp() * words_per_pixel;
}

std::uint32_t TensorLayout::scalar_addr(int ch, int y, int x) const {
  return base + static_cast<std::uint32_t>(((static_cast<std::size_t>(ch) * hp() + y) * wp() + x) * 4);
}

std::uint32_t TensorLayout::pixel_addr(int y, int x) const {
  return base + static_cast<std::uint32_t>((static_cast<std::size_t>(y) * wp() + x) * words_per_pixel * 4);
}

namespace {

void check_layout(const TensorLayout& l) {
  if (l.c < 1 || l.h < 1 || l.w < 1 || l.pad < 0) shape_error("tensor layout has bad dimensions");
  if (l.variant == Variant::Packed) {
    if (l.bits != 32 && !PrecisionConfig::valid_width(l.bits))
      throw Error(ErrorCode::ConfigError, "tensor lane width " + std::to_string(l.bits));
    if (l.words_per_pixel * l.lanes() < l.c) shape_error("packed tensor: too few words per pixel");
  }
  if (l.row_lanes && (l.variant != Variant::Packed || l.c != 1 || l.bits == 32 || l.words_per_pixel != 1))
    shape_error("row-lane layout needs a packed single-channel tensor, one word per pixel");
}

}  // namespace

std::vector<std::uint32_t> encode_tensor(const TensorLayout& l, std::span<const std::int32_t> chw) {
  check_layout(l);
  if (chw.size() != static_cast<std::size_t>(l.c) * l.h * l.w) shape_error("tensor has the wrong size");
  std::vector<std::uint32_t> words(l.word_count(), 0);
  for (int ch = 0; ch < l.c; ++ch)
    for (int y = 0; y < l.h; ++y)
      for (int x = 0; x < l.w; ++x) {
        const std::int32_t v = chw[(static_cast<std::size_t>(ch) * l.h + y) * l.w + x];
        if (l.variant == Variant::Baseline) {
          words[(l.scalar_addr(ch, y + l.pad, x + l.pad) - l.base) / 4] = static_cast<std::uint32_t>(v);
          continue;
        }
        const std::size_t pix = (l.pixel_addr(y + l.pad, x + l.pad) - l.base) / 4;
        if (l.bits == 32) {
          words[pix + ch] = static_cast<std::uint32_t>(v);
          continue;
        }
        if (v < 0 || v >= (1 << l.bits))
          throw Error(ErrorCode::LaneOverflow,
                      std::to_string(v) + " does not fit an unsigned " + std::to_string(l.bits) + "-bit lane");
        if (l.row_lanes) {
          // Every pixel word up to lanes-1 to the left sees this value.
          for (int j = 0; j < l.lanes() && j <= x + l.pad; ++j)
            words[pix - static_cast<std::size_t>(j)] |= static_cast<std::uint32_t>(v) << (j * l.bits);
          continue;
        }
        words[pix + ch / l.lanes()] |= static_cast<std::uint32_t>(v) << ((ch % l.lanes()) * l.bits);
      }
  return words;
}

std::vector<std::int32_t> decode_tensor(const TensorLayout& l, std::span<const std::uint32_t> words) {
  check_layout(l);
  if (words.size() != l.word_count()) shape_error("buffer has the wrong size");
  std::vector<std::int32_t> out(static_cast<std::size_t>(l.c) * l.h * l.w);
  for (int ch = 0; ch < l.c; ++ch)
    for (int y = 0; y < l.h; ++y)
      for (int x = 0; x < l.w; ++x) {
        std::int32_t v;
        if (l.variant == Variant::Baseline) {
          v = static_cast<std::int32_t>(words[(l.scalar_addr(ch, y + l.pad, x + l.pad) - l.base) / 4]);
        } else {
          const std::size_t pix = (l.pixel_addr(y + l.pad, x + l.pad) - l.base) / 4;
          if (l.bits == 32)
            v = static_cast<std::int32_t>(words[pix + ch]);
          else
            v = datapath::extract_lane(words[pix + ch / l.lanes()], ch % l.lanes(), l.bits, false);
        }
        out[(static_cast<std::size_t>(ch) * l.h + y) * l.w + x] = v;
      }
  return out;
}

PackedGeometry packed_geometry(const PrecisionConfig& cfg) {
  PackedGeometry g;
  g.la = cfg.activation_lanes();
  g.lw = cfg.weight_lanes();
  g.p = cfg.products();
  g.group = std::max(g.la, g.lw);
  g.act_words = g.group / g.la;
  g.weight_words = g.group / g.lw;
  return g;
}

bool row_lane_eligible(const LayerSpec& layer, const PrecisionConfig& cfg) {
  return layer.kind == LayerKind::Conv2d && layer.in_c == 1 && layer.kernel_w > 1 &&
         layer.kernel_w <= cfg.products() && cfg.valid();
}

int packed_input_words(const LayerSpec& layer, const PrecisionConfig& cfg, int in_bits) {
  const int lanes = 32 / in_bits;
  switch (layer.kind) {
    case LayerKind::Conv2d:
    case LayerKind::Dense: {
      const PackedGeometry g = packed_geometry(cfg);
      const int groups = (layer.in_c + g.group - 1) / g.group;
      return groups * g.act_words;
    }
    default:
      return (layer.in_c + lanes - 1) / lanes;
  }
}

std::vector<std::vector<int>> channel_blocks(const LayerParams& params, int channels, bool aligned) {
  std::vector<std::vector<int>> blocks;
  if (aligned) {
    for (int base = 0; base < channels; base += 4) {
      std::vector<int> blk;
      for (int c = base; c < std::min(channels, base + 4); ++c)
        if (!params.is_pruned(c)) blk.push_back(c);
      if (!blk.empty()) blocks.push_back(std::move(blk));
    }
    return blocks;
  }
  std::vector<int> cur;
  for (int c = 0; c < channels; ++c) {
    if (params.is_pruned(c)) continue;
    cur.push_back(c);
    if (cur.size() == 4) {
      blocks.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) blocks.push_back(std::move(cur));
  return blocks;
}

WeightImage build_weight_image(const LayerSpec& layer, const LayerParams& params, Variant variant,
                               const PrecisionConfig& cfg, bool row_lanes) {
  validate_params(layer, params);
  WeightImage img;
  if (!layer.has_weights()) return img;
  for (std::int32_t b : params.bias) img.bias.push_back(static_cast<std::uint32_t>(b));
  if (variant == Variant::Baseline) {
    for (std::int32_t w : params.weights) img.weights.push_back(static_cast<std::uint32_t>(w));
    return img;
  }
  if (!cfg.valid()) throw Error(ErrorCode::ConfigError, "invalid config " + cfg.name());
  const int wb = cfg.weight_bits;
  const std::int32_t lo = -(1 << (wb - 1)), hi = (1 << (wb - 1)) - 1;
  const std::uint32_t mask = (1u << wb) - 1u;
  auto lane_bits = [&](std::int32_t v) {
    if (v < lo || v > hi)
      throw Error(ErrorCode::LaneOverflow,
                  "weight " + std::to_string(v) + " does not fit " + std::to_string(wb) + " bits");
    return static_cast<std::uint32_t>(v) & mask;
  };
  const int kh_n = layer.kernel_h, kw_n = layer.kernel_w;
  if (layer.kind == LayerKind::DepthwiseConv2d) {
    const int p = cfg.products();
    for (const auto& blk : channel_blocks(params, layer.in_c, true))
      for (int ky = 0; ky < kh_n; ++ky)
        for (int kx = 0; kx < kw_n; ++kx)
          for (int c : blk) {
            const std::int32_t v = params.weights[(static_cast<std::size_t>(c) * kh_n + ky) * kw_n + kx];
            img.weights.push_back(lane_bits(v) << ((c % p) * wb));
          }
    return img;
  }
  if (row_lanes) {
    if (!row_lane_eligible(layer, cfg)) throw Error(ErrorCode::ConfigError, "layer cannot use row lanes");
    for (const auto& blk : channel_blocks(params, layer.out_c, false))
      for (int ky = 0; ky < kh_n; ++ky)
        for (int co : blk) {
          std::uint32_t word = 0;
          for (int kx = 0; kx < kw_n; ++kx)
            word |= lane_bits(params.weights[(static_cast<std::size_t>(co) * kh_n + ky) * kw_n + kx]) << (kx * wb);
          img.weights.push_back(word);
        }
    return img;
  }
  const PackedGeometry g = packed_geometry(cfg);
  const int ci_n = layer.in_c;
  const int groups = (ci_n + g.group - 1) / g.group;
  for (const auto& blk : channel_blocks(params, layer.out_c, false))
    for (int ky = 0; ky < kh_n; ++ky)
      for (int kx = 0; kx < kw_n; ++kx)
        for (int gi = 0; gi < groups; ++gi)
          for (int co : blk)
            for (int u = 0; u < g.weight_words; ++u) {
              std::uint32_t word = 0;
              for (int lane = 0; lane < g.lw; ++lane) {
                const int ci = gi * g.group + u * g.lw + lane;
                if (ci >= ci_n) break;
                const std::int32_t v =
                    params.weights[((static_cast<std::size_t>(co) * ci_n + ci) * kh_n + ky) * kw_n + kx];
                word |= lane_bits(v) << (lane * wb);
              }
              img.weights.push_back(word);
            }
  return img;
}

}  // namespace marvin::kernels
